//! The recognizer: two convolution blocks, column-wise sequence reading, a
//! bidirectional LSTM, a linear projection to class scores and a per-frame
//! log-softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::BilstmVars;
use super::{uniform_tensor, BilstmParams, Graph, NnError, Result, Tensor, Var};
use crate::ctc;

/// Layer sizes. Stored in checkpoints, so every field is plain data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel_size: usize,
    pub padding: usize,
    /// `[height, width]` window (and stride) of the first pooling layer.
    pub pool1: [usize; 2],
    pub pool2: [usize; 2],
    pub hidden_size: usize,
    /// Width of the mixed bidirectional output.
    pub mix_size: usize,
    /// Alphabet size plus one blank.
    pub num_classes: usize,
}

impl Architecture {
    /// 32x128 input, conv 1→16 / pool 2x2 / conv 16→32 / pool 2x1,
    /// 64 hidden units per direction; 64 frames.
    pub fn reference(num_classes: usize) -> Self {
        Self {
            input_height: 32,
            input_width: 128,
            conv1_channels: 16,
            conv2_channels: 32,
            kernel_size: 3,
            padding: 1,
            pool1: [2, 2],
            pool2: [2, 1],
            hidden_size: 64,
            mix_size: 64,
            num_classes,
        }
    }

    /// Same layout at toy size, for gradient checks and fast tests.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            input_height: 8,
            input_width: 16,
            conv1_channels: 2,
            conv2_channels: 3,
            kernel_size: 3,
            padding: 1,
            pool1: [2, 2],
            pool2: [2, 1],
            hidden_size: 4,
            mix_size: 4,
            num_classes,
        }
    }

    fn conv_out(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel_size;
        (h + 2 * self.padding + 1 - k, w + 2 * self.padding + 1 - k)
    }

    /// Spatial size of the final feature map.
    pub fn feature_map_size(&self) -> (usize, usize) {
        let (h, w) = self.conv_out(self.input_height, self.input_width);
        let (h, w) = (h / self.pool1[0], w / self.pool1[1]);
        let (h, w) = self.conv_out(h, w);
        (h / self.pool2[0], w / self.pool2[1])
    }

    /// Number of output frames `T`.
    pub fn frames(&self) -> usize {
        self.feature_map_size().1
    }

    /// Length of each sequence vector fed to the LSTM.
    pub fn feature_size(&self) -> usize {
        self.conv2_channels * self.feature_map_size().0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::ShapeMismatch(format!("architecture: {m}")));
        let sizes = [
            self.input_height,
            self.input_width,
            self.conv1_channels,
            self.conv2_channels,
            self.kernel_size,
            self.hidden_size,
            self.mix_size,
            self.pool1[0],
            self.pool1[1],
            self.pool2[0],
            self.pool2[1],
        ];
        if sizes.contains(&0) {
            return bad("zero-sized layer");
        }
        if self.num_classes < 2 {
            return bad("need at least one symbol plus blank");
        }
        if self.kernel_size > 2 * self.padding + 1 + self.input_height.min(self.input_width) {
            return bad("kernel larger than padded input");
        }
        let (h1, w1) = self.conv_out(self.input_height, self.input_width);
        if h1 < self.pool1[0] || w1 < self.pool1[1] {
            return bad("first pool larger than feature map");
        }
        let (h2, w2) = self.conv_out(h1 / self.pool1[0], w1 / self.pool1[1]);
        if h2 < self.pool2[0] || w2 < self.pool2[1] {
            return bad("second pool larger than feature map");
        }
        Ok(())
    }
}

/// All learnable tensors of the recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    architecture: Architecture,
    pub conv1_kernel: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernel: Tensor,
    pub conv2_bias: Tensor,
    pub bilstm: BilstmParams,
    pub projection_weight: Tensor,
    pub projection_bias: Tensor,
}

impl ModelParams {
    /// Seeded uniform init in `±1/√fan_in` per layer.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let a = &architecture;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = a.kernel_size * a.kernel_size;
        let b1 = 1.0 / (k2 as f64).sqrt();
        let conv1_kernel = uniform_tensor(vec![a.conv1_channels, 1, a.kernel_size, a.kernel_size], b1, &mut rng);
        let conv1_bias = uniform_tensor(vec![a.conv1_channels], b1, &mut rng);
        let b2 = 1.0 / ((a.conv1_channels * k2) as f64).sqrt();
        let conv2_kernel = uniform_tensor(
            vec![a.conv2_channels, a.conv1_channels, a.kernel_size, a.kernel_size],
            b2,
            &mut rng,
        );
        let conv2_bias = uniform_tensor(vec![a.conv2_channels], b2, &mut rng);
        let bilstm = BilstmParams::init(a.feature_size(), a.hidden_size, a.mix_size, &mut rng);
        let bp = 1.0 / (a.mix_size as f64).sqrt();
        let projection_weight = uniform_tensor(vec![a.num_classes, a.mix_size], bp, &mut rng);
        let projection_bias = uniform_tensor(vec![a.num_classes], bp, &mut rng);
        Ok(Self {
            architecture,
            conv1_kernel,
            conv1_bias,
            conv2_kernel,
            conv2_bias,
            bilstm,
            projection_weight,
            projection_bias,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    /// Parameter tensors with stable names, in a fixed order shared by
    /// [`Self::tensors_mut`], gradients, and checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("conv1.kernel".to_string(), &self.conv1_kernel),
            ("conv1.bias".to_string(), &self.conv1_bias),
            ("conv2.kernel".to_string(), &self.conv2_kernel),
            ("conv2.bias".to_string(), &self.conv2_bias),
        ];
        for (dir, cell) in [
            ("forward", &self.bilstm.forward_cell),
            ("backward", &self.bilstm.backward_cell),
        ] {
            for (gate, p) in ["forget", "input", "candidate", "output"].iter().zip(cell.gates()) {
                out.push((format!("lstm.{dir}.{gate}.weight"), &p.weight));
                out.push((format!("lstm.{dir}.{gate}.bias"), &p.bias));
            }
        }
        out.push(("lstm.mix_forward".into(), &self.bilstm.mix_forward));
        out.push(("lstm.mix_backward".into(), &self.bilstm.mix_backward));
        out.push(("projection.weight".into(), &self.projection_weight));
        out.push(("projection.bias".into(), &self.projection_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.conv1_kernel,
            &mut self.conv1_bias,
            &mut self.conv2_kernel,
            &mut self.conv2_bias,
        ];
        let BilstmParams {
            forward_cell,
            backward_cell,
            mix_forward,
            mix_backward,
        } = &mut self.bilstm;
        for cell in [forward_cell, backward_cell] {
            for p in cell.gates_mut() {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        out.push(mix_forward);
        out.push(mix_backward);
        out.push(&mut self.projection_weight);
        out.push(&mut self.projection_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds a model from tensors in [`Self::named_tensors`] order.
    pub fn from_tensors(architecture: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::init(architecture, 0)?;
        let slots = model.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "tensor shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    /// Snaps every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.values_mut()
                .iter_mut()
                .for_each(|v| *v = f64::from(*v as f32));
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let a = &self.architecture;
        match batch.shape() {
            &[n, 1, h, w] if n >= 1 && h == a.input_height && w == a.input_width => Ok(n),
            s => Err(NnError::ShapeMismatch(format!(
                "batch shape {s:?}, expected [N, 1, {}, {}]",
                a.input_height, a.input_width
            ))),
        }
    }

    /// Records the network on `g`; returns parameter handles (in
    /// [`Self::named_tensors`] order) and the `[N, T, C]` log-probabilities.
    fn build(&self, g: &mut Graph, batch: &Tensor, trainable: bool) -> Result<(Vec<Var>, Var)> {
        self.check_batch(batch)?;
        let a = &self.architecture;
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            }
        };
        let k1 = leaf(g, &self.conv1_kernel);
        let b1 = leaf(g, &self.conv1_bias);
        let k2 = leaf(g, &self.conv2_kernel);
        let b2 = leaf(g, &self.conv2_bias);
        let lstm = BilstmVars::register(g, &self.bilstm, trainable);
        let pw = leaf(g, &self.projection_weight);
        let pb = leaf(g, &self.projection_bias);

        let mut vars = vec![k1, b1, k2, b2];
        vars.extend(lstm.forward_cell.weight_vars());
        vars.extend(lstm.backward_cell.weight_vars());
        vars.extend([lstm.mix_forward, lstm.mix_backward, pw, pb]);

        let x = g.input(batch.clone());
        let y = g.conv2d(x, k1, b1, 1, a.padding)?;
        let y = g.relu(y);
        let y = g.maxpool2d(y, (a.pool1[0], a.pool1[1]), (a.pool1[0], a.pool1[1]))?;
        let y = g.conv2d(y, k2, b2, 1, a.padding)?;
        let y = g.relu(y);
        let fmap = g.maxpool2d(y, (a.pool2[0], a.pool2[1]), (a.pool2[0], a.pool2[1]))?;

        let frames = g.shape(fmap)[3];
        let seq = (0..frames)
            .map(|t| g.column(fmap, t))
            .collect::<Result<Vec<_>>>()?;
        let mixed = lstm.run(g, &seq)?;
        let scores = mixed
            .into_iter()
            .map(|m| g.linear(m, pw, Some(pb)))
            .collect::<Result<Vec<_>>>()?;
        let stacked = g.stack(&scores)?;
        let logp = g.log_softmax(stacked)?;
        Ok((vars, logp))
    }

    /// Per-frame log-probabilities `[N, T, C]` for a batch `[N, 1, H, W]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (_, logp) = self.build(&mut g, batch, false)?;
        Ok(g.value(logp).clone())
    }

    /// Mean CTC loss over the batch and its gradient for every parameter
    /// (aligned with [`Self::named_tensors`]).
    pub fn loss_and_grads(&self, batch: &Tensor, targets: &[Vec<usize>]) -> Result<(f64, Vec<Tensor>)> {
        let n = self.check_batch(batch)?;
        if targets.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "{} targets for a batch of {n}",
                targets.len()
            )));
        }
        let mut g = Graph::new();
        let (vars, logp) = self.build(&mut g, batch, true)?;
        let (loss, grad) = batch_ctc(g.value(logp), targets)?;
        let loss_var = g.external_scalar(logp, loss, grad)?;
        g.backward(loss_var)?;
        let grads = vars
            .iter()
            .map(|&v| {
                let shape = g.shape(v).to_vec();
                let values = g
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()]);
                Tensor::new(shape, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, grads))
    }

    /// Mean CTC loss without gradients.
    pub fn loss(&self, batch: &Tensor, targets: &[Vec<usize>]) -> Result<f64> {
        let logp = self.forward(batch)?;
        Ok(batch_ctc(&logp, targets)?.0)
    }
}

/// Mean of per-item CTC losses over `[N, T, C]`, with its gradient.
fn batch_ctc(logp: &Tensor, targets: &[Vec<usize>]) -> Result<(f64, Vec<f64>)> {
    let [n, t, c] = <[usize; 3]>::try_from(logp.shape())
        .map_err(|_| NnError::ShapeMismatch("log-probabilities must be 3-D".into()))?;
    let scale = 1.0 / n as f64;
    let mut grad = Vec::with_capacity(n * t * c);
    let mut total = 0.0;
    for (i, target) in targets.iter().enumerate() {
        let item = Tensor::new(vec![t, c], logp.values()[i * t * c..(i + 1) * t * c].to_vec())?;
        let r = ctc::ctc_loss(&item, target)?;
        total += r.loss;
        grad.extend(r.grad_logp.values().iter().map(|g| g * scale));
    }
    Ok((total * scale, grad))
}

/// Splits `[N, C, H, W]` into, per item, `W` column vectors of length
/// `C·H` (channel-major).
pub fn features_to_sequence(fmap: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    let [n, c, h, w] = <[usize; 4]>::try_from(fmap.shape())
        .map_err(|_| NnError::ShapeMismatch(format!("feature map {:?}", fmap.shape())))?;
    let v = fmap.values();
    Ok((0..n)
        .map(|ni| {
            (0..w)
                .map(|t| {
                    (0..c * h)
                        .map(|ch| v[((ni * c * h) + ch) * w + t])
                        .collect()
                })
                .collect()
        })
        .collect())
}

/// Inverse of [`features_to_sequence`] for a known channel count.
pub fn sequence_to_features(seqs: &[Vec<Vec<f64>>], channels: usize) -> Result<Tensor> {
    let n = seqs.len();
    let w = seqs.first().map_or(0, Vec::len);
    let ch = seqs.first().and_then(|s| s.first()).map_or(0, Vec::len);
    if n == 0 || w == 0 || channels == 0 || ch % channels != 0 {
        return Err(NnError::ShapeMismatch("cannot rebuild feature map".into()));
    }
    let h = ch / channels;
    let mut out = vec![0.0; n * ch * w];
    for (ni, seq) in seqs.iter().enumerate() {
        if seq.len() != w {
            return Err(NnError::ShapeMismatch("ragged sequences".into()));
        }
        for (t, col) in seq.iter().enumerate() {
            if col.len() != ch {
                return Err(NnError::ShapeMismatch("ragged columns".into()));
            }
            for (k, &v) in col.iter().enumerate() {
                out[(ni * ch + k) * w + t] = v;
            }
        }
    }
    Tensor::new(vec![n, channels, h, w], out)
}
