//! LSTM cell and the bidirectional layer built from two of them.
//!
//! Every gate reads the concatenation `[h_{t-1}, x_t]`:
//!
//! ```text
//! f_t = σ(W_f·[h, x] + b_f)         forget gate
//! i_t = σ(W_i·[h, x] + b_i)         input gate
//! C̃_t = tanh(W_c·[h, x] + b_c)      candidate
//! C_t = C_{t-1} * f_t + C̃_t * i_t
//! o_t = σ(W_o·[h, x] + b_o)         output gate
//! h_t = o_t * tanh(C_t)
//! ```
//!
//! The bidirectional layer runs one cell left to right and another right to
//! left, then mixes the two hidden states per frame with
//! `O_t = W_fwd·h_fwd(t) + W_bwd·h_bwd(t)` (identity output activation).

use rand::Rng;

use super::{uniform_tensor, Graph, NnError, Result, Tensor, Var};

/// Weight `[hidden, hidden + input]` and bias `[hidden]` of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub candidate: GateParams,
    pub output: GateParams,
    hidden_size: usize,
    input_size: usize,
}

impl LstmParams {
    pub fn new(
        forget: GateParams,
        input: GateParams,
        candidate: GateParams,
        output: GateParams,
    ) -> Result<Self> {
        let shape = forget.weight.shape().to_vec();
        let [hidden, width] = <[usize; 2]>::try_from(shape.as_slice()).map_err(|_| {
            NnError::ShapeMismatch(format!("gate weight must be 2-D, got {shape:?}"))
        })?;
        if width <= hidden {
            return Err(NnError::ShapeMismatch(format!(
                "gate weight {hidden}x{width} leaves no input columns"
            )));
        }
        for gate in [&forget, &input, &candidate, &output] {
            if gate.weight.shape() != shape.as_slice() || gate.bias.shape() != [hidden] {
                return Err(NnError::ShapeMismatch(format!(
                    "gate shapes {:?}/{:?} differ from {shape:?}/[{hidden}]",
                    gate.weight.shape(),
                    gate.bias.shape()
                )));
            }
        }
        Ok(Self {
            forget,
            input,
            candidate,
            output,
            hidden_size: hidden,
            input_size: width - hidden,
        })
    }

    /// Uniform init in `±1/√(hidden + input)`.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let fan_in = hidden_size + input_size;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut gate = || GateParams {
            weight: uniform_tensor(vec![hidden_size, fan_in], bound, rng),
            bias: uniform_tensor(vec![hidden_size], bound, rng),
        };
        let (f, i, c, o) = (gate(), gate(), gate(), gate());
        Self::new(f, i, c, o).expect("consistent shapes")
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let gate = || GateParams {
            weight: Tensor::zeros(vec![hidden_size, hidden_size + input_size]),
            bias: Tensor::zeros(vec![hidden_size]),
        };
        Self::new(gate(), gate(), gate(), gate()).expect("consistent shapes")
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub(crate) fn gates(&self) -> [&GateParams; 4] {
        [&self.forget, &self.input, &self.candidate, &self.output]
    }

    pub(crate) fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.forget,
            &mut self.input,
            &mut self.candidate,
            &mut self.output,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilstmParams {
    pub forward_cell: LstmParams,
    pub backward_cell: LstmParams,
    /// `[out, hidden]` applied to the left-to-right state.
    pub mix_forward: Tensor,
    /// `[out, hidden]` applied to the right-to-left state.
    pub mix_backward: Tensor,
}

impl BilstmParams {
    pub fn new(
        forward_cell: LstmParams,
        backward_cell: LstmParams,
        mix_forward: Tensor,
        mix_backward: Tensor,
    ) -> Result<Self> {
        let h = forward_cell.hidden_size;
        if backward_cell.hidden_size != h || backward_cell.input_size != forward_cell.input_size
        {
            return Err(NnError::ShapeMismatch(
                "forward and backward cells differ in size".into(),
            ));
        }
        let ok = |m: &Tensor| m.shape().len() == 2 && m.shape()[1] == h;
        if !ok(&mix_forward) || mix_forward.shape() != mix_backward.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "mixing matrices {:?}/{:?} must both be [out, {h}]",
                mix_forward.shape(),
                mix_backward.shape()
            )));
        }
        Ok(Self {
            forward_cell,
            backward_cell,
            mix_forward,
            mix_backward,
        })
    }

    pub fn init(input_size: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        let forward_cell = LstmParams::init(input_size, hidden, rng);
        let backward_cell = LstmParams::init(input_size, hidden, rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mix_forward = uniform_tensor(vec![out, hidden], bound, rng);
        let mix_backward = uniform_tensor(vec![out, hidden], bound, rng);
        Self::new(forward_cell, backward_cell, mix_forward, mix_backward).expect("consistent")
    }

    pub fn output_size(&self) -> usize {
        self.mix_forward.shape()[0]
    }
}

/// Graph handles for one registered cell.
pub(crate) struct LstmVars {
    weights: [Var; 4],
    biases: [Var; 4],
    hidden: usize,
}

impl LstmVars {
    pub(crate) fn register(g: &mut Graph, p: &LstmParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            }
        };
        let gates = p.gates();
        let weights = gates.map(|gp| leaf(&gp.weight));
        let biases = gates.map(|gp| leaf(&gp.bias));
        Self {
            weights,
            biases,
            hidden: p.hidden_size,
        }
    }

    pub(crate) fn weight_vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [*w, *b])
    }

    /// One time step on a batch: `x [N, in]`, `h, c [N, hidden]`.
    pub(crate) fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hx = g.concat(&[h, x])?;
        let pre = |g: &mut Graph, k: usize| g.linear(hx, self.weights[k], Some(self.biases[k]));
        let f = pre(g, 0)?;
        let f = g.sigmoid(f);
        let i = pre(g, 1)?;
        let i = g.sigmoid(i);
        let cand = pre(g, 2)?;
        let cand = g.tanh(cand);
        let kept = g.mul(c, f)?;
        let added = g.mul(cand, i)?;
        let c_next = g.add(kept, added)?;
        let o = pre(g, 3)?;
        let o = g.sigmoid(o);
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    fn zero_state(&self, g: &mut Graph, n: usize) -> (Var, Var) {
        (
            g.input(Tensor::zeros(vec![n, self.hidden])),
            g.input(Tensor::zeros(vec![n, self.hidden])),
        )
    }
}

pub(crate) struct BilstmVars {
    pub(crate) forward_cell: LstmVars,
    pub(crate) backward_cell: LstmVars,
    pub(crate) mix_forward: Var,
    pub(crate) mix_backward: Var,
}

impl BilstmVars {
    pub(crate) fn register(g: &mut Graph, p: &BilstmParams, trainable: bool) -> Self {
        let forward_cell = LstmVars::register(g, &p.forward_cell, trainable);
        let backward_cell = LstmVars::register(g, &p.backward_cell, trainable);
        let (mix_forward, mix_backward) = if trainable {
            (g.param(p.mix_forward.clone()), g.param(p.mix_backward.clone()))
        } else {
            (g.input(p.mix_forward.clone()), g.input(p.mix_backward.clone()))
        };
        Self {
            forward_cell,
            backward_cell,
            mix_forward,
            mix_backward,
        }
    }

    /// Runs both directions over frames `xs[t]` of shape `[N, in]` from a
    /// zero initial state and returns the mixed output per frame.
    pub(crate) fn run(&self, g: &mut Graph, xs: &[Var]) -> Result<Vec<Var>> {
        let first = xs.first().ok_or(NnError::EmptySequence)?;
        let n = g.shape(*first)[0];

        let (mut h, mut c) = self.forward_cell.zero_state(g, n);
        let mut fwd = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = self.forward_cell.step(g, x, h, c)?;
            fwd.push(h);
        }

        let (mut h, mut c) = self.backward_cell.zero_state(g, n);
        let mut bwd = vec![h; xs.len()];
        for (t, &x) in xs.iter().enumerate().rev() {
            (h, c) = self.backward_cell.step(g, x, h, c)?;
            bwd[t] = h;
        }

        fwd.into_iter()
            .zip(bwd)
            .map(|(hf, hb)| {
                let a = g.linear(hf, self.mix_forward, None)?;
                let b = g.linear(hb, self.mix_backward, None)?;
                g.add(a, b)
            })
            .collect()
    }
}

/// Single LSTM step on plain vectors; returns `(h_t, c_t)`.
pub fn lstm_step(
    x_t: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_t.len() != p.input_size || h_prev.len() != p.hidden_size || c_prev.len() != p.hidden_size
    {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_step: x {} h {} c {} for cell with input {} hidden {}",
            x_t.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_size,
            p.hidden_size
        )));
    }
    let mut g = Graph::new();
    let vars = LstmVars::register(&mut g, p, false);
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec()).expect("row");
    let x = g.input(row(x_t));
    let h = g.input(row(h_prev));
    let c = g.input(row(c_prev));
    let (h, c) = vars.step(&mut g, x, h, c)?;
    Ok((g.value(h).values().to_vec(), g.value(c).values().to_vec()))
}

/// Bidirectional pass over a sequence of input vectors.
pub fn bilstm(xs: &[Vec<f64>], p: &BilstmParams) -> Result<Vec<Vec<f64>>> {
    if xs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let mut g = Graph::new();
    let vars = BilstmVars::register(&mut g, p, false);
    let mut frames = Vec::with_capacity(xs.len());
    for x in xs {
        if x.len() != p.forward_cell.input_size {
            return Err(NnError::ShapeMismatch(format!(
                "bilstm frame of size {}, cell expects {}",
                x.len(),
                p.forward_cell.input_size
            )));
        }
        frames.push(g.input(Tensor::new(vec![1, x.len()], x.clone())?));
    }
    let out = vars.run(&mut g, &frames)?;
    Ok(out.iter().map(|&v| g.value(v).values().to_vec()).collect())
}
