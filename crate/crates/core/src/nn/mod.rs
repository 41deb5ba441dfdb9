//! Numerical core: tensors, recorded-operation reverse-mode gradients, and
//! the convolutional + bidirectional-LSTM recognizer.

mod graph;
mod kernels;
pub mod lstm;
pub mod model;
mod tensor;

use rand::Rng;
use thiserror::Error;

pub(crate) use kernels::axpy;
pub use graph::{Graph, Var};
pub use lstm::{bilstm, lstm_step, BilstmParams, GateParams, LstmParams};
pub use model::{features_to_sequence, sequence_to_features, Architecture, ModelParams};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("backward called on a graph with no recorded operations")]
    NoRecordedGraph,
    #[error("backward already ran on this graph")]
    DoubleBackward,
    #[error(transparent)]
    Ctc(#[from] crate::ctc::CtcError),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Cross-correlation of `x [N, Cin, H, W]` with `kernel [Cout, Cin, kH, kW]`
/// plus a per-output-channel bias.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let (x, k, b) = (g.input(x.clone()), g.input(kernel.clone()), g.input(bias.clone()));
    let y = g.conv2d(x, k, b, stride, padding)?;
    Ok(g.value(y).clone())
}

/// Max pooling over the two trailing axes of `[N, C, H, W]`.
pub fn maxpool2d(x: &Tensor, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.input(x.clone());
    let y = g.maxpool2d(x, window, stride)?;
    Ok(g.value(y).clone())
}

/// Tensor with entries uniform in `[-bound, bound)`, rounded to `f32`
/// precision so that checkpoints store them exactly.
pub(crate) fn uniform_tensor(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| f64::from(rng.gen_range(-bound..bound) as f32))
        .collect();
    Tensor::new(shape, values).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let [n, cin, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
        let [cout, _, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.values()[co];
                        for ci in 0..cin {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iy = (oy * stride + dy) as isize - pad as isize;
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.values()
                                        [((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                    let kv = k.values()[((co * cin + ci) * kh + dy) * kw + dx];
                                    acc += xv * kv;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, &Tensor::vector(vec![0.0]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_same_padding_shape() {
        let x = Tensor::zeros(vec![1, 1, 32, 128]);
        let k = Tensor::zeros(vec![4, 1, 3, 3]);
        let y = conv2d(&x, &k, &Tensor::zeros(vec![4]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 32, 128]);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(stride, pad, kh, kw) in &[(1, 0, 3, 3), (1, 1, 3, 3), (2, 1, 3, 2), (3, 2, 2, 4)] {
            let x = uniform_tensor(vec![2, 3, 7, 9], 1.0, &mut rng);
            let k = uniform_tensor(vec![4, 3, kh, kw], 1.0, &mut rng);
            let b = uniform_tensor(vec![4], 1.0, &mut rng);
            let y = conv2d(&x, &k, &b, stride, pad).unwrap();
            let oracle = conv_oracle(&x, &k, &b, stride, pad);
            assert_eq!(y.len(), oracle.len());
            let max = y
                .values()
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-10, "stride {stride} pad {pad}: {max}");
        }
    }

    #[test]
    fn conv_input_and_kernel_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = uniform_tensor(vec![1, 2, 5, 6], 1.0, &mut rng);
        let k = uniform_tensor(vec![3, 2, 3, 3], 1.0, &mut rng);
        let b = uniform_tensor(vec![3], 1.0, &mut rng);
        let w = uniform_tensor(vec![1, 3, 3, 3], 1.0, &mut rng); // stride 2, pad 1 -> 3x3
        let loss = |x: &Tensor, k: &Tensor| -> f64 {
            let y = conv2d(x, k, &b, 2, 1).unwrap();
            y.values().iter().zip(w.values()).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let (xv, kv, bv) = (g.param(x.clone()), g.param(k.clone()), g.param(b.clone()));
        let y = g.conv2d(xv, kv, bv, 2, 1).unwrap();
        let wv = g.input(w.clone());
        let prod = g.mul(y, wv).unwrap();
        let s = g.sum(prod);
        g.backward(s).unwrap();
        let eps = 1e-5;
        for (var, which) in [(xv, 0), (kv, 1)] {
            let base = if which == 0 { &x } else { &k };
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.values_mut()[i] += eps;
                let mut minus = base.clone();
                minus.values_mut()[i] -= eps;
                let fd = if which == 0 {
                    (loss(&plus, &k) - loss(&minus, &k)) / (2.0 * eps)
                } else {
                    (loss(&x, &plus) - loss(&x, &minus)) / (2.0 * eps)
                };
                assert!((fd - g.grad(var).unwrap()[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pooling_cases() {
        let c = Tensor::new(vec![1, 2, 4, 4], vec![0.7; 32]).unwrap();
        let p = maxpool2d(&c, (2, 2), (2, 2)).unwrap();
        assert_eq!(p.shape(), &[1, 2, 2, 2]);
        assert!(p.values().iter().all(|&v| v == 0.7));
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x, (2, 2), (2, 2)).unwrap().values(), &[4.0]);
        assert!(matches!(
            maxpool2d(&x, (3, 3), (1, 1)),
            Err(NnError::ShapeMismatch(_))
        ));
    }
}
