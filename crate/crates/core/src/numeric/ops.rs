use serde::{Deserialize, Serialize};

use crate::error::{PumaError, Result};
use crate::numeric::tensor::{vec_mat_acc, Tensor2};
use crate::scalar::Scalar;

/// `x * w + b`, with `b` broadcast over the rows of `x`.
pub fn dense_affine<T: Scalar>(x: &Tensor2<T>, w: &Tensor2<T>, b: &[T]) -> Result<Tensor2<T>> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(PumaError::dims(
            "dense_affine",
            format!("x {}x{}, b {}", x.rows(), x.cols(), b.len()),
            format!("W {}x{}", w.rows(), w.cols()),
        ));
    }
    let mut out = Tensor2::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        row.copy_from_slice(b);
        vec_mat_acc(x.row(r), w, row);
    }
    Ok(out)
}

/// Intermediate values of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: T,
}

/// Layer normalization over one row, using the population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>> {
    if x.len() != gamma.len() || x.len() != beta.len() {
        return Err(PumaError::dims(
            "layer_norm",
            format!("x {}", x.len()),
            format!("gamma {}, beta {}", gamma.len(), beta.len()),
        ));
    }
    if !(eps > T::zero()) {
        return Err(PumaError::OutOfRange {
            what: "layer_norm eps",
            value: eps.as_f64(),
            limit: 0.0,
        });
    }
    Ok(layer_norm_fwd(x, gamma, beta, eps).0)
}

pub(crate) fn layer_norm_fwd<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, LnCache<T>) {
    let n = T::lit(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y = xhat.iter().zip(gamma.iter().zip(beta)).map(|(&h, (&g, &b))| h * g + b).collect();
    (y, LnCache { xhat, inv_std })
}

/// Gradient of layer norm w.r.t. its input, plus gamma/beta gradients.
pub(crate) fn layer_norm_bwd<T: Scalar>(grad_out: &[T], gamma: &[T], cache: &LnCache<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::lit(grad_out.len() as f64);
    let g: Vec<T> = grad_out.iter().zip(gamma).map(|(&d, &w)| d * w).collect();
    let mean_g = g.iter().copied().sum::<T>() / n;
    let mean_gx = g.iter().zip(&cache.xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
    let dx = g
        .iter()
        .zip(&cache.xhat)
        .map(|(&gi, &xi)| cache.inv_std * (gi - mean_g - xi * mean_gx))
        .collect();
    let dgamma = grad_out.iter().zip(&cache.xhat).map(|(&d, &x)| d * x).collect();
    let dbeta = grad_out.to_vec();
    (dx, dgamma, dbeta)
}

/// Elementwise nonlinearity of a scorer family or adapter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    Gelu,
    Relu,
    /// Identity; used to make chained-Jacobian checks closed form.
    Linear,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => {
                let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
                T::lit(0.5) * x * (T::one() + inner.tanh())
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Linear => x,
        }
    }

    /// Derivative at the pre-activation value `x`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Gelu => {
                let c = T::lit(GELU_C);
                let a = T::lit(GELU_A);
                let t = (c * (x + a * x * x * x)).tanh();
                let half = T::lit(0.5);
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }

    pub fn map<T: Scalar>(self, x: &Tensor2<T>) -> Tensor2<T> {
        x.map(|v| self.apply(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Gelu => 1,
            Activation::Relu => 2,
            Activation::Linear => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Tanh,
            1 => Activation::Gelu,
            2 => Activation::Relu,
            3 => Activation::Linear,
            _ => return None,
        })
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(PumaError::OutOfRange {
            what: "class label",
            value: label as f64,
            limit: logits.len() as f64,
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = logits.iter().map(|&z| (z - max).exp()).sum::<T>();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[label] -= T::one();
    Ok((loss.max(T::zero()), grad))
}
