use crate::error::{PumaError, Result};
use crate::numeric::Tensor2;
use crate::scalar::Scalar;

/// Bias-corrected Adam over a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor2<T>>,
    v: Vec<Tensor2<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            lr: T::lit(lr),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(eps),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor2<T>], &[Tensor2<T>]) {
        (&self.m, &self.v)
    }

    /// One update. Moment buffers are created on the first call and pinned to
    /// the shapes seen then.
    pub fn step(&mut self, params: &mut [&mut Tensor2<T>], grads: &[Tensor2<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(PumaError::dims(
                "adam_step",
                format!("{} params", params.len()),
                format!("{} grads", grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(PumaError::dims(
                "adam_step",
                format!("{} moment slots", self.m.len()),
                format!("{} params", params.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(PumaError::dims(
                    "adam_step",
                    format!("param {i} {:?}", p.shape()),
                    format!("grad {:?}, moment {:?}", g.shape(), self.m[i].shape()),
                ));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                md[j] = self.beta1 * md[j] + (one - self.beta1) * gj;
                vd[j] = self.beta2 * vd[j] + (one - self.beta2) * gj * gj;
                let m_hat = md[j] / bc1;
                let v_hat = vd[j] / bc2;
                pd[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
