use crate::error::{DreamError, Result};
use crate::matrix::Matrix;

use super::{Gradients, ModelParams};

/// Bias-corrected Adam with moment buffers for both weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: [Matrix; 2],
    v: [Matrix; 2],
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: [zeros(&params.w1), zeros(&params.w2)],
            v: [zeros(&params.w1), zeros(&params.w2)],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> (&Matrix, &Matrix) {
        (&self.m[0], &self.m[1])
    }

    pub fn second_moments(&self) -> (&Matrix, &Matrix) {
        (&self.v[0], &self.v[1])
    }
}

/// Applies one Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for (name, p, g) in [("w1", &params.w1, &grads.w1), ("w2", &params.w2, &grads.w2)] {
        if p.shape() != g.shape() {
            return Err(DreamError::DimensionMismatch {
                context: "adam_step",
                expected: format!("{name} gradient {:?}", p.shape()),
                actual: format!("{:?}", g.shape()),
            });
        }
        if !g.is_finite() {
            return Err(DreamError::NonFiniteGradient { param: name });
        }
    }
    if state.m[0].shape() != params.w1.shape() || state.m[1].shape() != params.w2.shape() {
        return Err(DreamError::Invariant("Adam moments do not match parameter shapes".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    let targets = [
        (&mut params.w1, &grads.w1, 0usize),
        (&mut params.w2, &grads.w2, 1usize),
    ];
    for (p, g, k) in targets {
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (((p, &g), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
