//! Two-layer GCN with hand-derived gradients.
//!
//! The encoder is `Z = ReLU(Â X W1)` and the classifier `logits = Â Z W2`,
//! followed by a row softmax. Per-node reliability weights enter only the loss
//! and are treated as constants by [`backward`].

mod adam;
mod gradcheck;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradcheck, GradcheckReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DreamError, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Encoder weights `w1` (`d_in x d`) and classifier weights `w2` (`d x C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl ModelParams {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(DreamError::DimensionMismatch {
                context: "ModelParams::new",
                expected: format!("w2 with {} rows", w1.cols()),
                actual: format!("{:?}", w2.shape()),
            });
        }
        Ok(Self { w1, w2 })
    }

    pub fn zeros(d_in: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: Matrix::zeros(d_in, hidden),
            w2: Matrix::zeros(hidden, classes),
        }
    }

    /// Glorot-uniform initialization of both layers.
    pub fn glorot<R: Rng + ?Sized>(d_in: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            w1: glorot_uniform(d_in, hidden, rng),
            w2: glorot_uniform(hidden, classes, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }
}

fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches shape")
}

/// Gradients with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Gradients {
    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            w1: self.w1.add(&other.w1)?,
            w2: self.w2.add(&other.w2)?,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            w1: self.w1.scale(s),
            w2: self.w2.scale(s),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.w1.max_abs_diff(&other.w1)?.max(self.w2.max_abs_diff(&other.w2)?))
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `Â X`
    pub propagated_input: Matrix,
    /// `Â X W1` before the ReLU.
    pub hidden_pre: Matrix,
    /// Encoder output `Z`, the representation used for all similarities.
    pub z: Matrix,
    /// `Â Z`
    pub propagated_hidden: Matrix,
    pub logits: Matrix,
    /// Row-stochastic class probabilities.
    pub probs: Matrix,
}

impl ForwardCache {
    pub fn num_nodes(&self) -> usize {
        self.probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// Index of the largest probability in row `i`; ties go to the lowest class.
    pub fn predict(&self, i: usize) -> usize {
        argmax(self.probs.row(i))
    }
}

/// First index of the maximum value.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

pub fn forward(params: &ModelParams, adj: &NormalizedAdjacency, x: &Matrix) -> Result<ForwardCache> {
    if x.cols() != params.input_dim() {
        return Err(DreamError::DimensionMismatch {
            context: "forward",
            expected: format!("{} feature columns", params.input_dim()),
            actual: format!("{} feature columns", x.cols()),
        });
    }
    let propagated_input = adj.spmm(x)?;
    let hidden_pre = propagated_input.matmul(&params.w1)?;
    if !hidden_pre.is_finite() {
        return Err(DreamError::NumericOverflow { layer: "encoder" });
    }
    let z = hidden_pre.map(|v| v.max(0.0));
    let propagated_hidden = adj.spmm(&z)?;
    let logits = propagated_hidden.matmul(&params.w2)?;
    if !logits.is_finite() {
        return Err(DreamError::NumericOverflow { layer: "classifier" });
    }
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        propagated_input,
        hidden_pre,
        z,
        propagated_hidden,
        logits,
        probs,
    })
}

/// Row softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Labeled nodes with their (observed) labels and per-node loss weights.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub nodes: &'a [usize],
    pub labels: &'a [usize],
    pub weights: &'a [f64],
}

impl Supervision<'_> {
    fn validate(&self, num_nodes: usize, classes: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(DreamError::Data("no labeled nodes".into()));
        }
        if self.labels.len() != self.nodes.len() || self.weights.len() != self.nodes.len() {
            return Err(DreamError::DimensionMismatch {
                context: "Supervision",
                expected: format!("{} labels and weights", self.nodes.len()),
                actual: format!("{} labels, {} weights", self.labels.len(), self.weights.len()),
            });
        }
        for (&node, &label) in self.nodes.iter().zip(self.labels) {
            if node >= num_nodes {
                return Err(DreamError::OutOfRange {
                    what: "labeled node",
                    index: node,
                    limit: num_nodes,
                });
            }
            if label >= classes {
                return Err(DreamError::OutOfRange {
                    what: "label",
                    index: label,
                    limit: classes,
                });
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(DreamError::Data(format!("invalid loss weight {w}")));
        }
        Ok(())
    }

    /// Positions into the supervision arrays ordered by node index, so sums are
    /// independent of how the caller ordered the labeled set.
    fn order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&k| (self.nodes[k], k));
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// How many target probabilities were clamped to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// `(1/|S|) * sum_i w_i * -ln P[i, y_i]`.
pub fn weighted_ce_loss(cache: &ForwardCache, sup: Supervision<'_>) -> Result<LossReport> {
    sup.validate(cache.num_nodes(), cache.classes())?;
    let mut sum = 0.0;
    let mut clamped = 0;
    for k in sup.order() {
        let p = cache.probs[(sup.nodes[k], sup.labels[k])];
        let p = if p < PROB_FLOOR {
            clamped += 1;
            PROB_FLOOR
        } else {
            p
        };
        sum += sup.weights[k] * -p.ln();
    }
    Ok(LossReport {
        loss: sum / sup.nodes.len() as f64,
        clamped,
    })
}

/// Exact gradient of [`weighted_ce_loss`] with respect to both weight matrices.
pub fn backward(
    cache: &ForwardCache,
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    sup: Supervision<'_>,
) -> Result<Gradients> {
    let n = adj.num_nodes();
    let expect = [
        (cache.probs.shape(), (n, params.classes())),
        (cache.z.shape(), (n, params.hidden())),
        (cache.hidden_pre.shape(), (n, params.hidden())),
        (cache.propagated_input.shape(), (n, params.input_dim())),
        (cache.propagated_hidden.shape(), (n, params.hidden())),
    ];
    if let Some((got, want)) = expect.iter().find(|(got, want)| got != want) {
        return Err(DreamError::Invariant(format!(
            "stale forward cache: shape {got:?}, expected {want:?}"
        )));
    }
    sup.validate(n, params.classes())?;

    // dL/dlogits is (w_i / |S|) (p_i - onehot(y_i)) on labeled rows, zero elsewhere.
    let inv = 1.0 / sup.nodes.len() as f64;
    let mut d_logits = Matrix::zeros(n, params.classes());
    for k in sup.order() {
        let (i, y, w) = (sup.nodes[k], sup.labels[k], sup.weights[k]);
        let scale = w * inv;
        if scale == 0.0 {
            continue;
        }
        let row = d_logits.row_mut(i);
        for (c, (d, &p)) in row.iter_mut().zip(cache.probs.row(i)).enumerate() {
            *d += scale * (p - if c == y { 1.0 } else { 0.0 });
        }
    }

    let d_w2 = cache.propagated_hidden.t_matmul(&d_logits)?;
    let d_propagated_hidden = d_logits.matmul_t(&params.w2)?;
    // Â is symmetric, so Â^T = Â.
    let mut d_hidden = adj.spmm(&d_propagated_hidden)?;
    for (d, &pre) in d_hidden.as_mut_slice().iter_mut().zip(cache.hidden_pre.as_slice()) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }
    let d_w1 = cache.propagated_input.t_matmul(&d_hidden)?;
    Ok(Gradients { w1: d_w1, w2: d_w2 })
}
