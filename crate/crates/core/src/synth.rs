//! Planted-partition benchmark graphs with sub-communities inside each class.
//!
//! Node `i` belongs to class `i mod C` and sub-community `(i / C) mod m`.
//! Edges are sampled independently with probability `p_in` inside a
//! sub-community, `p_mid` between sub-communities of one class and `p_out`
//! across classes. Features are a class mean, plus a sub-community offset,
//! plus isotropic Gaussian noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{DreamError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    /// Sub-communities per class.
    pub subcommunities: usize,
    pub p_in: f64,
    pub p_mid: f64,
    pub p_out: f64,
    pub d_in: usize,
    /// Norm of each class mean; class means are orthogonal.
    pub sep: f64,
    /// Norm of each sub-community offset, orthogonal to the class means.
    pub sub_sep: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub feat_noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// 600 nodes in 3 classes of 2 sub-communities, 16 features.
    fn default() -> Self {
        Self {
            n: 600,
            classes: 3,
            subcommunities: 2,
            p_in: 0.05,
            p_mid: 0.01,
            p_out: 0.002,
            d_in: 16,
            sep: 3.0,
            sub_sep: 1.0,
            feat_noise: 0.25,
            train_frac: 0.1,
            val_frac: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DreamError::Config(msg));
        if self.classes < 1 || self.subcommunities < 1 || self.d_in < 1 {
            return fail("classes, subcommunities and d_in must be at least 1".into());
        }
        if self.n < self.classes * self.subcommunities {
            return fail(format!(
                "{} nodes cannot fill {} blocks",
                self.n,
                self.classes * self.subcommunities
            ));
        }
        for (name, p) in [("p_in", self.p_in), ("p_mid", self.p_mid), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, v) in [("sep", self.sep), ("sub_sep", self.sub_sep), ("feat_noise", self.feat_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.train_frac >= 0.0 && self.val_frac >= 0.0 && self.train_frac + self.val_frac <= 1.0) {
            return fail("train_frac + val_frac must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn class_of(&self, node: usize) -> usize {
        node % self.classes
    }

    pub fn subcommunity_of(&self, node: usize) -> usize {
        (node / self.classes) % self.subcommunities
    }

    /// Block id `class * m + subcommunity`.
    pub fn block_of(&self, node: usize) -> usize {
        self.class_of(node) * self.subcommunities + self.subcommunity_of(node)
    }

    pub fn edge_probability(&self, u: usize, v: usize) -> f64 {
        if self.block_of(u) == self.block_of(v) {
            self.p_in
        } else if self.class_of(u) == self.class_of(v) {
            self.p_mid
        } else {
            self.p_out
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.p_in == 0.0 && spec.p_mid == 0.0 && spec.p_out == 0.0 {
        log::warn!("all edge probabilities are zero; the graph will have no edges");
    }
    if !(spec.p_in >= spec.p_mid && spec.p_mid >= spec.p_out) {
        log::warn!("edge probabilities are not ordered p_in >= p_mid >= p_out");
    }
    if spec.d_in < spec.classes + spec.classes * spec.subcommunities {
        log::warn!("d_in = {} is too small for orthogonal class and sub-community directions", spec.d_in);
    }
    let n = spec.n;

    let mut rng = stream(spec.seed, Stream::SynthEdges);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(spec.edge_probability(u, v)) {
                edges.push((u, v));
            }
        }
    }

    let mut rng = stream(spec.seed, Stream::SynthFeatures);
    let noise = Normal::new(0.0, spec.feat_noise).map_err(|e| DreamError::Config(e.to_string()))?;
    let mut features = Matrix::zeros(n, spec.d_in);
    for i in 0..n {
        let c = spec.class_of(i);
        let sub_dir = (spec.classes + spec.block_of(i)) % spec.d_in;
        let row = features.row_mut(i);
        row[c % spec.d_in] += spec.sep;
        row[sub_dir] += spec.sub_sep;
        for v in row.iter_mut() {
            if spec.feat_noise > 0.0 {
                *v += noise.sample(&mut rng);
            }
        }
    }

    let graph = Graph::build(&edges, features)?;
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(spec.class_of(i))).collect();

    let mut rng = stream(spec.seed, Stream::SynthMasks);
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for c in 0..spec.classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| spec.class_of(i) == c).collect();
        members.shuffle(&mut rng);
        let n_train = (spec.train_frac * members.len() as f64).round() as usize;
        let n_val = ((spec.val_frac * members.len() as f64).round() as usize).min(members.len() - n_train);
        for (k, &i) in members.iter().enumerate() {
            if k < n_train {
                train[i] = true;
            } else if k < n_train + n_val {
                val[i] = true;
            } else {
                test[i] = true;
            }
        }
    }
    Dataset::new(graph, labels, spec.classes, train, val, test)
}
