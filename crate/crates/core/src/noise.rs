//! Label corruption: uniform, pair and asymmetric (class-conditional) noise.
//!
//! All injectors visit the labeled nodes in ascending node order and draw from
//! the `Noise` stream of the given seed, so a `(labels, classes, spec)` triple
//! always yields the same [`LabelState`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DreamError, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Uniform,
    Pair,
    Asymmetric,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Uniform, NoiseKind::Pair, NoiseKind::Asymmetric];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Pair => "pair",
            NoiseKind::Asymmetric => "asymmetric",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = DreamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NoiseKind::Uniform),
            "pair" => Ok(NoiseKind::Pair),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            other => Err(DreamError::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(DreamError::Config(format!("noise rate {rate} outside [0, 1]")));
        }
        Ok(Self { kind, rate, seed })
    }

    /// Flip probability for a node whose clean label is `class`.
    pub fn flip_probability(&self, class: usize, classes: usize) -> f64 {
        match self.kind {
            NoiseKind::Uniform | NoiseKind::Pair => self.rate,
            NoiseKind::Asymmetric => {
                (self.rate * (class + 1) as f64 * 2.0 / (classes + 1) as f64).clamp(0.0, 1.0)
            }
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Uniform,
            rate: 0.3,
            seed: 0,
        }
    }
}

/// Clean and observed labels over a sorted set of labeled nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelState {
    pub nodes: Vec<usize>,
    pub clean: Vec<usize>,
    pub observed: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub classes: usize,
    pub spec: NoiseSpec,
}

impl LabelState {
    pub fn corrupted_fraction(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.corrupted.iter().filter(|&&c| c).count() as f64 / self.nodes.len() as f64
    }
}

/// Corrupts `labels` (aligned with `nodes`) according to `spec`.
pub fn corrupt(nodes: &[usize], labels: &[usize], classes: usize, spec: NoiseSpec) -> Result<LabelState> {
    if classes < 2 {
        return Err(DreamError::Unsupported(format!(
            "label noise needs at least 2 classes, got {classes}"
        )));
    }
    let spec = NoiseSpec::new(spec.kind, spec.rate, spec.seed)?;
    if nodes.len() != labels.len() {
        return Err(DreamError::DimensionMismatch {
            context: "corrupt",
            expected: format!("{} labels", nodes.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(DreamError::OutOfRange {
            what: "label",
            index: bad,
            limit: classes,
        });
    }

    let mut pairs: Vec<(usize, usize)> = nodes.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_unstable();
    if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(DreamError::Data("duplicate labeled node".into()));
    }

    let mut rng = stream(spec.seed, Stream::Noise);
    let mut observed = Vec::with_capacity(pairs.len());
    for &(_, y) in &pairs {
        let flip = rng.random::<f64>() < spec.flip_probability(y, classes);
        let y_obs = if !flip {
            y
        } else {
            match spec.kind {
                NoiseKind::Uniform => {
                    let r = rng.random_range(0..classes - 1);
                    if r >= y {
                        r + 1
                    } else {
                        r
                    }
                }
                NoiseKind::Pair | NoiseKind::Asymmetric => (y + 1) % classes,
            }
        };
        observed.push(y_obs);
    }

    let (nodes, clean): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let corrupted = clean.iter().zip(&observed).map(|(c, o)| c != o).collect();
    Ok(LabelState {
        nodes,
        clean,
        observed,
        corrupted,
        classes,
        spec,
    })
}

pub fn corrupt_uniform(nodes: &[usize], labels: &[usize], classes: usize, rate: f64, seed: u64) -> Result<LabelState> {
    corrupt(nodes, labels, classes, NoiseSpec::new(NoiseKind::Uniform, rate, seed)?)
}

pub fn corrupt_pair(nodes: &[usize], labels: &[usize], classes: usize, rate: f64, seed: u64) -> Result<LabelState> {
    corrupt(nodes, labels, classes, NoiseSpec::new(NoiseKind::Pair, rate, seed)?)
}

pub fn corrupt_asymmetric(nodes: &[usize], labels: &[usize], classes: usize, rate: f64, seed: u64) -> Result<LabelState> {
    corrupt(nodes, labels, classes, NoiseSpec::new(NoiseKind::Asymmetric, rate, seed)?)
}
