//! Dual-standard anchor selection and semantic homogeneity scoring.
//!
//! For every labeled target `t` two candidate pools are fixed before training:
//! the proximity pool (labeled nodes sharing `t`'s observed label) and the
//! topology pool (all nodes within `d_max` hops of `t`). Each epoch the
//! `k_P` / `k_T` candidates whose representations are most similar to `z_t`
//! become anchors, and the target's homogeneity is the mean rescaled cosine
//! similarity to the union of anchors raised to `1/τ`.
//!
//! The target itself never appears in its own pools.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DreamError, Result};
use crate::graph::Graph;
use crate::matrix::{dot, Matrix};

/// Precomputed candidate pools, aligned with `targets`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSets {
    pub d_max: u16,
    pub targets: Vec<usize>,
    /// Labeled nodes with the same observed label, ascending.
    pub proximity: Vec<Vec<usize>>,
    /// Nodes at hop distance `1..=d_max`, ascending.
    pub topology: Vec<Vec<usize>>,
}

impl CandidateSets {
    /// `targets` and `observed` are aligned: `observed[k]` is the label of `targets[k]`.
    pub fn build(g: &Graph, targets: &[usize], observed: &[usize], d_max: u16) -> Result<Self> {
        if targets.len() != observed.len() {
            return Err(DreamError::DimensionMismatch {
                context: "CandidateSets::build",
                expected: format!("{} labels", targets.len()),
                actual: format!("{} labels", observed.len()),
            });
        }
        if d_max == 0 {
            return Err(DreamError::Config("d_max must be at least 1".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= g.num_nodes()) {
            return Err(DreamError::OutOfRange {
                what: "target",
                index: t,
                limit: g.num_nodes(),
            });
        }

        let mut by_node: Vec<(usize, usize)> = targets.iter().copied().zip(observed.iter().copied()).collect();
        by_node.sort_unstable();
        let proximity = targets
            .iter()
            .zip(observed)
            .map(|(&t, &y)| {
                by_node
                    .iter()
                    .filter(|&&(i, yi)| yi == y && i != t)
                    .map(|&(i, _)| i)
                    .collect()
            })
            .collect();
        let topology = targets
            .par_iter()
            .map(|&t| g.bounded_geodesics(t, d_max).into_keys().collect())
            .collect();
        Ok(Self {
            d_max,
            targets: targets.to_vec(),
            proximity,
            topology,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `(cos(a, b) + 1) / 2`, or `0.5` when either vector has zero norm.
pub fn rescaled_cosine(a: &[f64], b: &[f64]) -> f64 {
    rescaled_from_parts(dot(a, b), dot(a, a), dot(b, b))
}

#[inline]
fn rescaled_from_parts(ab: f64, aa: f64, bb: f64) -> f64 {
    if aa == 0.0 || bb == 0.0 {
        return 0.5;
    }
    // sqrt(aa * aa) == aa exactly, so identical vectors give exactly 1.
    let cos = (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0);
    (cos + 1.0) / 2.0
}

/// Node representations with cached squared norms.
#[derive(Debug, Clone)]
pub struct Representations<'a> {
    z: &'a Matrix,
    sq_norms: Vec<f64>,
}

impl<'a> Representations<'a> {
    pub fn new(z: &'a Matrix) -> Self {
        let sq_norms = (0..z.rows()).map(|i| dot(z.row(i), z.row(i))).collect();
        Self { z, sq_norms }
    }

    pub fn num_nodes(&self) -> usize {
        self.z.rows()
    }

    #[inline]
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        rescaled_from_parts(dot(self.z.row(a), self.z.row(b)), self.sq_norms[a], self.sq_norms[b])
    }
}

/// Descending similarity, then ascending index.
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` candidates most similar to `target`, most similar first; equal
/// similarities are ordered by ascending node index.
pub fn select_top_k(target: usize, candidates: &[usize], reps: &Representations<'_>, k: usize) -> Vec<usize> {
    if k == 0 || candidates.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&i| (reps.similarity(target, i), i))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Where anchors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AnchorPool {
    /// Separate proximity and topology selections, then their union.
    Dual,
    ProximityOnly,
    TopologyOnly,
    /// One selection of `k_P + k_T` from every node except the target.
    AllNodes,
    /// One selection of `k_P + k_T` from the union of both pools.
    MergedCandidates,
}

/// Selected anchors for one target. Single-pool selections are stored in
/// `proximity` with `topology` left empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AnchorSet {
    pub proximity: Vec<usize>,
    pub topology: Vec<usize>,
    /// Deduplicated union, ascending.
    pub union: Vec<usize>,
}

impl AnchorSet {
    pub fn new(proximity: Vec<usize>, topology: Vec<usize>) -> Self {
        let mut union: Vec<usize> = proximity.iter().chain(&topology).copied().collect();
        union.sort_unstable();
        union.dedup();
        Self {
            proximity,
            topology,
            union,
        }
    }
}

/// `mean^(1/τ)`.
pub fn sharpen(mean_similarity: f64, tau: f64) -> f64 {
    mean_similarity.powf(1.0 / tau)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DreamError::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Homogeneity of `target` with its anchor union; `0` for an empty union.
pub fn homogeneity(target: usize, anchors: &AnchorSet, reps: &Representations<'_>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(homogeneity_unchecked(target, &anchors.union, reps, tau))
}

fn homogeneity_unchecked(target: usize, union: &[usize], reps: &Representations<'_>, tau: f64) -> f64 {
    if union.is_empty() {
        return 0.0;
    }
    let sum: f64 = union.iter().map(|&i| reps.similarity(target, i)).sum();
    sharpen(sum / union.len() as f64, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreParams {
    pub k_p: usize,
    pub k_t: usize,
    pub tau: f64,
    pub pool: AnchorPool,
}

/// Per-target scores aligned with [`CandidateSets::targets`].
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityScores {
    pub scores: Vec<f64>,
    pub tau: f64,
    pub anchor_counts: Vec<usize>,
    /// Targets whose anchor union was empty (scored 0).
    pub empty_unions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ScoredAnchors {
    pub scores: HomogeneityScores,
    pub anchors: Vec<AnchorSet>,
}

pub fn select_anchors(
    k: usize,
    cands: &CandidateSets,
    reps: &Representations<'_>,
    params: &ScoreParams,
) -> AnchorSet {
    let t = cands.targets[k];
    let (cp, ct) = (&cands.proximity[k], &cands.topology[k]);
    match params.pool {
        AnchorPool::Dual => AnchorSet::new(
            select_top_k(t, cp, reps, params.k_p),
            select_top_k(t, ct, reps, params.k_t),
        ),
        AnchorPool::ProximityOnly => AnchorSet::new(select_top_k(t, cp, reps, params.k_p), Vec::new()),
        AnchorPool::TopologyOnly => AnchorSet::new(Vec::new(), select_top_k(t, ct, reps, params.k_t)),
        AnchorPool::AllNodes => {
            let everyone: Vec<usize> = (0..reps.num_nodes()).filter(|&i| i != t).collect();
            AnchorSet::new(select_top_k(t, &everyone, reps, params.k_p + params.k_t), Vec::new())
        }
        AnchorPool::MergedCandidates => {
            let mut merged: Vec<usize> = cp.iter().chain(ct).copied().collect();
            merged.sort_unstable();
            merged.dedup();
            AnchorSet::new(select_top_k(t, &merged, reps, params.k_p + params.k_t), Vec::new())
        }
    }
}

/// Selects anchors and scores every target. Targets are processed in parallel
/// but each score depends only on its own target, so the result is identical
/// to a sequential pass.
pub fn score_all(cands: &CandidateSets, z: &Matrix, params: &ScoreParams) -> Result<ScoredAnchors> {
    check_tau(params.tau)?;
    if let Some(&t) = cands.targets.iter().find(|&&t| t >= z.rows()) {
        return Err(DreamError::OutOfRange {
            what: "target",
            index: t,
            limit: z.rows(),
        });
    }
    let reps = Representations::new(z);
    let per_target: Vec<(AnchorSet, f64)> = (0..cands.len())
        .into_par_iter()
        .map(|k| {
            let anchors = select_anchors(k, cands, &reps, params);
            let h = homogeneity_unchecked(cands.targets[k], &anchors.union, &reps, params.tau);
            (anchors, h)
        })
        .collect();

    let mut scores = Vec::with_capacity(per_target.len());
    let mut anchor_counts = Vec::with_capacity(per_target.len());
    let mut empty_unions = Vec::new();
    let mut anchors = Vec::with_capacity(per_target.len());
    for (k, (set, h)) in per_target.into_iter().enumerate() {
        if set.union.is_empty() {
            empty_unions.push(cands.targets[k]);
        }
        anchor_counts.push(set.union.len());
        scores.push(h);
        anchors.push(set);
    }
    Ok(ScoredAnchors {
        scores: HomogeneityScores {
            scores,
            tau: params.tau,
            anchor_counts,
            empty_unions,
        },
        anchors,
    })
}
