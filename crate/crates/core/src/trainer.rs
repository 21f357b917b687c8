//! The reweighted training loop, its ablation variants and the benchmark
//! harness built on top of it.
//!
//! Each epoch runs one full-batch forward pass, reselects anchors from the
//! fresh representations, rescores every training node and takes one Adam
//! step on the reweighted cross-entropy. Candidate pools are built once
//! before the first epoch.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{score_all, AnchorPool, CandidateSets, ScoreParams, ScoredAnchors};
use crate::dataset::{Dataset, Split};
use crate::error::{DreamError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::nn::{adam_step, backward, forward, weighted_ce_loss, AdamState, ForwardCache, ModelParams, Supervision};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::rng::{stream, Stream};

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,val_acc,test_acc,mean_h_clean,mean_h_noisy,wall_ms";
pub const SWEEP_HEADER: &str = "noise_kind,rate,seed,method,test_acc_final,test_acc_bestval";
pub const AGGREGATE_HEADER: &str =
    "noise_kind,rate,method,runs,failed,mean_test_acc_bestval,std_test_acc_bestval,mean_test_acc_final,std_test_acc_final";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    V1NoTopo,
    V2NoProx,
    V3NoTemp,
    V4GlobalPool,
    V5UnionPool,
    BaselineUnweighted,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::V1NoTopo,
        Variant::V2NoProx,
        Variant::V3NoTemp,
        Variant::V4GlobalPool,
        Variant::V5UnionPool,
        Variant::BaselineUnweighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V1NoTopo => "v1_no_topo",
            Variant::V2NoProx => "v2_no_prox",
            Variant::V3NoTemp => "v3_no_temp",
            Variant::V4GlobalPool => "v4_global_pool",
            Variant::V5UnionPool => "v5_union_pool",
            Variant::BaselineUnweighted => "baseline_unweighted",
        }
    }

    /// Name used in summaries and harness CSVs.
    pub fn method(self) -> &'static str {
        match self {
            Variant::Full => "dream",
            Variant::BaselineUnweighted => "baseline",
            other => other.as_str(),
        }
    }

    /// Anchor scoring used for loss weights; `None` means unit weights.
    pub fn score_params(self, cfg: &TrainConfig) -> Option<ScoreParams> {
        let base = ScoreParams {
            k_p: cfg.k_p,
            k_t: cfg.k_t,
            tau: cfg.tau,
            pool: AnchorPool::Dual,
        };
        let params = match self {
            Variant::Full => base,
            Variant::V1NoTopo => ScoreParams { pool: AnchorPool::ProximityOnly, ..base },
            Variant::V2NoProx => ScoreParams { pool: AnchorPool::TopologyOnly, ..base },
            Variant::V3NoTemp => ScoreParams { tau: 1.0, ..base },
            Variant::V4GlobalPool => ScoreParams { pool: AnchorPool::AllNodes, ..base },
            Variant::V5UnionPool => ScoreParams { pool: AnchorPool::MergedCandidates, ..base },
            Variant::BaselineUnweighted => return None,
        };
        Some(params)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = DreamError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| DreamError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_p: usize,
    pub k_t: usize,
    pub d_max: u16,
    pub tau: f64,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Fill the `wall_ms` column. Off by default so metrics files are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_p: 15,
            k_t: 10,
            d_max: 4,
            tau: 0.04,
            hidden: 64,
            lr: 1e-2,
            epochs: 500,
            seed: 0,
            variant: Variant::Full,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DreamError::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.d_max == 0 {
            return fail("d_max must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden width must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        let uses_p = !matches!(self.variant, Variant::V2NoProx | Variant::BaselineUnweighted);
        let uses_t = !matches!(self.variant, Variant::V1NoTopo | Variant::BaselineUnweighted);
        if (uses_p && self.k_p == 0) || (uses_t && self.k_t == 0) {
            return fail("k_p and k_t must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub mean_h_clean: Option<f64>,
    pub mean_h_noisy: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss,
            self.train_acc,
            opt(self.val_acc),
            opt(self.test_acc),
            opt(self.mean_h_clean),
            opt(self.mean_h_noisy),
            opt(self.wall_ms),
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Parameter checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub d: usize,
    pub c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        Self {
            w1: params.w1.to_rows(),
            w2: params.w2.to_rows(),
            d: params.hidden(),
            c: params.classes(),
            config: None,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let params = ModelParams::new(Matrix::from_rows(&self.w1)?, Matrix::from_rows(&self.w2)?)?;
        if params.hidden() != self.d || params.classes() != self.c {
            return Err(DreamError::Data(format!(
                "checkpoint declares d={}, c={} but weights are {:?} and {:?}",
                self.d,
                self.c,
                params.w1.shape(),
                params.w2.shape()
            )));
        }
        if !params.is_finite() {
            return Err(DreamError::Data("checkpoint contains non-finite weights".into()));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: TrainConfig,
    pub metrics: Vec<EpochMetrics>,
    /// Test accuracy of the parameters after the last update.
    pub test_acc_final: Option<f64>,
    /// Test accuracy at the epoch with the highest validation accuracy
    /// (earliest on ties).
    pub test_acc_bestval: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Reweighted training loss after the last update.
    pub final_loss: f64,
    /// Plain cross-entropy on the training nodes after the last update.
    pub final_unweighted_loss: f64,
    /// Training nodes that had no anchors in at least one epoch.
    pub empty_union_nodes: usize,
    pub params: ModelParams,
}

impl RunResult {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics)
    }
}

/// A failed run and the metrics collected before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: DreamError,
    pub trace: Vec<EpochMetrics>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} logged epochs)", self.error, self.trace.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<DreamError> for TrainFailure {
    fn from(error: DreamError) -> Self {
        Self { error, trace: Vec::new() }
    }
}

/// Loss weights for one epoch under the configured variant.
#[derive(Debug, Clone)]
pub struct EffectiveWeights {
    pub weights: Vec<f64>,
    /// Homogeneity scores behind the weights. For the unweighted baseline these
    /// are the full dual-standard scores, kept only as a diagnostic.
    pub scored: ScoredAnchors,
}

pub fn apply_variant(cfg: &TrainConfig, cands: &CandidateSets, z: &Matrix) -> Result<EffectiveWeights> {
    match cfg.variant.score_params(cfg) {
        Some(params) => {
            let scored = score_all(cands, z, &params)?;
            Ok(EffectiveWeights {
                weights: scored.scores.scores.clone(),
                scored,
            })
        }
        None => {
            let diag = Variant::Full.score_params(cfg).expect("full variant scores");
            let scored = score_all(cands, z, &diag)?;
            Ok(EffectiveWeights {
                weights: vec![1.0; cands.len()],
                scored,
            })
        }
    }
}

/// Fraction of `nodes` whose argmax prediction equals `labels`.
pub fn accuracy(cache: &ForwardCache, nodes: &[usize], labels: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(DreamError::Data("accuracy over an empty mask".into()));
    }
    let correct = nodes
        .iter()
        .zip(labels)
        .filter(|(&i, &y)| cache.predict(i) == y)
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

/// Accuracy of `params` on the masked nodes against `labels`.
pub fn evaluate(params: &ModelParams, graph: &Graph, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    if mask.len() != graph.num_nodes() || labels.len() != graph.num_nodes() {
        return Err(DreamError::DimensionMismatch {
            context: "evaluate",
            expected: format!("{} entries", graph.num_nodes()),
            actual: format!("{} mask, {} labels", mask.len(), labels.len()),
        });
    }
    let mut nodes = Vec::new();
    let mut ys = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let y = labels[i].ok_or_else(|| DreamError::Data(format!("masked node {i} has no label")))?;
            nodes.push(i);
            ys.push(y);
        }
    }
    let cache = forward(params, &graph.normalize_adjacency(), graph.features())?;
    accuracy(&cache, &nodes, &ys)
}

struct EvalSet {
    nodes: Vec<usize>,
    labels: Vec<usize>,
}

impl EvalSet {
    fn accuracy(&self, cache: &ForwardCache) -> Result<Option<f64>> {
        if self.nodes.is_empty() {
            return Ok(None);
        }
        accuracy(cache, &self.nodes, &self.labels).map(Some)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-epoch hook, called after scoring with the epoch number, training
/// nodes and the selected anchors.
pub type EpochObserver<'a> = dyn FnMut(usize, &[usize], &ScoredAnchors) + 'a;

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<RunResult, TrainFailure> {
    train_observed(ds, cfg, &mut |_, _, _| {})
}

pub fn train_observed(ds: &Dataset, cfg: &TrainConfig, observer: &mut EpochObserver<'_>) -> Result<RunResult, TrainFailure> {
    cfg.validate()?;
    ds.validate()?;
    if ds.num_classes < 2 {
        return Err(DreamError::Data(format!("need at least 2 classes, got {}", ds.num_classes)).into());
    }
    let nodes = ds.nodes(Split::Train);
    if nodes.is_empty() {
        return Err(DreamError::Data("no training nodes".into()).into());
    }
    let labels = ds.observed_labels(&nodes);
    let val = EvalSet {
        nodes: ds.nodes(Split::Val),
        labels: ds.observed_labels(&ds.nodes(Split::Val)),
    };
    let test_nodes = ds.nodes(Split::Test);
    let test = EvalSet {
        labels: ds.clean_labels_of(&test_nodes),
        nodes: test_nodes,
    };
    let noisy_flags: Option<Vec<bool>> = ds.corrupted_mask.as_ref().map(|m| nodes.iter().map(|&i| m[i]).collect());

    let mut rng = stream(cfg.seed, Stream::Init);
    let mut params = ModelParams::glorot(ds.graph.feature_dim(), cfg.hidden, ds.num_classes, &mut rng);
    let adj = ds.graph.normalize_adjacency();
    let x = ds.graph.features();
    let cands = CandidateSets::build(&ds.graph, &nodes, &labels, cfg.d_max)?;
    let mut adam = AdamState::new(&params, cfg.lr);

    let mut trace: Vec<EpochMetrics> = Vec::with_capacity(cfg.epochs);
    let mut empty_seen = vec![false; nodes.len()];
    let fail = |error: DreamError, trace: Vec<EpochMetrics>| TrainFailure { error, trace };

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let step = (|| -> Result<(f64, EffectiveWeights, ForwardCache)> {
            let cache = forward(&params, &adj, x)?;
            let eff = apply_variant(cfg, &cands, &cache.z)?;
            let sup = Supervision { nodes: &nodes, labels: &labels, weights: &eff.weights };
            let loss = weighted_ce_loss(&cache, sup)?.loss;
            if !loss.is_finite() {
                return Err(DreamError::Diverged { epoch, loss });
            }
            Ok((loss, eff, cache))
        })();
        let (loss, eff, cache) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        observer(epoch, &nodes, &eff.scored);

        for &t in &eff.scored.scores.empty_unions {
            if let Ok(k) = nodes.binary_search(&t) {
                empty_seen[k] = true;
            }
        }

        let scores = &eff.scored.scores.scores;
        let (mean_h_clean, mean_h_noisy) = match &noisy_flags {
            Some(flags) => (
                mean(scores.iter().zip(flags).filter(|(_, &f)| !f).map(|(&h, _)| h)),
                mean(scores.iter().zip(flags).filter(|(_, &f)| f).map(|(&h, _)| h)),
            ),
            None => (None, None),
        };
        let metrics = (|| -> Result<EpochMetrics> {
            Ok(EpochMetrics {
                epoch,
                loss,
                train_acc: accuracy(&cache, &nodes, &labels)?,
                val_acc: val.accuracy(&cache)?,
                test_acc: test.accuracy(&cache)?,
                mean_h_clean,
                mean_h_noisy,
                wall_ms: None,
            })
        })();
        let mut metrics = match metrics {
            Ok(m) => m,
            Err(e) => return Err(fail(e, trace)),
        };

        let update = (|| -> Result<()> {
            let sup = Supervision { nodes: &nodes, labels: &labels, weights: &eff.weights };
            let grads = backward(&cache, &params, &adj, sup)?;
            adam_step(&mut params, &grads, &mut adam)
        })();
        if cfg.record_timing {
            metrics.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        trace.push(metrics);
        if let Err(e) = update {
            return Err(fail(e, trace));
        }
    }

    let empty_union_nodes = empty_seen.iter().filter(|&&e| e).count();
    if empty_union_nodes > 0 {
        log::warn!("{empty_union_nodes} training nodes had no anchors in at least one epoch and were given weight 0");
    }

    let finish = (|| -> Result<(ForwardCache, f64, f64)> {
        let cache = forward(&params, &adj, x)?;
        let eff = apply_variant(cfg, &cands, &cache.z)?;
        let final_loss = weighted_ce_loss(&cache, Supervision { nodes: &nodes, labels: &labels, weights: &eff.weights })?.loss;
        let ones = vec![1.0; nodes.len()];
        let plain = weighted_ce_loss(&cache, Supervision { nodes: &nodes, labels: &labels, weights: &ones })?.loss;
        Ok((cache, final_loss, plain))
    })();
    let (cache, final_loss, final_unweighted_loss) = match finish {
        Ok(v) => v,
        Err(e) => return Err(fail(e, trace)),
    };
    let test_acc_final = test.accuracy(&cache).map_err(|e| fail(e, Vec::new()))?;

    let best = trace
        .iter()
        .filter_map(|m| m.val_acc.map(|v| (v, m)))
        .fold(None::<(f64, &EpochMetrics)>, |best, (v, m)| match best {
            Some((bv, _)) if bv >= v => best,
            _ => Some((v, m)),
        });
    let (best_epoch, test_acc_bestval) = match best {
        Some((_, m)) => (Some(m.epoch), m.test_acc),
        None => (None, test_acc_final),
    };

    Ok(RunResult {
        config: cfg.clone(),
        metrics: trace,
        test_acc_final,
        test_acc_bestval,
        best_epoch,
        final_loss,
        final_unweighted_loss,
        empty_union_nodes,
        params,
    })
}

/// Candidate-set statistics, handy for sanity-checking a dataset.
pub fn candidate_stats(ds: &Dataset, d_max: u16) -> Result<(f64, f64)> {
    let nodes = ds.nodes(Split::Train);
    let cands = CandidateSets::build(&ds.graph, &nodes, &ds.observed_labels(&nodes), d_max)?;
    let avg = |sets: &[Vec<usize>]| sets.iter().map(Vec::len).sum::<usize>() as f64 / sets.len().max(1) as f64;
    Ok((avg(&cands.proximity), avg(&cands.topology)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessRow {
    pub noise_kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
    pub variant: Variant,
    pub test_acc_final: Option<f64>,
    pub test_acc_bestval: Option<f64>,
    /// Final loss values, kept for convergence checks.
    pub final_loss: Option<f64>,
    pub final_unweighted_loss: Option<f64>,
    pub error: Option<String>,
}

impl HarnessRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn csv_row(&self) -> String {
        let acc = |v: Option<f64>| match (&self.error, v) {
            (Some(_), _) => "failed".to_string(),
            (None, Some(v)) => v.to_string(),
            (None, None) => String::new(),
        };
        format!(
            "{},{},{},{},{},{}",
            self.noise_kind,
            self.rate,
            self.seed,
            self.variant.method(),
            acc(self.test_acc_final),
            acc(self.test_acc_bestval),
        )
    }
}

pub fn harness_csv(rows: &[HarnessRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// One `(noise kind, rate, seed)` cell of a harness grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

/// Corrupts `clean` per cell and trains every variant on it. The noise seed and
/// the initialization seed are both the cell seed. Rows come back ordered by
/// cell, then by the order of `variants`, regardless of `jobs`.
pub fn run_grid(clean: &Dataset, cells: &[Cell], variants: &[Variant], cfg: &TrainConfig, jobs: usize) -> Result<Vec<HarnessRow>> {
    let mut work = Vec::with_capacity(cells.len() * variants.len());
    for &cell in cells {
        NoiseSpec::new(cell.kind, cell.rate, cell.seed)?;
        for &variant in variants {
            work.push((cell, variant));
        }
    }
    let run = |&(cell, variant): &(Cell, Variant)| -> HarnessRow {
        let outcome = (|| {
            let spec = NoiseSpec::new(cell.kind, cell.rate, cell.seed)?;
            let (noisy, _) = clean.corrupt(spec)?;
            let run_cfg = TrainConfig { seed: cell.seed, variant, ..cfg.clone() };
            train(&noisy, &run_cfg).map_err(|f| f.error)
        })();
        let mut row = HarnessRow {
            noise_kind: cell.kind,
            rate: cell.rate,
            seed: cell.seed,
            variant,
            test_acc_final: None,
            test_acc_bestval: None,
            final_loss: None,
            final_unweighted_loss: None,
            error: None,
        };
        match outcome {
            Ok(r) => {
                row.test_acc_final = r.test_acc_final;
                row.test_acc_bestval = r.test_acc_bestval;
                row.final_loss = Some(r.final_loss);
                row.final_unweighted_loss = Some(r.final_unweighted_loss);
            }
            Err(e) => {
                log::error!("{} rate={} seed={} {}: {e}", cell.kind, cell.rate, cell.seed, variant);
                row.error = Some(e.to_string());
            }
        }
        row
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DreamError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| work.par_iter().map(run).collect()))
}

/// Noise-rate sweep comparing DREAM against the unweighted baseline.
pub fn sweep(clean: &Dataset, kinds: &[NoiseKind], rates: &[f64], seeds: &[u64], cfg: &TrainConfig, jobs: usize) -> Result<Vec<HarnessRow>> {
    let mut cells = Vec::new();
    for &kind in kinds {
        for &rate in rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DreamError::Config(format!("noise rate {rate} outside [0, 1]")));
            }
            for &seed in seeds {
                cells.push(Cell { kind, rate, seed });
            }
        }
    }
    run_grid(clean, &cells, &[Variant::Full, Variant::BaselineUnweighted], cfg, jobs)
}

/// Every variant at one noise setting.
pub fn ablate(clean: &Dataset, kind: NoiseKind, rate: f64, seeds: &[u64], cfg: &TrainConfig, jobs: usize) -> Result<Vec<HarnessRow>> {
    let cells: Vec<Cell> = seeds.iter().map(|&seed| Cell { kind, rate, seed }).collect();
    run_grid(clean, &cells, &Variant::ALL, cfg, jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub noise_kind: NoiseKind,
    pub rate: f64,
    pub variant: Variant,
    pub runs: usize,
    pub failed: usize,
    pub mean_bestval: f64,
    pub std_bestval: f64,
    pub mean_final: f64,
    pub std_final: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Groups rows by `(kind, rate, variant)` in first-appearance order.
pub fn aggregate(rows: &[HarnessRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(NoiseKind, f64, Variant)> = Vec::new();
    for r in rows {
        let key = (r.noise_kind, r.rate, r.variant);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(kind, rate, variant)| {
            let group: Vec<&HarnessRow> = rows
                .iter()
                .filter(|r| r.noise_kind == kind && r.rate == rate && r.variant == variant)
                .collect();
            let ok: Vec<&&HarnessRow> = group.iter().filter(|r| !r.failed()).collect();
            let best: Vec<f64> = ok.iter().filter_map(|r| r.test_acc_bestval).collect();
            let fin: Vec<f64> = ok.iter().filter_map(|r| r.test_acc_final).collect();
            let (mean_bestval, std_bestval) = mean_std(&best);
            let (mean_final, std_final) = mean_std(&fin);
            AggregateRow {
                noise_kind: kind,
                rate,
                variant,
                runs: group.len(),
                failed: group.len() - ok.len(),
                mean_bestval,
                std_bestval,
                mean_final,
                std_final,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.noise_kind,
            r.rate,
            r.variant.method(),
            r.runs,
            r.failed,
            r.mean_bestval,
            r.std_bestval,
            r.mean_final,
            r.std_final
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softmax_rows, weighted_ce_loss};
    use crate::synth::{generate, SynthSpec};

    fn small_noisy(seed: u64) -> Dataset {
        let spec = SynthSpec { n: 90, p_in: 0.2, p_mid: 0.05, p_out: 0.01, seed: 3, ..Default::default() };
        let clean = generate(&spec).unwrap();
        clean.corrupt(NoiseSpec::new(NoiseKind::Uniform, 0.3, seed).unwrap()).unwrap().0
    }

    fn quick(variant: Variant, epochs: usize) -> TrainConfig {
        TrainConfig { k_p: 3, k_t: 2, hidden: 8, epochs, seed: 5, variant, ..Default::default() }
    }

    /// 12-cycle with identical features: every hidden row is identical, so
    /// every homogeneity score is exactly 1.
    fn uniform_cycle() -> Dataset {
        let n = 12;
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let x = Matrix::filled(n, 4, 0.7);
        let labels = (0..n).map(|i| Some(i % 3)).collect();
        let train = (0..n).map(|i| i < 9).collect();
        let val = (0..n).map(|i| (9..11).contains(&i)).collect();
        let test = (0..n).map(|i| i == 11).collect();
        Dataset::new(Graph::build(&edges, x).unwrap(), labels, 3, train, val, test).unwrap()
    }

    #[test]
    fn one_epoch_is_one_update_and_one_row() {
        let ds = small_noisy(1);
        let cfg = quick(Variant::Full, 1);
        let r = train(&ds, &cfg).unwrap();
        assert_eq!(r.metrics.len(), 1);
        assert_eq!(r.metrics[0].epoch, 1);
        let init = ModelParams::glorot(ds.graph.feature_dim(), cfg.hidden, 3, &mut stream(cfg.seed, Stream::Init));
        assert_ne!(r.params, init);
    }

    #[test]
    fn unit_scores_reduce_full_to_baseline() {
        let ds = uniform_cycle();
        let cfg = TrainConfig { hidden: 32, ..quick(Variant::Full, 20) };
        let mut all_ones = true;
        let full = train_observed(&ds, &cfg, &mut |_, _, scored| {
            all_ones &= scored.scores.scores.iter().all(|&h| h == 1.0);
        })
        .unwrap();
        assert!(all_ones);
        let base = train(&ds, &TrainConfig { variant: Variant::BaselineUnweighted, ..cfg }).unwrap();
        assert_eq!(full.metrics_csv(), base.metrics_csv());
        assert_eq!(full.params, base.params);
    }

    #[test]
    fn v3_matches_full_with_unit_temperature() {
        let ds = small_noisy(2);
        let v3 = train(&ds, &quick(Variant::V3NoTemp, 15)).unwrap();
        let full = train(&ds, &TrainConfig { tau: 1.0, ..quick(Variant::Full, 15) }).unwrap();
        assert_eq!(v3.metrics_csv(), full.metrics_csv());
    }

    #[test]
    fn v1_matches_dual_pool_without_topology_anchors() {
        let ds = small_noisy(3);
        let nodes = ds.nodes(Split::Train);
        let cands = CandidateSets::build(&ds.graph, &nodes, &ds.observed_labels(&nodes), 4).unwrap();
        let params = ModelParams::glorot(ds.graph.feature_dim(), 8, 3, &mut stream(9, Stream::Test));
        let z = forward(&params, &ds.graph.normalize_adjacency(), ds.graph.features()).unwrap().z;
        let v1 = apply_variant(&quick(Variant::V1NoTopo, 1), &cands, &z).unwrap();
        let dual = apply_variant(&TrainConfig { k_t: 0, ..quick(Variant::Full, 1) }, &cands, &z).unwrap();
        assert_eq!(v1.weights, dual.weights);
    }

    #[test]
    fn v3_weight_at_half_similarity() {
        // target 0 with one anchor at rescaled similarity 0.5 (orthogonal)
        let g = Graph::build(&[(0, 1)], Matrix::zeros(2, 1)).unwrap();
        let cands = CandidateSets::build(&g, &[0, 1], &[0, 0], 1).unwrap();
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let cfg = TrainConfig { k_p: 1, k_t: 1, ..Default::default() };
        let v3 = apply_variant(&TrainConfig { variant: Variant::V3NoTemp, ..cfg.clone() }, &cands, &z).unwrap();
        assert_eq!(v3.weights, vec![0.5, 0.5]);
        let full = apply_variant(&cfg, &cands, &z).unwrap();
        assert!((full.weights[0] / 0.5f64.powi(25) - 1.0).abs() < 1e-12);
        let base = apply_variant(&TrainConfig { variant: Variant::BaselineUnweighted, ..cfg }, &cands, &z).unwrap();
        assert_eq!(base.weights, vec![1.0, 1.0]);
        assert_eq!(base.scored.scores.scores, full.weights);
    }

    #[test]
    fn logged_loss_uses_that_epochs_scores() {
        let ds = small_noisy(4);
        let cfg = quick(Variant::Full, 6);
        let nodes = ds.nodes(Split::Train);
        let labels = ds.observed_labels(&nodes);
        let mut seen = Vec::new();
        let r = train_observed(&ds, &cfg, &mut |epoch, _, scored| seen.push((epoch, scored.scores.scores.clone()))).unwrap();
        assert_eq!(seen.len(), 6);

        // replay the parameter trajectory independently
        let mut params = ModelParams::glorot(ds.graph.feature_dim(), cfg.hidden, 3, &mut stream(cfg.seed, Stream::Init));
        let adj = ds.graph.normalize_adjacency();
        let mut adam = AdamState::new(&params, cfg.lr);
        for (epoch, weights) in &seen {
            let cache = forward(&params, &adj, ds.graph.features()).unwrap();
            let sup = Supervision { nodes: &nodes, labels: &labels, weights };
            assert_eq!(weighted_ce_loss(&cache, sup).unwrap().loss, r.metrics[epoch - 1].loss);
            let grads = backward(&cache, &params, &adj, sup).unwrap();
            adam_step(&mut params, &grads, &mut adam).unwrap();
        }
        assert_eq!(params, r.params);
    }

    #[test]
    fn candidates_fixed_across_epochs() {
        let ds = small_noisy(5);
        let nodes = ds.nodes(Split::Train);
        let cands = CandidateSets::build(&ds.graph, &nodes, &ds.observed_labels(&nodes), 4).unwrap();
        let mut ok = true;
        train_observed(&ds, &quick(Variant::Full, 8), &mut |_, _, scored| {
            for (k, set) in scored.anchors.iter().enumerate() {
                ok &= set.proximity.iter().all(|a| cands.proximity[k].contains(a));
                ok &= set.topology.iter().all(|a| cands.topology[k].contains(a));
            }
        })
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let ds = small_noisy(6);
        let cfg = quick(Variant::Full, 10);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert!(a.metrics_csv().starts_with(METRICS_HEADER));
        assert!(a.metrics.iter().all(|m| m.wall_ms.is_none()));
        let other = train(&ds, &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.metrics_csv(), other.metrics_csv());
    }

    #[test]
    fn evaluate_examples() {
        let g = Graph::build(&[], Matrix::identity(4)).unwrap();
        let labels = vec![Some(0), Some(1), Some(2), Some(0)];
        // W1 = I, W2 maps hidden unit j to class j % 3: perfect one-hot predictions
        let mut w2 = Matrix::zeros(4, 3);
        for j in 0..4 {
            w2.as_mut_slice()[j * 3 + j % 3] = 1.0;
        }
        let perfect = ModelParams::new(Matrix::identity(4), w2).unwrap();
        assert_eq!(evaluate(&perfect, &g, &labels, &[true; 4]).unwrap(), 1.0);

        // all-zero weights give uniform P; ties go to class 0
        let flat = ModelParams::zeros(4, 2, 3);
        assert_eq!(evaluate(&flat, &g, &labels, &[true; 4]).unwrap(), 0.5);
        assert_eq!(evaluate(&flat, &g, &labels, &[false, true, true, true]).unwrap(), 1.0 / 3.0);
        assert!(evaluate(&flat, &g, &labels, &[false; 4]).is_err());
    }

    #[test]
    fn evaluate_matches_manual_count() {
        let ds = small_noisy(7);
        let params = ModelParams::glorot(ds.graph.feature_dim(), 8, 3, &mut stream(11, Stream::Test));
        let cache = forward(&params, &ds.graph.normalize_adjacency(), ds.graph.features()).unwrap();
        let probs = softmax_rows(&cache.logits);
        let mut correct = 0;
        let mut total = 0;
        for i in ds.nodes(Split::Test) {
            let row = probs.row(i);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            correct += usize::from(Some(best) == ds.clean_labels[i]);
            total += 1;
        }
        let acc = evaluate(&params, &ds.graph, &ds.clean_labels, &ds.test_mask).unwrap();
        assert_eq!(acc, correct as f64 / total as f64);
    }

    #[test]
    fn best_val_is_earliest_argmax() {
        let ds = small_noisy(8);
        let r = train(&ds, &quick(Variant::Full, 30)).unwrap();
        let best = r.metrics.iter().map(|m| m.val_acc.unwrap()).fold(f64::MIN, f64::max);
        let first = r.metrics.iter().find(|m| m.val_acc == Some(best)).unwrap();
        assert_eq!(r.best_epoch, Some(first.epoch));
        assert_eq!(r.test_acc_bestval, first.test_acc);
    }

    #[test]
    fn config_validation() {
        assert!(quick(Variant::Full, 0).validate().is_err());
        assert!(TrainConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { k_t: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { k_t: 0, variant: Variant::V1NoTopo, ..Default::default() }.validate().is_ok());
        assert!("v9".parse::<Variant>().is_err());
        assert_eq!("v5_union_pool".parse::<Variant>().unwrap(), Variant::V5UnionPool);
        assert_eq!(Variant::BaselineUnweighted.method(), "baseline");
        assert_eq!(Variant::Full.method(), "dream");
    }

    #[test]
    fn harness_rows_and_aggregates() {
        let clean = generate(&SynthSpec { n: 60, ..Default::default() }).unwrap();
        let cfg = quick(Variant::Full, 3);
        let rows = ablate(&clean, NoiseKind::Uniform, 0.3, &[1, 2], &cfg, 2).unwrap();
        assert_eq!(rows.len(), 14);
        let serial = ablate(&clean, NoiseKind::Uniform, 0.3, &[1, 2], &cfg, 1).unwrap();
        assert_eq!(harness_csv(&rows), harness_csv(&serial));
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 7);
        assert!(agg.iter().all(|a| a.runs == 2 && a.failed == 0));

        let swept = sweep(&clean, &[NoiseKind::Pair], &[0.0, 0.5], &[1], &cfg, 1).unwrap();
        let methods: Vec<&str> = swept.iter().map(|r| r.variant.method()).collect();
        assert_eq!(methods, ["dream", "baseline", "dream", "baseline"]);
        assert!(sweep(&clean, &[NoiseKind::Pair], &[1.5], &[1], &cfg, 1).is_err());
    }

    #[test]
    fn failed_cells_are_marked() {
        let mut row = HarnessRow {
            noise_kind: NoiseKind::Uniform,
            rate: 0.3,
            seed: 1,
            variant: Variant::Full,
            test_acc_final: None,
            test_acc_bestval: None,
            final_loss: None,
            final_unweighted_loss: None,
            error: Some("diverged".into()),
        };
        assert_eq!(row.csv_row(), "uniform,0.3,1,dream,failed,failed");
        row.error = None;
        row.test_acc_final = Some(0.5);
        row.test_acc_bestval = Some(0.75);
        assert_eq!(row.csv_row(), "uniform,0.3,1,dream,0.5,0.75");
        let agg = aggregate(&[row.clone(), HarnessRow { error: Some("x".into()), ..row }]);
        assert_eq!((agg[0].runs, agg[0].failed), (2, 1));
        assert_eq!(agg[0].mean_bestval, 0.75);
    }

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = ModelParams::glorot(5, 4, 3, &mut stream(1, Stream::Test));
        let ck = Checkpoint::from_params(&params);
        let text = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_params().unwrap(), params);
        let bad = Checkpoint { d: 7, ..ck };
        assert!(bad.to_params().is_err());
    }
}
