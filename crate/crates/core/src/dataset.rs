//! A graph together with its labels and splits, and the JSON file format that
//! carries them between commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DreamError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::noise::{corrupt, LabelState, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = DreamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DreamError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub num_classes: usize,
    /// Observed labels; possibly corrupted on train/val nodes.
    pub labels: Vec<Option<usize>>,
    /// Ground truth. Equal to `labels` until the dataset has been corrupted.
    pub clean_labels: Vec<Option<usize>>,
    /// Per node, whether the observed label differs from the clean one. Only
    /// known for datasets produced by [`Dataset::corrupt`].
    pub corrupted_mask: Option<Vec<bool>>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub noise: Option<NoiseSpec>,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        let ds = Self {
            graph,
            num_classes,
            clean_labels: labels.clone(),
            labels,
            corrupted_mask: None,
            train_mask,
            val_mask,
            test_mask,
            noise: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let lengths = [
            ("labels", self.labels.len()),
            ("labels_clean", self.clean_labels.len()),
            ("train_mask", self.train_mask.len()),
            ("val_mask", self.val_mask.len()),
            ("test_mask", self.test_mask.len()),
        ];
        for (name, len) in lengths {
            if len != n {
                return Err(DreamError::Data(format!("{name} has {len} entries for {n} nodes")));
            }
        }
        if let Some(mask) = &self.corrupted_mask {
            if mask.len() != n {
                return Err(DreamError::Data(format!("corrupted_mask has {} entries for {n} nodes", mask.len())));
            }
        }
        for labels in [&self.labels, &self.clean_labels] {
            if let Some(bad) = labels.iter().flatten().find(|&&y| y >= self.num_classes) {
                return Err(DreamError::OutOfRange {
                    what: "label",
                    index: *bad,
                    limit: self.num_classes,
                });
            }
        }
        for i in 0..n {
            let memberships = [self.train_mask[i], self.val_mask[i], self.test_mask[i]];
            if memberships.iter().filter(|&&m| m).count() > 1 {
                return Err(DreamError::Data(format!("node {i} belongs to more than one split")));
            }
            if memberships.iter().any(|&m| m) && (self.labels[i].is_none() || self.clean_labels[i].is_none()) {
                return Err(DreamError::Data(format!("node {i} is in a split but unlabeled")));
            }
        }
        Ok(())
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train_mask,
            Split::Val => &self.val_mask,
            Split::Test => &self.test_mask,
        }
    }

    /// Ascending node indices of a split.
    pub fn nodes(&self, split: Split) -> Vec<usize> {
        self.mask(split)
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Observed labels of `nodes`. Callers only pass split members, which are
    /// labeled by construction.
    pub fn observed_labels(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&i| self.labels[i].expect("split nodes are labeled")).collect()
    }

    pub fn clean_labels_of(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&i| self.clean_labels[i].expect("split nodes are labeled")).collect()
    }

    /// Applies `spec` to the clean labels of the train and validation nodes.
    /// Test labels are left untouched.
    pub fn corrupt(&self, spec: NoiseSpec) -> Result<(Dataset, LabelState)> {
        let nodes: Vec<usize> = (0..self.num_nodes())
            .filter(|&i| self.train_mask[i] || self.val_mask[i])
            .collect();
        let clean = self.clean_labels_of(&nodes);
        let state = corrupt(&nodes, &clean, self.num_classes, spec)?;

        let mut out = self.clone();
        out.labels = self.clean_labels.clone();
        let mut mask = vec![false; self.num_nodes()];
        for (k, &i) in state.nodes.iter().enumerate() {
            out.labels[i] = Some(state.observed[k]);
            mask[i] = state.corrupted[k];
        }
        out.corrupted_mask = Some(mask);
        out.noise = Some(state.spec);
        Ok((out, state))
    }

    pub fn from_file(file: GraphFile) -> Result<Self> {
        let n = file.num_nodes;
        if file.features.len() != n {
            return Err(DreamError::Data(format!(
                "features has {} rows for {n} nodes",
                file.features.len()
            )));
        }
        let features = if n == 0 {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&file.features)?
        };
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::build(&edges, features)?;

        let convert = |raw: &[i64], name: &str| -> Result<Vec<Option<usize>>> {
            raw.iter()
                .map(|&y| match y {
                    -1 => Ok(None),
                    y if y >= 0 => Ok(Some(y as usize)),
                    y => Err(DreamError::Data(format!("{name} contains invalid label {y}"))),
                })
                .collect()
        };
        let labels = match &file.labels {
            Some(raw) => convert(raw, "labels")?,
            None => vec![None; n],
        };
        let clean_labels = match &file.labels_clean {
            Some(raw) => convert(raw, "labels_clean")?,
            None => labels.clone(),
        };
        let inferred = labels.iter().chain(&clean_labels).flatten().max().map_or(0, |m| m + 1);
        let num_classes = file.num_classes.unwrap_or(inferred);
        let mask = |m: &Option<Vec<bool>>| m.clone().unwrap_or_else(|| vec![false; n]);
        let ds = Self {
            graph,
            num_classes,
            labels,
            clean_labels,
            corrupted_mask: file.corrupted_mask.clone(),
            train_mask: mask(&file.train_mask),
            val_mask: mask(&file.val_mask),
            test_mask: mask(&file.test_mask),
            noise: file.noise,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// File representation. `labels_clean` and `corrupted_mask` are emitted
    /// only for corrupted datasets.
    pub fn to_file(&self) -> GraphFile {
        let encode = |labels: &[Option<usize>]| labels.iter().map(|y| y.map_or(-1, |y| y as i64)).collect();
        let corrupted = self.corrupted_mask.is_some();
        GraphFile {
            num_nodes: self.num_nodes(),
            num_classes: Some(self.num_classes),
            edges: self.graph.edges().into_iter().map(|(u, v)| [u, v]).collect(),
            features: self.graph.features().to_rows(),
            labels: Some(encode(&self.labels)),
            train_mask: Some(self.train_mask.clone()),
            val_mask: Some(self.val_mask.clone()),
            test_mask: Some(self.test_mask.clone()),
            labels_clean: corrupted.then(|| encode(&self.clean_labels)),
            corrupted_mask: self.corrupted_mask.clone(),
            noise: self.noise,
            config: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(GraphFile::load(path)?)
    }
}

/// On-disk graph format (UTF-8 JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub num_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<Vec<f64>>,
    /// `-1` marks an unlabeled node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_clean: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    /// Settings of the command that wrote the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl GraphFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
