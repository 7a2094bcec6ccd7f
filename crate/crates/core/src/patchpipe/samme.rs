//! Multi-class AdaBoost (SAMME) over depth-limited axis-aligned decision trees.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{feature_checksum, FEATURE_COUNT};
use crate::error::{Error, Result};

/// Upper bound on a round weight, reached when a round classifies every sample correctly.
pub const ALPHA_CAP: f64 = 27.631_021_115_928_547; // ln(1e12)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes stored flat; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
            }
        }
        d(self, 0)
    }
}

fn weighted_majority(idx: &[usize], y: &[usize], w: &[f64], k: usize) -> usize {
    let mut mass = vec![0.0; k];
    for &i in idx {
        mass[y[i]] += w[i];
    }
    let mut best = 0;
    for c in 1..k {
        if mass[c] > mass[best] {
            best = c;
        }
    }
    best
}

fn gini(mass: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - mass.iter().map(|m| (m / total).powi(2)).sum::<f64>()
}

/// Best (feature, threshold) by weighted Gini; ties keep the lowest feature then the lowest threshold.
fn best_split(x: &[Vec<f64>], y: &[usize], w: &[f64], idx: &[usize], k: usize) -> Option<(usize, f64)> {
    let mut total_mass = vec![0.0; k];
    for &i in idx {
        total_mass[y[i]] += w[i];
    }
    let total: f64 = total_mass.iter().sum();
    let parent = gini(&total_mass, total);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for f in 0..x[0].len() {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left = vec![0.0; k];
        let mut left_total = 0.0;
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            left[y[i]] += w[i];
            left_total += w[i];
            let (v, next) = (x[i][f], x[order[pos + 1]][f]);
            if v == next {
                continue;
            }
            let right: Vec<f64> = (0..k).map(|c| total_mass[c] - left[c]).collect();
            let right_total = total - left_total;
            let impurity = (left_total * gini(&left, left_total) + right_total * gini(&right, right_total)) / total;
            let threshold = v + (next - v) / 2.0;
            if best.is_none_or(|b| impurity < b.0 - 1e-15) {
                best = Some((impurity, f, threshold));
            }
        }
    }
    best.filter(|b| b.0 < parent - 1e-15).map(|b| (b.1, b.2))
}

pub fn fit_tree(x: &[Vec<f64>], y: &[usize], w: &[f64], k: usize, max_depth: usize) -> DecisionTree {
    fn grow(
        x: &[Vec<f64>],
        y: &[usize],
        w: &[f64],
        k: usize,
        idx: Vec<usize>,
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let me = nodes.len();
        nodes.push(Node::Leaf {
            class: weighted_majority(&idx, y, w, k),
        });
        let pure = idx.iter().all(|&i| y[i] == y[idx[0]]);
        if depth == 0 || pure || idx.len() < 2 {
            return me;
        }
        if let Some((feature, threshold)) = best_split(x, y, w, &idx, k) {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
            let left = grow(x, y, w, k, l, depth - 1, nodes);
            let right = grow(x, y, w, k, r, depth - 1, nodes);
            nodes[me] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        me
    }
    let mut nodes = Vec::new();
    grow(x, y, w, k, (0..x.len()).collect(), max_depth, &mut nodes);
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub alpha: f64,
    pub tree: DecisionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SammeModel {
    pub num_classes: usize,
    pub num_features: usize,
    pub rounds: Vec<Round>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SammeParams {
    pub rounds: usize,
    pub max_depth: usize,
}

impl Default for SammeParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 2,
        }
    }
}

/// SAMME with `K = max(label) + 1` classes.
pub fn train_samme(x: &[Vec<f64>], y: &[usize], params: &SammeParams) -> Result<SammeModel> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Shape { expected: d, got: bad.len() });
    }
    if params.rounds == 0 {
        return Err(Error::Training("rounds must be at least 1".into()));
    }
    let k = y.iter().max().expect("non-empty") + 1;
    let distinct = {
        let mut seen = vec![false; k];
        y.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Training("training data contains a single category".into()));
    }
    let n = x.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut rounds = Vec::new();
    let chance = (k - 1) as f64 / k as f64;
    for _ in 0..params.rounds {
        let tree = fit_tree(x, y, &w, k, params.max_depth);
        let miss: Vec<bool> = (0..n).map(|i| tree.predict(&x[i]) != y[i]).collect();
        let total: f64 = w.iter().sum();
        let err: f64 = (0..n).filter(|&i| miss[i]).map(|i| w[i]).sum::<f64>() / total;
        if err >= chance {
            break;
        }
        if err <= 0.0 {
            rounds.push(Round { alpha: ALPHA_CAP, tree });
            break;
        }
        let alpha = (((1.0 - err) / err).ln() + ((k - 1) as f64).ln()).min(ALPHA_CAP);
        for i in 0..n {
            if miss[i] {
                w[i] *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        rounds.push(Round { alpha, tree });
    }
    if rounds.is_empty() {
        return Err(Error::Training("first round is no better than chance".into()));
    }
    Ok(SammeModel {
        num_classes: k,
        num_features: d,
        rounds,
    })
}

/// Argmax of α-weighted votes (ties to the lower class) and the winner's vote share.
pub fn predict_samme(model: &SammeModel, x: &[f64]) -> Result<(usize, f64)> {
    if x.len() != model.num_features {
        return Err(Error::Shape {
            expected: model.num_features,
            got: x.len(),
        });
    }
    let mut votes = vec![0.0; model.num_classes];
    for r in &model.rounds {
        votes[r.tree.predict(x)] += r.alpha;
    }
    let mut best = 0;
    for c in 1..votes.len() {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    let total: f64 = votes.iter().sum();
    Ok((best, if total > 0.0 { votes[best] / total } else { 0.0 }))
}

impl SammeModel {
    /// Models trained on fewer rounds: the first `t` retained rounds.
    pub fn truncated(&self, t: usize) -> SammeModel {
        SammeModel {
            rounds: self.rounds[..t.min(self.rounds.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn error_rate(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        let mut wrong = 0usize;
        for (xi, &yi) in x.iter().zip(y) {
            wrong += (predict_samme(self, xi)?.0 != yi) as usize;
        }
        Ok(wrong as f64 / x.len().max(1) as f64)
    }
}

pub const MODEL_FORMAT: &str = "her2kit-samme";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    feature_checksum: String,
    model: SammeModel,
}

pub fn model_to_json(model: &SammeModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_checksum: feature_checksum(),
        model: model.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Model(e.to_string()))
}

/// Refuses files from another format version or feature ordering.
pub fn model_from_json(text: &str) -> Result<SammeModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "unsupported model format {} v{}",
            file.format, file.version
        )));
    }
    if file.feature_checksum != feature_checksum() {
        return Err(Error::Model(format!(
            "feature checksum mismatch: file {} vs build {}",
            file.feature_checksum,
            feature_checksum()
        )));
    }
    if file.model.num_features != FEATURE_COUNT {
        return Err(Error::Model(format!(
            "model expects {} features, extractor produces {FEATURE_COUNT}",
            file.model.num_features
        )));
    }
    Ok(file.model)
}

pub fn save_model(model: &SammeModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SammeModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}
