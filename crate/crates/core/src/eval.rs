//! Detection P/R/F1 and per-partition reasoning accuracy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::trace::Category;

pub const MATCH_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_category: BTreeMap<Category, Counts>,
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (c, n) in &other.per_category {
            self.per_category.entry(*c).or_default().add(*n);
        }
    }

    pub fn total(&self) -> Counts {
        let mut t = Counts::default();
        for n in self.per_category.values() {
            t.add(*n);
        }
        t
    }
}

/// Pairs up to `radius` apart, nearest first. When nearest-first leaves a
/// pairing on the table (a closer pair blocking two looser ones), augmenting
/// paths extend the matching so tp is the maximum achievable.
pub fn match_pairs(predicted: &[Vec3<f64>], gold: &[Vec3<f64>], radius: f64) -> Vec<(usize, usize)> {
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let d = p.distance(g);
            if d <= radius {
                edges.push((d, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_to: Vec<Option<usize>> = vec![None; predicted.len()];
    let mut gold_to: Vec<Option<usize>> = vec![None; gold.len()];
    for &(_, i, j) in &edges {
        if pred_to[i].is_none() && gold_to[j].is_none() {
            pred_to[i] = Some(j);
            gold_to[j] = Some(i);
        }
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); predicted.len()];
    for &(_, i, j) in &edges {
        adj[i].push(j);
    }
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], pred_to: &mut [Option<usize>], gold_to: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if gold_to[j].is_none_or(|k| augment(k, adj, seen, pred_to, gold_to)) {
                pred_to[i] = Some(j);
                gold_to[j] = Some(i);
                return true;
            }
        }
        false
    }
    for i in 0..predicted.len() {
        if pred_to[i].is_none() {
            let mut seen = vec![false; gold.len()];
            augment(i, &adj, &mut seen, &mut pred_to, &mut gold_to);
        }
    }
    pred_to.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect()
}

/// Per-category tp/fp/fn for one scene.
pub fn match_detections(
    predicted: &[(Category, Vec3<f64>)],
    gold: &[(Category, Vec3<f64>)],
    radius: f64,
) -> ConfusionCounts {
    let cats: BTreeSet<Category> = predicted.iter().chain(gold).map(|(c, _)| *c).collect();
    let mut out = ConfusionCounts::default();
    for c in cats {
        let p: Vec<_> = predicted.iter().filter(|(k, _)| *k == c).map(|(_, v)| *v).collect();
        let g: Vec<_> = gold.iter().filter(|(k, _)| *k == c).map(|(_, v)| *v).collect();
        let tp = match_pairs(&p, &g, radius).len() as u64;
        out.per_category.insert(c, Counts::new(tp, p.len() as u64 - tp, g.len() as u64 - tp));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub mode: Aggregation,
    pub per_category: BTreeMap<Category, Prf>,
    pub aggregate: Prf,
}

/// Micro pools counts before the ratios; macro averages the per-category
/// scores over categories with any counts.
pub fn compute_metrics(counts: &ConfusionCounts, mode: Aggregation) -> DetectionMetrics {
    let per_category: BTreeMap<Category, Prf> =
        counts.per_category.iter().map(|(c, n)| (*c, Prf::from_counts(*n))).collect();
    let aggregate = match mode {
        Aggregation::Micro => Prf::from_counts(counts.total()),
        Aggregation::Macro => {
            let used: Vec<Prf> = counts
                .per_category
                .iter()
                .filter(|(_, n)| !n.is_empty())
                .map(|(c, _)| per_category[c])
                .collect();
            if used.is_empty() {
                Prf::default()
            } else {
                let k = used.len() as f64;
                Prf {
                    precision: used.iter().map(|p| p.precision).sum::<f64>() / k,
                    recall: used.iter().map(|p| p.recall).sum::<f64>() / k,
                    f1: used.iter().map(|p| p.f1).sum::<f64>() / k,
                }
            }
        }
    };
    DetectionMetrics { mode, per_category, aggregate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasoningTask {
    VehicleLidar,
    VehicleVision,
    Environmental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: ReasoningTask,
    pub partition: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("case ids do not line up (only predicted: {only_predicted:?}, only gold: {only_gold:?})")]
    CaseMismatch { only_predicted: Vec<String>, only_gold: Vec<String> },
    #[error("no cases for {task:?} / {partition}")]
    NoCases { task: ReasoningTask, partition: String },
}

/// Exact-match accuracy of verdicts keyed by case id.
pub fn reasoning_accuracy(
    predictions: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
    task: ReasoningTask,
    partition: &str,
) -> Result<TaskAccuracy, EvalError> {
    let only_predicted: Vec<String> = predictions.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    let only_gold: Vec<String> = gold.keys().filter(|k| !predictions.contains_key(*k)).cloned().collect();
    if !only_predicted.is_empty() || !only_gold.is_empty() {
        return Err(EvalError::CaseMismatch { only_predicted, only_gold });
    }
    let total = gold.len() as u64;
    if total == 0 {
        return Err(EvalError::NoCases { task, partition: partition.to_owned() });
    }
    let correct = gold.iter().filter(|(k, v)| predictions[*k] == **v).count() as u64;
    Ok(TaskAccuracy { task, partition: partition.to_owned(), correct, total, accuracy: correct as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledDetection {
    /// Scene the detection belongs to; matching never crosses scenes.
    #[serde(default)]
    pub frame: u64,
    pub category: Category,
    pub position: Vec3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub id: String,
    pub task: ReasoningTask,
    pub partition: String,
    pub verdict: String,
}

/// Shape shared by prediction and gold files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalFile {
    #[serde(default)]
    pub detections: Vec<LabeledDetection>,
    #[serde(default)]
    pub cases: Vec<Case>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radius: f64,
    pub counts: ConfusionCounts,
    pub micro: DetectionMetrics,
    #[serde(rename = "macro")]
    pub macro_: DetectionMetrics,
    pub accuracy: Vec<TaskAccuracy>,
}

/// Scores a prediction file against a gold file.
pub fn evaluate(predicted: &EvalFile, gold: &EvalFile, radius: f64) -> Result<EvalReport, EvalError> {
    let frames: BTreeSet<u64> = predicted.detections.iter().chain(&gold.detections).map(|d| d.frame).collect();
    let mut counts = ConfusionCounts::default();
    for f in frames {
        let pick = |file: &EvalFile| -> Vec<(Category, Vec3<f64>)> {
            file.detections.iter().filter(|d| d.frame == f).map(|d| (d.category, d.position)).collect()
        };
        counts.merge(&match_detections(&pick(predicted), &pick(gold), radius));
    }

    type Groups = BTreeMap<(ReasoningTask, String), BTreeMap<String, String>>;
    let group = |file: &EvalFile| -> Groups {
        let mut g: Groups = BTreeMap::new();
        for c in &file.cases {
            g.entry((c.task, c.partition.clone())).or_default().insert(c.id.clone(), c.verdict.clone());
        }
        g
    };
    let (p, g) = (group(predicted), group(gold));
    let keys: BTreeSet<_> = p.keys().chain(g.keys()).cloned().collect();
    let empty = BTreeMap::new();
    let accuracy = keys
        .iter()
        .map(|k| reasoning_accuracy(p.get(k).unwrap_or(&empty), g.get(k).unwrap_or(&empty), k.0, &k.1))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(EvalReport {
        radius,
        micro: compute_metrics(&counts, Aggregation::Micro),
        macro_: compute_metrics(&counts, Aggregation::Macro),
        counts,
        accuracy,
    })
}
