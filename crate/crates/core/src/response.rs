//! Urgency scoring, top-issue selection and maneuver choice.
//!
//! Urgency is a category weight plus a magnitude clamped to 1. With weights
//! spaced by exactly 1, an insight from a higher-priority category is never
//! outranked by one from a lower category.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::trace::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsightCategory {
    Safety,
    Maintenance,
    Efficiency,
    Comfort,
}

impl InsightCategory {
    pub const ALL: [InsightCategory; 4] = [
        InsightCategory::Safety,
        InsightCategory::Maintenance,
        InsightCategory::Efficiency,
        InsightCategory::Comfort,
    ];

    /// Higher is more urgent.
    pub fn priority(self) -> u8 {
        match self {
            InsightCategory::Safety => 3,
            InsightCategory::Maintenance => 2,
            InsightCategory::Efficiency => 1,
            InsightCategory::Comfort => 0,
        }
    }
}

impl fmt::Display for InsightCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InsightCategory::Safety => "safety",
            InsightCategory::Maintenance => "maintenance",
            InsightCategory::Efficiency => "efficiency",
            InsightCategory::Comfort => "comfort",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Insight {
    pub id: String,
    pub description: String,
    pub category: InsightCategory,
    pub magnitude: f64,
    pub t: Timestamp,
}

impl Insight {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(format!("insight {}: magnitude must be non-negative", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateResponse {
    pub id: String,
    pub action: String,
    pub intrusiveness: f64,
    pub risk_reduction: f64,
}

impl CandidateResponse {
    fn new(id: &str, action: &str, risk_reduction: f64, intrusiveness: f64) -> Self {
        Self { id: id.into(), action: action.into(), intrusiveness, risk_reduction }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.intrusiveness) || !unit(self.risk_reduction) {
            return Err(format!("candidate {}: scores must lie in [0, 1]", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalResponse {
    pub top_insight: Insight,
    pub chosen_response: CandidateResponse,
    pub secondary: Vec<Insight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryWeights {
    pub safety: f64,
    pub maintenance: f64,
    pub efficiency: f64,
    pub comfort: f64,
}

impl Default for CategoryWeights {
    fn default() -> Self {
        Self { safety: 3.0, maintenance: 2.0, efficiency: 1.0, comfort: 0.0 }
    }
}

impl CategoryWeights {
    pub fn get(&self, c: InsightCategory) -> f64 {
        match c {
            InsightCategory::Safety => self.safety,
            InsightCategory::Maintenance => self.maintenance,
            InsightCategory::Efficiency => self.efficiency,
            InsightCategory::Comfort => self.comfort,
        }
    }

    fn max(&self) -> f64 {
        InsightCategory::ALL.iter().map(|c| self.get(*c)).fold(0.0, f64::max)
    }
}

pub type Catalog = BTreeMap<InsightCategory, Vec<CandidateResponse>>;

pub fn default_catalog() -> Catalog {
    BTreeMap::from([
        (
            InsightCategory::Safety,
            vec![
                CandidateResponse::new("emergency-brake", "apply emergency braking", 0.9, 0.9),
                CandidateResponse::new("slow-down", "reduce speed and increase headway", 0.6, 0.4),
                CandidateResponse::new("yield", "yield to the flagged road user", 0.5, 0.3),
            ],
        ),
        (
            InsightCategory::Maintenance,
            vec![
                CandidateResponse::new("pull-over-inspect", "pull over and inspect the sensors", 0.7, 0.8),
                CandidateResponse::new("schedule-service", "schedule sensor recalibration", 0.3, 0.1),
            ],
        ),
        (
            InsightCategory::Efficiency,
            vec![
                CandidateResponse::new("reroute", "reroute around the disturbance", 0.4, 0.3),
                CandidateResponse::new("adjust-speed", "adjust cruising speed", 0.3, 0.2),
            ],
        ),
        (
            InsightCategory::Comfort,
            vec![CandidateResponse::new("smooth-acceleration", "smooth acceleration and steering", 0.2, 0.1)],
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseParams {
    pub weights: CategoryWeights,
    pub magnitude_clamp: f64,
    pub intrusiveness_penalty: f64,
    pub catalog: Catalog,
}

impl Default for ResponseParams {
    fn default() -> Self {
        Self {
            weights: CategoryWeights::default(),
            magnitude_clamp: 1.0,
            intrusiveness_penalty: 0.5,
            catalog: default_catalog(),
        }
    }
}

impl ResponseParams {
    pub fn validate(&self) -> Result<(), String> {
        if InsightCategory::ALL.iter().any(|c| {
            let w = self.weights.get(*c);
            !(w.is_finite() && w >= 0.0)
        }) {
            return Err("response.weights must be non-negative".into());
        }
        if self.weights.max() <= 0.0 {
            return Err("response.weights must not all be zero".into());
        }
        if !(self.magnitude_clamp.is_finite() && self.magnitude_clamp > 0.0) {
            return Err("response.magnitude_clamp must be positive".into());
        }
        if !(self.intrusiveness_penalty.is_finite() && self.intrusiveness_penalty >= 0.0) {
            return Err("response.intrusiveness_penalty must be non-negative".into());
        }
        for c in InsightCategory::ALL {
            let list = self.catalog.get(&c).ok_or(format!("response.catalog has no entry for {c}"))?;
            if list.is_empty() {
                return Err(format!("response.catalog entry for {c} is empty"));
            }
            for r in list {
                r.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ResponseError {
    #[error("no insights to prioritize")]
    EmptyInsightSet,
    #[error("catalog has no candidates for {0}")]
    EmptyCatalog(InsightCategory),
}

/// Ψ = W(c) + min(magnitude, clamp).
pub fn urgency<T: Real>(weight: T, magnitude: T, clamp: T) -> T {
    weight + magnitude.min(clamp)
}

/// risk_reduction × min(1, W(c)/W_max + min(magnitude, clamp)) − penalty × intrusiveness.
pub fn utility<T: Real>(risk_reduction: T, intrusiveness: T, weight_ratio: T, magnitude: T, clamp: T, penalty: T) -> T {
    let severity = (weight_ratio + magnitude.min(clamp)).min(T::one());
    risk_reduction * severity - penalty * intrusiveness
}

impl ResponseParams {
    pub fn score_urgency(&self, insight: &Insight) -> f64 {
        urgency(self.weights.get(insight.category), insight.magnitude, self.magnitude_clamp)
    }

    pub fn score_response(&self, candidate: &CandidateResponse, top: &Insight) -> f64 {
        utility(
            candidate.risk_reduction,
            candidate.intrusiveness,
            self.weights.get(top.category) / self.weights.max(),
            top.magnitude,
            self.magnitude_clamp,
            self.intrusiveness_penalty,
        )
    }

    /// Urgency ordering: Ψ descending, then category priority, earlier t,
    /// smaller id. Remaining fields only separate otherwise-identical keys.
    pub fn urgency_order(&self, a: &Insight, b: &Insight) -> Ordering {
        self.score_urgency(b)
            .total_cmp(&self.score_urgency(a))
            .then(b.category.priority().cmp(&a.category.priority()))
            .then(a.t.total_cmp(&b.t))
            .then(a.id.cmp(&b.id))
            .then(a.magnitude.total_cmp(&b.magnitude))
            .then(a.description.cmp(&b.description))
    }

    pub fn select_top(&self, insights: &[Insight]) -> Result<(Insight, Vec<Insight>), ResponseError> {
        let mut sorted = insights.to_vec();
        sorted.sort_by(|a, b| self.urgency_order(a, b));
        let mut it = sorted.into_iter();
        let top = it.next().ok_or(ResponseError::EmptyInsightSet)?;
        Ok((top, it.collect()))
    }

    pub fn enumerate_candidates(&self, top: &Insight) -> Vec<CandidateResponse> {
        self.catalog.get(&top.category).cloned().unwrap_or_default()
    }

    pub fn generate_response(&self, insights: &[Insight]) -> Result<FinalResponse, ResponseError> {
        let (top, secondary) = self.select_top(insights)?;
        let candidates = self.enumerate_candidates(&top);
        let mut best: Option<(f64, &CandidateResponse)> = None;
        for c in &candidates {
            let s = self.score_response(c, &top);
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, c));
            }
        }
        let chosen = best.ok_or(ResponseError::EmptyCatalog(top.category))?.1.clone();
        Ok(FinalResponse { top_insight: top, chosen_response: chosen, secondary })
    }

    /// Checks a response against the insight set it was produced from.
    pub fn check_response(&self, response: &FinalResponse, insights: &[Insight]) -> Result<(), String> {
        response.top_insight.validate()?;
        response.chosen_response.validate()?;
        if !self.enumerate_candidates(&response.top_insight).contains(&response.chosen_response) {
            return Err("chosen response is not in the catalog for the top insight".into());
        }
        if response.secondary.contains(&response.top_insight) {
            return Err("top insight repeated among secondary insights".into());
        }
        let mut given: Vec<Insight> = insights.to_vec();
        let mut got: Vec<Insight> = response.secondary.clone();
        got.push(response.top_insight.clone());
        given.sort_by(|a, b| self.urgency_order(a, b));
        got.sort_by(|a, b| self.urgency_order(a, b));
        if given != got {
            return Err("top and secondary insights do not partition the input".into());
        }
        if response
            .secondary
            .windows(2)
            .any(|w| self.urgency_order(&w[0], &w[1]) == Ordering::Greater)
        {
            return Err("secondary insights are not in urgency order".into());
        }
        if let Some(first) = response.secondary.first() {
            if self.urgency_order(&response.top_insight, first) == Ordering::Greater {
                return Err("a secondary insight outranks the top insight".into());
            }
        }
        Ok(())
    }
}

pub fn score_urgency(insight: &Insight) -> f64 {
    ResponseParams::default().score_urgency(insight)
}

pub fn select_top(insights: &[Insight]) -> Result<(Insight, Vec<Insight>), ResponseError> {
    ResponseParams::default().select_top(insights)
}

pub fn enumerate_candidates(top: &Insight) -> Vec<CandidateResponse> {
    ResponseParams::default().enumerate_candidates(top)
}

pub fn score_response(candidate: &CandidateResponse, top: &Insight) -> f64 {
    ResponseParams::default().score_response(candidate, top)
}

pub fn generate_response(insights: &[Insight]) -> Result<FinalResponse, ResponseError> {
    ResponseParams::default().generate_response(insights)
}
