//! Route classification, kinematic thresholds and critical-timestamp selection.
//!
//! Routes are classified from average speed and an ordinal urban-complexity
//! indicator. The category scales the kinematic baselines (angular velocity
//! 10 deg/s, horizontal linear acceleration 8 m/s², yaw rate 10 deg/s), and
//! every IMU sample whose strongest signal/threshold ratio reaches 1 becomes
//! a candidate critical timestamp. Candidates closer together than the
//! refractory window are merged, keeping the strongest.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::trace::{ImuSample, RouteMeta, SensorTrace, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteCategory {
    /// High speed, low complexity.
    R1,
    /// Medium speed, medium complexity.
    R2,
    /// Variable speed, high complexity.
    R3,
}

impl RouteCategory {
    fn index(self) -> usize {
        match self {
            RouteCategory::R1 => 0,
            RouteCategory::R2 => 1,
            RouteCategory::R3 => 2,
        }
    }
}

impl fmt::Display for RouteCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteCategory::R1 => "r1",
            RouteCategory::R2 => "r2",
            RouteCategory::R3 => "r3",
        })
    }
}

/// Per-signal kinematic limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet<T = f64> {
    /// deg/s
    pub angular_velocity_max: T,
    /// m/s², horizontal plane
    pub linear_accel_max: T,
    /// deg/s
    pub yaw_rate_max: T,
}

impl<T: Real> ThresholdSet<T> {
    pub fn baseline() -> Self {
        Self {
            angular_velocity_max: T::lit(10.0),
            linear_accel_max: T::lit(8.0),
            yaw_rate_max: T::lit(10.0),
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            angular_velocity_max: self.angular_velocity_max * factor,
            linear_accel_max: self.linear_accel_max * factor,
            yaw_rate_max: self.yaw_rate_max * factor,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.angular_velocity_max, self.linear_accel_max, self.yaw_rate_max]
            .iter()
            .all(|v| v.is_finite() && *v > T::zero())
    }

    /// Same thresholds with one signal replaced, used by sensitivity checks.
    pub fn with(&self, factor: Factor, value: T) -> Self {
        let mut out = *self;
        match factor {
            Factor::Turning => out.angular_velocity_max = value,
            Factor::AccelBrake => out.linear_accel_max = value,
            Factor::OrientationChange => out.yaw_rate_max = value,
        }
        out
    }

    pub fn get(&self, factor: Factor) -> T {
        match factor {
            Factor::Turning => self.angular_velocity_max,
            Factor::AccelBrake => self.linear_accel_max,
            Factor::OrientationChange => self.yaw_rate_max,
        }
    }
}

/// The kinematic signal that triggered a critical timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    Turning,
    AccelBrake,
    OrientationChange,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Turning, Factor::AccelBrake, Factor::OrientationChange];

    /// Tie-break rank when two signals have equal ratios. Yaw is the
    /// vertical component of angular velocity, so a pure yaw motion ties the
    /// two; the more specific factor wins.
    fn precedence(self) -> u8 {
        match self {
            Factor::OrientationChange => 2,
            Factor::Turning => 1,
            Factor::AccelBrake => 0,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Turning => "Turning",
            Factor::AccelBrake => "AccelBrake",
            Factor::OrientationChange => "OrientationChange",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalEvent {
    pub t: Timestamp,
    pub factor: Factor,
    /// Observed signal over threshold, at least 1.
    pub exceedance: f64,
}

/// Tunables for classification and selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiltrationParams {
    pub baseline: ThresholdSet<f64>,
    /// Scale applied to the baseline for r1, r2, r3.
    pub category_scale: [f64; 3],
    /// m/s; low-complexity routes at or above this average are r1.
    pub high_speed_cutoff: f64,
    /// s
    pub refractory: f64,
    /// Explicit thresholds; when set, route classification does not scale them.
    pub thresholds_override: Option<ThresholdSet<f64>>,
}

impl Default for FiltrationParams {
    fn default() -> Self {
        Self {
            baseline: ThresholdSet::baseline(),
            category_scale: [1.0, 0.8, 0.6],
            high_speed_cutoff: 6.0,
            refractory: 0.5,
            thresholds_override: None,
        }
    }
}

impl FiltrationParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.baseline.is_valid() {
            return Err("filtration.baseline must be positive and finite".into());
        }
        if self.category_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err("filtration.category_scale entries must be positive".into());
        }
        if !(self.high_speed_cutoff.is_finite() && self.high_speed_cutoff >= 0.0) {
            return Err("filtration.high_speed_cutoff must be non-negative".into());
        }
        if !(self.refractory.is_finite() && self.refractory >= 0.0) {
            return Err("filtration.refractory must be non-negative".into());
        }
        if let Some(t) = &self.thresholds_override {
            if !t.is_valid() {
                return Err("filtration.thresholds_override must be positive".into());
            }
        }
        Ok(())
    }

    pub fn classify<T: Real>(&self, avg_speed: T, complexity: u8) -> RouteCategory {
        match complexity {
            0 if avg_speed >= T::lit(self.high_speed_cutoff) => RouteCategory::R1,
            0 | 1 => RouteCategory::R2,
            _ => RouteCategory::R3,
        }
    }

    pub fn thresholds<T: Real>(&self, category: RouteCategory) -> ThresholdSet<T> {
        let b = &self.baseline;
        let base = ThresholdSet {
            angular_velocity_max: T::lit(b.angular_velocity_max),
            linear_accel_max: T::lit(b.linear_accel_max),
            yaw_rate_max: T::lit(b.yaw_rate_max),
        };
        base.scaled(T::lit(self.category_scale[category.index()]))
    }
}

/// Route category from average speed and complexity (0 small, 1 medium, 2 large).
pub fn classify_route<T: Real>(avg_speed: T, complexity: u8) -> RouteCategory {
    FiltrationParams::default().classify(avg_speed, complexity)
}

/// Baselines scaled for the category. Speed and complexity only act through
/// the category.
pub fn derive_thresholds<T: Real>(_avg_speed: T, _complexity: u8, category: RouteCategory) -> ThresholdSet<T> {
    FiltrationParams::default().thresholds(category)
}

/// Output of the filtration agent: route category plus the thresholds in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteAssessment {
    pub category: RouteCategory,
    pub thresholds: ThresholdSet<f64>,
}

impl RouteAssessment {
    pub fn for_route(meta: &RouteMeta, params: &FiltrationParams) -> Self {
        let category = params.classify(meta.avg_speed, meta.dynamic_level.complexity());
        let thresholds = params.thresholds_override.unwrap_or_else(|| params.thresholds(category));
        Self { category, thresholds }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FiltrationError {
    #[error("IMU stream is empty")]
    EmptyImuStream,
    #[error("thresholds must be strictly positive and finite")]
    InvalidThresholds,
    #[error("refractory window must be non-negative")]
    InvalidRefractory,
}

/// Ratios |signal| / threshold in [`Factor::ALL`] order.
pub fn signal_ratios<T: Real>(
    angular_velocity: &Vec3<T>,
    linear_acceleration: &Vec3<T>,
    yaw_rate: T,
    thresholds: &ThresholdSet<T>,
) -> [T; 3] {
    [
        angular_velocity.norm() / thresholds.angular_velocity_max,
        linear_acceleration.horizontal_norm() / thresholds.linear_accel_max,
        yaw_rate.abs() / thresholds.yaw_rate_max,
    ]
}

/// The dominant factor and its ratio.
pub fn dominant_factor<T: Real>(ratios: &[T; 3]) -> (Factor, T) {
    let mut best = (Factor::ALL[0], ratios[0]);
    for (f, r) in Factor::ALL.into_iter().zip(ratios.iter().copied()).skip(1) {
        if r > best.1 || (r == best.1 && f.precedence() > best.0.precedence()) {
            best = (f, r);
        }
    }
    best
}

/// Ratio evaluation for one IMU sample.
pub fn sample_exceedance(sample: &ImuSample, thresholds: &ThresholdSet<f64>) -> (Factor, f64) {
    dominant_factor(&signal_ratios(
        &sample.angular_velocity,
        &sample.linear_acceleration,
        sample.yaw_rate,
        thresholds,
    ))
}

/// Selects critical timestamps from the IMU stream.
///
/// Every sample with a dominant ratio ≥ 1 is a candidate. Candidates whose
/// consecutive gaps are within `refractory` form one cluster, represented by
/// its strongest member (earliest on ties). With `refractory = 0` every
/// candidate is kept.
pub fn select_critical_timestamps(
    trace: &SensorTrace,
    thresholds: &ThresholdSet<f64>,
    refractory: f64,
) -> Result<Vec<CriticalEvent>, FiltrationError> {
    select_from_imu(&trace.imu, thresholds, refractory)
}

pub fn select_from_imu(
    imu: &[ImuSample],
    thresholds: &ThresholdSet<f64>,
    refractory: f64,
) -> Result<Vec<CriticalEvent>, FiltrationError> {
    if imu.is_empty() {
        return Err(FiltrationError::EmptyImuStream);
    }
    if !thresholds.is_valid() {
        return Err(FiltrationError::InvalidThresholds);
    }
    if !(refractory.is_finite() && refractory >= 0.0) {
        return Err(FiltrationError::InvalidRefractory);
    }

    let mut events: Vec<CriticalEvent> = Vec::new();
    let mut last_candidate_t: Option<f64> = None;
    for s in imu {
        let (factor, ratio) = sample_exceedance(s, thresholds);
        if ratio < 1.0 {
            continue;
        }
        let candidate = CriticalEvent { t: s.t, factor, exceedance: ratio };
        let joins = matches!(last_candidate_t, Some(prev) if s.t - prev <= refractory && refractory > 0.0);
        last_candidate_t = Some(s.t);
        match events.last_mut() {
            Some(current) if joins => {
                if candidate.exceedance > current.exceedance {
                    *current = candidate;
                }
            }
            _ => events.push(candidate),
        }
    }
    Ok(events)
}
