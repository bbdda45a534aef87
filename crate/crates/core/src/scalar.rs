//! Scalar abstraction shared by the numeric kernels.
//!
//! Distances, threshold ratios, urgency scores and detection metrics are all
//! written against [`Real`] so they can be evaluated in `f32` on constrained
//! targets and in `f64` everywhere else. Sensor records themselves are stored
//! as `f64`, which is what the trace format carries.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Converts an `f64` literal, panicking only for types that cannot hold it.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Lossy conversion back to `f64` for reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
