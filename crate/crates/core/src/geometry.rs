//! Three-component vectors in the ego frame (x forward, y left, z up, meters).

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A 3-vector. Serialized as a `[x, y, z]` array, matching the trace format.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 3]", into = "[T; 3]")]
#[serde(bound(serialize = "T: Serialize + Copy", deserialize = "T: Deserialize<'de>"))]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 3]> for Vec3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Euclidean norm, computed with `hypot` to avoid overflow for large coordinates.
    pub fn norm(&self) -> T {
        self.x.hypot(self.y).hypot(self.z)
    }

    /// Norm of the (x, y) components only.
    pub fn horizontal_norm(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Cosine of the angle between two vectors; `None` when either is zero.
    pub fn cosine(&self, other: &Self) -> Option<T> {
        let denom = self.norm() * other.norm();
        if denom > T::zero() {
            Some(self.dot(other) / denom)
        } else {
            None
        }
    }

    /// Arithmetic mean; the zero vector for an empty input.
    pub fn mean<I: IntoIterator<Item = Self>>(items: I) -> Self {
        let mut sum = Self::zero();
        let mut n = 0usize;
        for v in items {
            sum += v;
            n += 1;
        }
        if n == 0 {
            sum
        } else {
            sum / T::from_usize(n).expect("count representable")
        }
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        let c = |v: T| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan);
        Vec3::new(c(self.x), c(self.y), c(self.z))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Self::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl<T: Real> Div<T> for Vec3<T> {
    type Output = Self;
    fn div(self, rhs: T) -> Self {
        Self::new(self.x / rhs, self.y / rhs, self.z / rhs)
    }
}
