//! Certified intervals.

use crate::linalg::CMat;
use serde::{Deserialize, Serialize};

/// How an upper endpoint was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Direct evaluation; the interval has width zero up to SVD accuracy.
    Exact,
    /// Feasible point of a semidefinite program, evaluated exactly after repair.
    Sdp { dual_bound: f64, repair: f64 },
    /// Maximum over codomain blocks of certified extension cb-norms.
    Extension { block_values: Vec<f64> },
    /// Sum of norms over a decomposition.
    Triangle,
    /// Derived from other certified bounds by the named rule.
    Derived { rule: String },
    /// No upper bound available.
    Unbounded,
}

/// An element achieving the lower endpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub level: usize,
    #[serde(with = "crate::json::cmat_vec")]
    pub coefficients: Vec<CMat>,
    /// Certified ratio or value reproduced by re-evaluating the witness.
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormBound {
    pub lower: f64,
    pub upper: f64,
    pub lower_witness: Option<Witness>,
    pub upper_certificate: Certificate,
}

impl NormBound {
    pub fn exact(v: f64) -> Self {
        NormBound {
            lower: v,
            upper: v,
            lower_witness: None,
            upper_certificate: Certificate::Exact,
        }
    }

    pub fn new(lower: f64, upper: f64, cert: Certificate) -> Self {
        NormBound {
            lower,
            upper,
            lower_witness: None,
            upper_certificate: cert,
        }
    }

    pub fn lower_only(lower: f64, witness: Option<Witness>) -> Self {
        NormBound {
            lower,
            upper: f64::INFINITY,
            lower_witness: witness,
            upper_certificate: Certificate::Unbounded,
        }
    }

    pub fn with_witness(mut self, w: Option<Witness>) -> Self {
        self.lower_witness = w;
        self
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        if self.upper.is_finite() {
            0.5 * (self.lower + self.upper)
        } else {
            self.lower
        }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        self.lower - tol <= v && v <= self.upper + tol
    }

    pub fn is_consistent(&self, slack: f64) -> bool {
        self.lower <= self.upper + slack
    }

    /// Both endpoints multiplied by `t >= 0`.
    pub fn scaled(&self, t: f64) -> Self {
        let mut b = self.clone();
        b.lower *= t;
        b.upper *= t;
        if let Some(w) = b.lower_witness.as_mut() {
            w.value *= t;
        }
        b
    }

    /// Tightest combination of two bounds on the same quantity.
    pub fn intersect(&self, other: &NormBound) -> NormBound {
        let (lower, lower_witness) = if other.lower > self.lower {
            (other.lower, other.lower_witness.clone())
        } else {
            (self.lower, self.lower_witness.clone())
        };
        let (upper, upper_certificate) = if other.upper < self.upper {
            (other.upper, other.upper_certificate.clone())
        } else {
            (self.upper, self.upper_certificate.clone())
        };
        NormBound {
            lower,
            upper,
            lower_witness,
            upper_certificate,
        }
    }
}
