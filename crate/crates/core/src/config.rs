//! Numerical tolerances shared by the analysis pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances that callers may override; every field must be positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Roots of `det R` must have real part below `-hurwitz`.
    pub hurwitz: f64,
    /// Relative singular-value cutoff for rank decisions on `F⁺`.
    pub rank: f64,
    /// Relative range residual for the consistency test.
    pub consistency: f64,
    /// Strictness margin as a multiple of the largest `‖A_k‖`.
    pub strictness: f64,
    /// Margin slack when re-verifying a certificate, relative to the
    /// scale of each constraint.
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hurwitz: 1e-9,
            rank: 1e-9,
            consistency: 1e-8,
            strictness: 1e-7,
            verify: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hurwitz", self.hurwitz),
            ("rank", self.rank),
            ("consistency", self.consistency),
            ("strictness", self.strictness),
            ("verify", self.verify),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("tolerance `{name}` must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Tolerances = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }
}
