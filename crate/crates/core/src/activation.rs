use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Piecewise-linear activation `x` for `x >= 0` and `kappa * x` otherwise.
///
/// `kappa < 0.5` keeps the convex reformulation exact. Ties at zero take the
/// positive branch everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    kappa: f64,
}

impl ActivationSpec {
    pub fn new(kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa >= 0.5 {
            return invalid(format!("activation slope must be finite and < 0.5, got {kappa}"));
        }
        Ok(Self { kappa })
    }

    pub fn relu() -> Self {
        Self { kappa: 0.0 }
    }

    pub fn leaky(kappa: f64) -> Result<Self> {
        Self::new(kappa)
    }

    pub fn absolute() -> Self {
        Self { kappa: -1.0 }
    }

    /// Parses `relu`, `abs`, `leaky:<slope>` or a bare slope.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "relu" => Ok(Self::relu()),
            "abs" | "absolute" => Ok(Self::absolute()),
            "leaky" => Self::new(0.1),
            other => {
                let slope = other.strip_prefix("leaky:").unwrap_or(other);
                match slope.parse::<f64>() {
                    Ok(k) => Self::new(k),
                    Err(_) => invalid(format!("unknown activation '{other}'")),
                }
            }
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn apply(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x
        } else {
            self.kappa * x
        }
    }

    /// Derivative with the positive branch taken at zero.
    pub fn slope(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            self.kappa
        }
    }

    /// Diagonal entry of the gate for one arrangement bit.
    pub fn gate(&self, bit: bool) -> f64 {
        if bit {
            1.0
        } else {
            self.kappa
        }
    }

    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.map(|x| self.apply(x))
    }

    /// Lipschitz constant of the activation.
    pub fn lipschitz(&self) -> f64 {
        self.kappa.abs().max(1.0)
    }

    pub fn name(&self) -> String {
        if self.kappa == 0.0 {
            "relu".into()
        } else if self.kappa == -1.0 {
            "abs".into()
        } else {
            format!("leaky:{}", self.kappa)
        }
    }
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self::relu()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_large_slope() {
        assert!(ActivationSpec::new(0.5).is_err());
        assert!(ActivationSpec::new(f64::NAN).is_err());
        assert!(ActivationSpec::new(0.49).is_ok());
    }

    #[test]
    fn presets_match_definitions() {
        let abs = ActivationSpec::absolute();
        assert_eq!(abs.apply(-3.0), 3.0);
        assert_eq!(abs.apply(2.0), 2.0);
        let relu = ActivationSpec::relu();
        assert_eq!(relu.apply(-3.0), 0.0);
        assert_eq!(relu.slope(0.0), 1.0);
        let leaky = ActivationSpec::parse("leaky:0.2").unwrap();
        assert!((leaky.apply(-1.0) + 0.2).abs() < 1e-15);
        assert_eq!(ActivationSpec::parse("abs").unwrap(), abs);
    }
}
