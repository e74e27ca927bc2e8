use serde::{Deserialize, Serialize};

use crate::error::{domain, DqlmError, Result};

/// Target quantile level τ with the mixture constants it induces.
///
/// `a_tau = (1 - 2τ) / (τ(1 - τ))` shifts the normal component and
/// `b_tau = 2 / (τ(1 - τ))` scales its variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileSpec {
    tau: f64,
    a_tau: f64,
    b_tau: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return domain(format!("quantile level must lie in (0, 1), got {tau}"));
        }
        let v = tau * (1.0 - tau);
        Ok(Self {
            tau,
            a_tau: (1.0 - 2.0 * tau) / v,
            b_tau: 2.0 / v,
        })
    }

    pub fn median() -> Self {
        Self::new(0.5).expect("0.5 is a valid quantile")
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn a_tau(&self) -> f64 {
        self.a_tau
    }

    #[inline]
    pub fn b_tau(&self) -> f64 {
        self.b_tau
    }

    /// Check loss `ρ_τ(u) = u (τ - I(u < 0))`.
    #[inline]
    pub fn check_loss(&self, u: f64) -> f64 {
        if u < 0.0 {
            u * (self.tau - 1.0)
        } else {
            u * self.tau
        }
    }
}

impl TryFrom<f64> for QuantileSpec {
    type Error = DqlmError;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<QuantileSpec> for f64 {
    fn from(q: QuantileSpec) -> f64 {
        q.tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_follow_tau() {
        let q = QuantileSpec::new(0.1).unwrap();
        approx::assert_relative_eq!(q.a_tau(), 0.8 / 0.09, max_relative = 1e-15);
        approx::assert_relative_eq!(q.b_tau(), 2.0 / 0.09, max_relative = 1e-15);
        let m = QuantileSpec::median();
        assert_eq!(m.a_tau(), 0.0);
        assert_eq!(m.b_tau(), 8.0);
    }

    #[test]
    fn rejects_out_of_range() {
        for t in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(QuantileSpec::new(t).is_err());
        }
    }

    #[test]
    fn check_loss_is_asymmetric() {
        let q = QuantileSpec::new(0.25).unwrap();
        assert_eq!(q.check_loss(2.0), 0.5);
        assert_eq!(q.check_loss(-2.0), 1.5);
        assert_eq!(q.check_loss(0.0), 0.0);
    }

    #[test]
    fn converts_through_tau() {
        let q = QuantileSpec::try_from(0.9).unwrap();
        assert_eq!(f64::from(q), 0.9);
        assert!(QuantileSpec::try_from(2.0).is_err());
    }
}
