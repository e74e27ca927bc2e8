//! Kullback–Leibler bridge between gamma laws and normal laws on the log
//! scale.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// `Ga(shape, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaMoments {
    pub shape: f64,
    pub rate: f64,
}

impl GammaMoments {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return domain(format!("gamma law needs positive shape and rate, got ({shape}, {rate})"));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

/// Normal law of `ζ = log θ`: `N(log_mean, log_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalMoments {
    pub log_mean: f64,
    pub log_var: f64,
}

impl LognormalMoments {
    pub fn new(log_mean: f64, log_var: f64) -> Result<Self> {
        if !log_mean.is_finite() || !(log_var > 0.0 && log_var.is_finite()) {
            return domain(format!("lognormal needs finite mean and positive variance, got ({log_mean}, {log_var})"));
        }
        Ok(Self { log_mean, log_var })
    }

    /// `E(θ) = exp(μ + σ²/2)`.
    pub fn mean(&self) -> f64 {
        (self.log_mean + 0.5 * self.log_var).exp()
    }

    /// `V(θ) ≈ exp(2μ + σ²) σ²`, the linearized variance used alongside the
    /// gamma bridge.
    pub fn approx_variance(&self) -> f64 {
        (2.0 * self.log_mean + self.log_var).exp() * self.log_var
    }
}

/// Normal approximation to `log θ` for `θ ~ Ga(a, b)`:
/// `E(ζ) ≈ log(a/b) - 1/(2a)`, `V(ζ) ≈ 1/a`.
pub fn gamma_to_lognormal(g: &GammaMoments) -> Result<LognormalMoments> {
    let g = GammaMoments::new(g.shape, g.rate)?;
    LognormalMoments::new((g.shape / g.rate).ln() - 0.5 / g.shape, 1.0 / g.shape)
}

/// Gamma law closest in KL to `LN(μ, σ²)`: `a = 1/σ²`,
/// `b = exp(-(μ + σ²/2))/σ²`. Defined only for `σ² < 1`, where the gamma
/// mode exists.
pub fn lognormal_to_gamma(l: &LognormalMoments) -> Result<GammaMoments> {
    let l = LognormalMoments::new(l.log_mean, l.log_var)?;
    if l.log_var >= 1.0 {
        return domain(format!(
            "lognormal variance {} >= 1: the matching gamma has no interior mode",
            l.log_var
        ));
    }
    let a = 1.0 / l.log_var;
    GammaMoments::new(a, a * (-(l.log_mean + 0.5 * l.log_var)).exp())
}
