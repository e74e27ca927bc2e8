//! Asymmetric Laplace law `AL(μ, σ, τ)` in its check-loss form.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::QuantileSpec;
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlParams {
    pub mu: f64,
    /// Scale `φ^{-1/2}`.
    pub sigma: f64,
    pub quantile: QuantileSpec,
}

impl AlParams {
    pub fn new(mu: f64, sigma: f64, quantile: QuantileSpec) -> Result<Self> {
        let p = Self { mu, sigma, quantile };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return domain("AL location must be finite");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return domain(format!("AL scale must be positive, got {}", self.sigma));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.quantile.a_tau() * self.sigma
    }

    pub fn variance(&self) -> f64 {
        let (a, b) = (self.quantile.a_tau(), self.quantile.b_tau());
        self.sigma * self.sigma * (b + a * a)
    }
}

pub fn al_ln_density(y: f64, p: &AlParams) -> Result<f64> {
    p.validate()?;
    if !y.is_finite() {
        return domain("AL density evaluated at a non-finite point");
    }
    let tau = p.quantile.tau();
    let u = (y - p.mu) / p.sigma;
    Ok((tau * (1.0 - tau) / p.sigma).ln() - p.quantile.check_loss(u))
}

/// `τ(1-τ)/σ · exp(-ρ_τ((y - μ)/σ))`.
pub fn al_density(y: f64, p: &AlParams) -> Result<f64> {
    al_ln_density(y, p).map(f64::exp)
}

pub fn al_cdf(y: f64, p: &AlParams) -> Result<f64> {
    p.validate()?;
    if y.is_nan() {
        return domain("AL cdf evaluated at NaN");
    }
    let tau = p.quantile.tau();
    let u = (y - p.mu) / p.sigma;
    Ok(if u < 0.0 {
        tau * ((1.0 - tau) * u).exp()
    } else {
        1.0 - (1.0 - tau) * (-tau * u).exp()
    })
}

/// `P(Y ≤ μ)`, which equals τ for every valid parameter set.
pub fn al_cdf_at_location(p: &AlParams) -> Result<f64> {
    al_cdf(p.mu, p)
}

pub fn al_quantile(prob: f64, p: &AlParams) -> Result<f64> {
    p.validate()?;
    if !(prob > 0.0 && prob < 1.0) {
        return domain("AL quantile probability must lie in (0, 1)");
    }
    let tau = p.quantile.tau();
    Ok(if prob < tau {
        p.mu + p.sigma * (prob / tau).ln() / (1.0 - tau)
    } else {
        p.mu - p.sigma * ((1.0 - prob) / (1.0 - tau)).ln() / tau
    })
}

/// Draw through the normal–exponential mixture: `U ~ Ga(1, 1/σ)`, then
/// `y | U ~ N(μ + a_τ U, b_τ σ U)`.
pub fn al_sample_via_mixture<R: Rng + ?Sized>(p: &AlParams, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    let u = p.sigma * e;
    let z: f64 = StandardNormal.sample(rng);
    p.mu + p.quantile.a_tau() * u + (p.quantile.b_tau() * p.sigma * u).sqrt() * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn density_at_location_median() {
        let p = AlParams::new(3.0, 2.0, QuantileSpec::median()).unwrap();
        assert_relative_eq!(al_density(3.0, &p).unwrap(), 0.25 / 2.0, max_relative = 1e-15);
        let unit = AlParams::new(0.0, 1.0, QuantileSpec::median()).unwrap();
        assert_relative_eq!(al_density(1.0, &unit).unwrap(), 0.25 * (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = AlParams::new(-1.0, 0.7, QuantileSpec::new(0.2).unwrap()).unwrap();
        for &pr in &[0.01, 0.2, 0.5, 0.93] {
            let y = al_quantile(pr, &p).unwrap();
            assert_relative_eq!(al_cdf(y, &p).unwrap(), pr, max_relative = 1e-12);
        }
    }

    #[test]
    fn invalid_inputs() {
        let q = QuantileSpec::median();
        assert!(AlParams::new(0.0, 0.0, q).is_err());
        assert!(AlParams::new(f64::NAN, 1.0, q).is_err());
        let p = AlParams::new(0.0, 1.0, q).unwrap();
        assert!(al_density(f64::INFINITY, &p).is_err());
    }
}
