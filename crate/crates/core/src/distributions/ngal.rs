//! Generalized asymmetric Laplace (GAL) and its convolution with an
//! independent normal (NGAL).
//!
//! A GAL variable is the normal variance–mean mixture
//! `ζ = θ + μ w + σ √w Z` with `w ~ Ga(ρ, 1)`, so its characteristic function
//! is `e^{isθ} (1 + σ²s²/2 - iμs)^{-ρ}`. Adding `ε ~ N(0, c)` gives the NGAL
//! law. The canonical five-parameter form `(δ, γ, α, β, ρ)` factorizes the
//! quadratic as `(1 - is/α)(1 + is/β)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{domain, DqlmError, Result};
use crate::quadrature::{integrate, QuadConfig};
use crate::special::{ln_bessel_k, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalParams {
    /// Location θ.
    pub theta: f64,
    /// Asymmetry μ.
    pub mu: f64,
    /// Squared scale σ².
    pub sigma2: f64,
    /// Gamma shape ρ.
    pub rho: f64,
}

impl GalParams {
    pub fn new(theta: f64, mu: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let p = Self { theta, mu, sigma2, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.mu.is_finite()) {
            return domain("GAL location and asymmetry must be finite");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return domain(format!("GAL squared scale must be positive, got {}", self.sigma2));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return domain(format!("GAL shape must be positive, got {}", self.rho));
        }
        Ok(())
    }

    /// `√(2σ² + μ²)`.
    fn root(&self) -> f64 {
        (2.0 * self.sigma2 + self.mu * self.mu).sqrt()
    }

    /// Log density via the Bessel-K closed form of the variance–mean
    /// mixture. Returns `+∞` at the location when `ρ ≤ 1/2`.
    pub fn ln_density(&self, z: f64) -> f64 {
        let x = z - self.theta;
        let s2 = self.sigma2;
        let root = self.root();
        let nu = self.rho - 0.5;
        let norm = 0.5 * LN_2 - 0.5 * PI.ln() - 0.5 * s2.ln() - ln_gamma(self.rho);
        if x == 0.0 {
            if nu > 0.0 {
                // (|x|/r)^ν K_ν(|x| r/σ²) → Γ(ν) 2^{ν-1} (σ²/r²)^ν
                return norm + ln_gamma(nu) + (nu - 1.0) * LN_2 + nu * (s2 / (root * root)).ln();
            }
            return f64::INFINITY;
        }
        let ax = x.abs();
        norm + self.mu * x / s2 + nu * (ax.ln() - root.ln()) + ln_bessel_k(nu, ax * root / s2)
    }

    pub fn ln_cf(&self, s: f64) -> Complex64 {
        let base = Complex64::new(1.0 + 0.5 * self.sigma2 * s * s, -self.mu * s);
        Complex64::new(0.0, s * self.theta) - self.rho * base.ln()
    }
}

/// Canonical `(δ, γ, α, β, ρ)` parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgalCanonical {
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgalMoments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Excess kurtosis `κ₄/κ₂²`.
    pub kurtosis: f64,
}

/// `ζ + ε` with `ζ ~ GAL` and independent `ε ~ N(0, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgalParams {
    pub gal: GalParams,
    /// Normal variance `c ≥ 0`; zero reduces to the GAL law.
    pub normal_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMethod {
    /// `∫ p_ε(y - z) p_ζ(z) dz`.
    Convolution,
    /// `(1/π) ∫_0^∞ Re[e^{-isy} φ(s)] ds`.
    #[default]
    CfInversion,
}

impl NgalParams {
    pub fn new(gal: GalParams, normal_var: f64) -> Result<Self> {
        let p = Self { gal, normal_var };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.gal.validate()?;
        if !(self.normal_var >= 0.0 && self.normal_var.is_finite()) {
            return domain(format!("NGAL normal variance must be >= 0, got {}", self.normal_var));
        }
        Ok(())
    }

    /// `κ = (√(2σ² + μ²) - μ) / (√2 σ)`.
    pub fn kappa_shape(&self) -> f64 {
        let sigma = self.gal.sigma2.sqrt();
        (self.gal.root() - self.gal.mu) / (std::f64::consts::SQRT_2 * sigma)
    }

    pub fn canonical(&self) -> NgalCanonical {
        let sigma = self.gal.sigma2.sqrt();
        let k = self.kappa_shape();
        NgalCanonical {
            delta: self.gal.theta / self.gal.rho,
            gamma: self.normal_var / self.gal.rho,
            alpha: 2.0 * k / (std::f64::consts::SQRT_2 * sigma),
            beta: 2.0 / (std::f64::consts::SQRT_2 * sigma * k),
            rho: self.gal.rho,
        }
    }

    /// Cumulant-based moments of the canonical form.
    pub fn moments(&self) -> NgalMoments {
        let NgalCanonical { delta, gamma, alpha, beta, rho } = self.canonical();
        let (a2, b2) = (alpha * alpha, beta * beta);
        let k2_scaled = gamma * a2 * b2 + a2 + b2;
        NgalMoments {
            mean: rho * (delta + 1.0 / alpha - 1.0 / beta),
            variance: rho * (gamma + 1.0 / a2 + 1.0 / b2),
            skewness: 2.0 * (beta.powi(3) - alpha.powi(3)) / (rho.sqrt() * k2_scaled.powf(1.5)),
            kurtosis: 6.0 * (a2 * a2 + b2 * b2) / (rho * k2_scaled * k2_scaled),
        }
    }

    pub fn mean(&self) -> f64 {
        self.gal.theta + self.gal.rho * self.gal.mu
    }

    pub fn variance(&self) -> f64 {
        self.normal_var + self.gal.rho * (self.gal.sigma2 + self.gal.mu * self.gal.mu)
    }

    pub fn ln_cf(&self, s: f64) -> Complex64 {
        self.gal.ln_cf(s) - 0.5 * self.normal_var * s * s
    }

    pub fn cf(&self, s: f64) -> Complex64 {
        self.ln_cf(s).exp()
    }

    /// `ln |φ(s)|`, decreasing in `|s|`.
    fn ln_cf_modulus(&self, s: f64) -> f64 {
        let re = 1.0 + 0.5 * self.gal.sigma2 * s * s;
        let im = self.gal.mu * s;
        -0.5 * self.normal_var * s * s - 0.5 * self.gal.rho * (re * re + im * im).ln()
    }

    /// Frequency past which `|φ(s)| < 1e-12`.
    fn cf_cutoff(&self) -> Result<f64> {
        const LN_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)
        let mut hi = 1.0 / self.variance().sqrt();
        let mut guard = 0;
        while self.ln_cf_modulus(hi) > LN_FLOOR {
            hi *= 2.0;
            guard += 1;
            if guard > 200 || !hi.is_finite() {
                return Err(DqlmError::Numerical(
                    "characteristic function does not decay to the truncation floor".into(),
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.ln_cf_modulus(mid) > LN_FLOOR {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Partition of `[0, S]` with roughly one segment per half period of
    /// `e^{-is(y-θ)}`.
    fn cf_partition(&self, y: f64) -> Result<(Vec<f64>, usize)> {
        let s_max = self.cf_cutoff()?;
        let freq = (y - self.gal.theta).abs() + (self.gal.rho * self.gal.mu).abs();
        let n = ((s_max * freq / PI).ceil() as usize).clamp(4, 400);
        let pts = (0..=n).map(|i| s_max * i as f64 / n as f64).collect();
        Ok((pts, n))
    }

    pub fn density(&self, y: f64, method: DensityMethod, cfg: &QuadConfig) -> Result<f64> {
        self.validate()?;
        if !y.is_finite() {
            return domain("NGAL density evaluated at a non-finite point");
        }
        let v = match method {
            DensityMethod::CfInversion => self.density_cf(y, cfg)?,
            DensityMethod::Convolution => self.density_convolution(y, cfg)?,
        };
        Ok(v.max(0.0))
    }

    pub fn ln_density(&self, y: f64, method: DensityMethod, cfg: &QuadConfig) -> Result<f64> {
        let d = self.density(y, method, cfg)?;
        // Far tails lose all relative accuracy under cf inversion; redo
        // them on the log scale.
        if d > 1e-8 / self.variance().sqrt() {
            return Ok(d.ln());
        }
        let l = self.ln_density_convolution(y, cfg)?;
        if l.is_finite() {
            Ok(l)
        } else {
            Err(DqlmError::Numerical(format!(
                "NGAL density underflowed at y = {y}"
            )))
        }
    }

    fn density_cf(&self, y: f64, cfg: &QuadConfig) -> Result<f64> {
        let (pts, n) = self.cf_partition(y)?;
        let budget = QuadConfig {
            max_subdivisions: cfg.max_subdivisions + n,
            ..*cfg
        };
        let r = integrate(
            |s| {
                let z = self.ln_cf(s) - Complex64::new(0.0, s * y);
                z.exp().re
            },
            &pts,
            &budget,
        )?;
        Ok(r.value / PI)
    }

    fn density_convolution(&self, y: f64, cfg: &QuadConfig) -> Result<f64> {
        Ok(self.ln_density_convolution(y, cfg)?.exp())
    }

    /// Log of the convolution integral, with the integrand rescaled by its
    /// largest value on a coarse grid so deep tails do not underflow.
    fn ln_density_convolution(&self, y: f64, cfg: &QuadConfig) -> Result<f64> {
        let g = self.gal;
        if self.normal_var == 0.0 {
            return Ok(g.ln_density(y));
        }
        let c = self.normal_var;
        let sd_eps = c.sqrt();
        let can = self.canonical();
        let tail_rate = can.alpha.min(can.beta);
        let reach = (y - g.theta).abs()
            + (g.rho * g.mu).abs()
            + 40.0 * (sd_eps + (g.rho * (g.sigma2 + g.mu * g.mu)).sqrt())
            + 40.0 / tail_rate;

        // z = θ ± r^k removes the |z-θ|^{2ρ-1} behaviour at the location.
        let k = if g.rho < 0.5 {
            0.5 / g.rho
        } else if g.rho < 1.0 {
            2.0
        } else {
            1.0
        };
        let ln_norm_eps = -0.5 * (2.0 * PI * c).ln();
        let r_max = reach.powf(1.0 / k);
        let ln_integrand = |side: f64, r: f64| {
            let dz = r.powf(k);
            let z = g.theta + side * dz;
            let resid = y - z;
            let ln_jac = k.ln() + (k - 1.0) * r.ln();
            ln_norm_eps - 0.5 * resid * resid / c + g.ln_density(z) + ln_jac
        };
        let mut shift = f64::NEG_INFINITY;
        for side in [-1.0f64, 1.0] {
            for i in 1..=400 {
                let v = ln_integrand(side, r_max * i as f64 / 400.0);
                if v.is_finite() {
                    shift = shift.max(v);
                }
            }
            let d = (y - g.theta) * side;
            if d > 0.0 && d < reach {
                let v = ln_integrand(side, d.powf(1.0 / k));
                if v.is_finite() {
                    shift = shift.max(v);
                }
            }
        }
        if !shift.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut total = 0.0;
        for side in [-1.0f64, 1.0] {
            let mut pts = vec![0.0, r_max];
            for target in [y - 6.0 * sd_eps, y, y + 6.0 * sd_eps] {
                let d = (target - g.theta) * side;
                if d > 0.0 && d < reach {
                    pts.push(d.powf(1.0 / k));
                }
            }
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let r = integrate(
                |r| {
                    if r <= 0.0 {
                        return 0.0;
                    }
                    let e = (ln_integrand(side, r) - shift).exp();
                    if e.is_finite() {
                        e
                    } else {
                        0.0
                    }
                },
                &pts,
                cfg,
            )?;
            total += r.value;
        }
        Ok(total.ln() + shift)
    }

    /// Gil-Pelaez inversion: `F(y) = 1/2 - (1/π) ∫_0^∞ Im[e^{-isy} φ(s)]/s ds`.
    pub fn cdf(&self, y: f64, cfg: &QuadConfig) -> Result<f64> {
        self.validate()?;
        if !y.is_finite() {
            return Ok(if y > 0.0 { 1.0 } else { 0.0 });
        }
        let (pts, n) = self.cf_partition(y)?;
        let budget = QuadConfig {
            max_subdivisions: cfg.max_subdivisions + n,
            ..*cfg
        };
        let r = integrate(
            |s| {
                if s == 0.0 {
                    return 0.0;
                }
                let z = self.ln_cf(s) - Complex64::new(0.0, s * y);
                z.exp().im / s
            },
            &pts,
            &budget,
        )?;
        Ok((0.5 - r.value / PI).clamp(0.0, 1.0))
    }

    /// Quantile by bisection on the cdf.
    pub fn quantile(&self, prob: f64, cfg: &QuadConfig) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return domain("NGAL quantile probability must lie in (0, 1)");
        }
        let m = self.mean();
        let sd = self.variance().sqrt();
        let mut lo = m - 10.0 * sd;
        let mut hi = m + 10.0 * sd;
        while self.cdf(lo, cfg)? > prob {
            lo -= 10.0 * sd;
        }
        while self.cdf(hi, cfg)? < prob {
            hi += 10.0 * sd;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid, cfg)? < prob {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * sd {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample() -> NgalParams {
        NgalParams::new(GalParams::new(0.5, 0.8, 1.3, 1.7).unwrap(), 0.6).unwrap()
    }

    #[test]
    fn canonical_and_direct_moments_agree() {
        let p = sample();
        let m = p.moments();
        assert_relative_eq!(m.mean, p.mean(), max_relative = 1e-12);
        assert_relative_eq!(m.variance, p.variance(), max_relative = 1e-12);
    }

    #[test]
    fn canonical_factorization_reproduces_gal_quadratic() {
        let p = sample();
        let c = p.canonical();
        // (1 - is/α)(1 + is/β) = 1 + σ²s²/2 - iμs
        assert_relative_eq!(1.0 / (c.alpha * c.beta), p.gal.sigma2 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(1.0 / c.alpha - 1.0 / c.beta, p.gal.mu, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_case_has_zero_mean_and_skew() {
        let p = NgalParams::new(GalParams::new(0.0, 0.0, 2.0, 3.0).unwrap(), 1.0).unwrap();
        let c = p.canonical();
        assert_relative_eq!(c.alpha, c.beta, max_relative = 1e-14);
        let m = p.moments();
        assert!(m.mean.abs() < 1e-14);
        assert!(m.skewness.abs() < 1e-14);
        assert_eq!(p.mean(), 0.0);
    }

    #[test]
    fn cf_at_zero_is_one() {
        let z = sample().cf(0.0);
        assert_relative_eq!(z.re, 1.0);
        assert_eq!(z.im, 0.0);
    }

    #[test]
    fn gal_half_shape_is_laplace_like() {
        // ρ = 1 is the asymmetric Laplace: check density at an arbitrary point
        // against the exponential mixture closed form.
        let g = GalParams::new(0.0, 0.0, 2.0, 1.0).unwrap();
        // μ = 0, σ² = 2, ρ = 1: Laplace with rate √(2/σ²) = 1, density e^{-|x|}/2.
        for &x in &[-2.0, -0.1, 0.7, 3.0] {
            assert_relative_eq!(g.ln_density(x).exp(), 0.5 * (-f64::abs(x)).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn bad_parameters() {
        assert!(GalParams::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(GalParams::new(0.0, 0.0, 1.0, -1.0).is_err());
        let g = GalParams::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(NgalParams::new(g, -0.1).is_err());
    }
}
