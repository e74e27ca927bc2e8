//! k-step-ahead forecasting for both engines.
//!
//! Both engines hold the evolution variance of the first future step fixed
//! for the remaining horizons. Under a discount policy that is
//! `W_{T+1} = (1-δ)/δ G C_T G'`, the same matrix the filter would use next.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distributions::{al_sample_via_mixture, AlParams, QuantileSpec};
use crate::error::{domain, DqlmError, Result};
use crate::linalg::{sample_mvn, Mat, Vector};
use crate::mcmc::{sample_inverse_wishart, summarize, McmcDraws};
use crate::model::{EvolutionVariance, ModelSpec};
use crate::quadrature::QuadConfig;
use crate::seqfilter::{cap_u_variance, evolution_variance, evolve_with, predictive, AugmentedState};

/// Mean, variance and equal-tailed bounds of a forecast quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastStep {
    pub horizon: usize,
    pub t: usize,
    /// Augmented prior `(a*_{T+k}, R*_{T+k})`, scaled by `φ` as in the filter.
    /// Sequential engine only.
    pub state: Option<AugmentedState>,
    pub linear_predictor: ForecastSummary,
    pub observation: ForecastSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub quantile: QuantileSpec,
    pub level: f64,
    /// Plug-in `φ` (sequential engine only).
    pub phi: Option<f64>,
    pub steps: Vec<ForecastStep>,
    /// MCMC only: `[draw][k-1]` draws of `F'θ_{T+k}`.
    pub linear_predictor_draws: Option<Vec<Vec<f64>>>,
    /// MCMC only: `[draw][k-1]` draws of `y_{T+k}`.
    pub observation_draws: Option<Vec<Vec<f64>>>,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }
}

fn check_args(k: usize, level: f64) -> Result<()> {
    if k == 0 {
        return domain("forecast horizon must be at least 1");
    }
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("credible level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

fn normal_summary(mean: f64, variance: f64, level: f64) -> ForecastSummary {
    if variance <= 0.0 {
        return ForecastSummary { mean, variance: variance.max(0.0), lower: mean, upper: mean };
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + 0.5 * level);
    let sd = variance.sqrt();
    ForecastSummary { mean, variance, lower: mean - z * sd, upper: mean + z * sd }
}

/// Moment recursion of the sequential engine from the filtered state at
/// `t_end`, with the NGAL predictive at every horizon.
#[allow(clippy::too_many_arguments)]
pub fn forecast_seq(
    state: &AugmentedState,
    spec: &ModelSpec,
    q: QuantileSpec,
    phi: f64,
    k: usize,
    t_end: usize,
    level: f64,
    quad: &QuadConfig,
) -> Result<ForecastResult> {
    check_args(k, level)?;
    if state.state_dim() != spec.state_dim() {
        return domain("forecast state does not match the model dimension");
    }
    let w_star = evolution_variance(state, spec, t_end + 1, phi);
    let mut current = state.clone();
    let mut steps = Vec::with_capacity(k);
    let lo = 0.5 - 0.5 * level;
    for h in 1..=k {
        let t = t_end + h;
        let prior = evolve_with(&current, spec, t, &w_star);
        let mut capped = prior.clone();
        cap_u_variance(&mut capped, phi);
        let pred = predictive(&capped, spec, &q, phi, t)?;
        let f = spec.f(t);
        let lp_mean = f.dot(&prior.theta_mean());
        let lp_var = f.dot(&(prior.theta_cov() * f)).max(0.0) / phi;
        let ngal = &pred.ngal;
        let observation = ForecastSummary {
            mean: ngal.mean(),
            variance: ngal.variance(),
            lower: ngal.quantile(lo, quad)?,
            upper: ngal.quantile(1.0 - lo, quad)?,
        };
        steps.push(ForecastStep {
            horizon: h,
            t,
            state: Some(prior.clone()),
            linear_predictor: normal_summary(lp_mean, lp_var, level),
            observation,
        });
        current = prior;
    }
    Ok(ForecastResult { quantile: q, level, phi: Some(phi), steps, linear_predictor_draws: None, observation_draws: None })
}

/// What the MCMC forecast needs from a chain: per draw, `θ_T`, the scale,
/// the base evolution variance and the filtered `C_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalDraws {
    pub quantile: QuantileSpec,
    pub t_end: usize,
    pub theta: Vec<Vector>,
    pub sigma: Vec<f64>,
    /// First stored evolution variance per draw (empty under a discount policy).
    pub w: Vec<Option<Mat>>,
    pub terminal_cov: Vec<Mat>,
}

impl TerminalDraws {
    pub fn from_draws(draws: &McmcDraws) -> Self {
        let t_end = draws.series_len();
        Self {
            quantile: draws.quantile,
            t_end,
            theta: draws.theta.iter().map(|d| d[t_end].clone()).collect(),
            sigma: draws.sigma.clone(),
            w: draws.w.iter().map(|d| d.first().cloned()).collect(),
            terminal_cov: draws.terminal_cov.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Evolution variance of draw `d` for future steps.
fn future_w<R: Rng + ?Sized>(draws: &TerminalDraws, spec: &ModelSpec, d: usize, rng: &mut R) -> Result<Mat> {
    let base = || draws.w[d].clone().ok_or_else(|| DqlmError::Numerical("draw carries no evolution variance".into()));
    match &spec.evolution_variance {
        EvolutionVariance::Fixed(w) => Ok(w.clone()),
        EvolutionVariance::InverseWishart { dof, scale } => sample_inverse_wishart(*dof, scale, rng),
        EvolutionVariance::SharedInverseWishart { .. } | EvolutionVariance::HalfCauchy { .. } => base(),
        EvolutionVariance::StudentT { nu, .. } => {
            let lambda: f64 = Gamma::new(nu / 2.0, 2.0 / nu).map_err(|e| DqlmError::Numerical(e.to_string()))?.sample(rng);
            Ok(base()? / lambda)
        }
        EvolutionVariance::Discount(delta) => {
            let g = spec.g(draws.t_end + 1);
            Ok(g * &draws.terminal_cov[d] * g.transpose() * ((1.0 - delta) / delta))
        }
    }
}

/// Propagates every retained draw through `k` evolution steps with fresh
/// noise and draws an observation at each horizon.
pub fn forecast_mcmc<R: Rng + ?Sized>(draws: &McmcDraws, spec: &ModelSpec, k: usize, level: f64, rng: &mut R) -> Result<ForecastResult> {
    forecast_terminal(&TerminalDraws::from_draws(draws), spec, k, level, rng)
}

/// [`forecast_mcmc`] from stored terminal draws.
pub fn forecast_terminal<R: Rng + ?Sized>(draws: &TerminalDraws, spec: &ModelSpec, k: usize, level: f64, rng: &mut R) -> Result<ForecastResult> {
    check_args(k, level)?;
    if draws.is_empty() {
        return domain("no posterior draws to forecast from");
    }
    let t_end = draws.t_end;
    let q = draws.quantile;
    let mut lp = Vec::with_capacity(draws.len());
    let mut obs = Vec::with_capacity(draws.len());
    for d in 0..draws.len() {
        let mut theta: Vector = draws.theta[d].clone();
        let mut lp_d = Vec::with_capacity(k);
        let mut obs_d = Vec::with_capacity(k);
        // Per-t inverse-Wishart and Student-t policies draw a fresh W each step.
        let fixed_w = match spec.evolution_variance {
            EvolutionVariance::InverseWishart { .. } | EvolutionVariance::StudentT { .. } => None,
            _ => Some(future_w(draws, spec, d, rng)?),
        };
        for h in 1..=k {
            let t = t_end + h;
            let w = match &fixed_w {
                Some(w) => w.clone(),
                None => future_w(draws, spec, d, rng)?,
            };
            theta = sample_mvn(&(spec.g(t) * &theta), &w, rng)?;
            let mu = spec.linear_predictor(t, &theta);
            let al = AlParams::new(mu, draws.sigma[d], q)?;
            lp_d.push(mu);
            obs_d.push(al_sample_via_mixture(&al, rng));
        }
        lp.push(lp_d);
        obs.push(obs_d);
    }
    let column = |x: &[Vec<f64>], h: usize| x.iter().map(|v| v[h]).collect::<Vec<_>>();
    let steps = (0..k)
        .map(|h| ForecastStep {
            horizon: h + 1,
            t: t_end + h + 1,
            state: None,
            linear_predictor: draw_summary(&column(&lp, h), level),
            observation: draw_summary(&column(&obs, h), level),
        })
        .collect();
    Ok(ForecastResult {
        quantile: q,
        level,
        phi: None,
        steps,
        linear_predictor_draws: Some(lp),
        observation_draws: Some(obs),
    })
}

/// Sample mean, variance and equal-tailed bounds.
pub fn draw_summary(v: &[f64], level: f64) -> ForecastSummary {
    let s = summarize(v, level);
    let n = v.len() as f64;
    let var = v.iter().map(|x| (x - s.mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    ForecastSummary { mean: s.mean, variance: var, lower: s.lower, upper: s.upper }
}

/// Sums of the linear predictor over consecutive windows of `width`
/// horizons (a trailing partial window is dropped).
pub fn window_sums(result: &ForecastResult, spec: &ModelSpec, width: usize) -> Result<Vec<ForecastSummary>> {
    if width == 0 {
        return domain("window width must be at least 1");
    }
    let k = result.horizon();
    let windows = k / width;
    if let Some(draws) = &result.linear_predictor_draws {
        return Ok((0..windows)
            .map(|w| {
                let sums: Vec<f64> = draws.iter().map(|d| d[w * width..(w + 1) * width].iter().sum()).collect();
                draw_summary(&sums, result.level)
            })
            .collect());
    }
    // Gaussian sums need Cov(θ_{T+i}, θ_{T+j}) = G^{j-i} R_{T+i} for i <= j.
    let states: Vec<&AugmentedState> = result
        .steps
        .iter()
        .map(|s| s.state.as_ref().ok_or_else(|| DqlmError::Numerical("forecast carries no state moments".into())))
        .collect::<Result<_>>()?;
    let phi = result.phi.ok_or_else(|| DqlmError::Numerical("forecast carries no scale".into()))?;
    let mut out = Vec::with_capacity(windows);
    for w in 0..windows {
        let range = w * width..(w + 1) * width;
        let mut mean = 0.0;
        let mut var = 0.0;
        for i in range.clone() {
            let fi = spec.f(result.steps[i].t);
            mean += fi.dot(&states[i].theta_mean());
            let mut cross = states[i].theta_cov();
            for j in i..range.end {
                let fj = spec.f(result.steps[j].t);
                if j > i {
                    cross = spec.g(result.steps[j].t) * cross;
                }
                let c = fj.dot(&(&cross * fi));
                var += if j == i { c } else { 2.0 * c };
            }
        }
        out.push(normal_summary(mean, var / phi, result.level));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_local_level, PriorSpec};

    fn level_state(m: f64, c: f64) -> AugmentedState {
        let mut prior = PriorSpec::vague(1);
        prior.m0 = Vector::from_element(1, m);
        prior.c0 = Mat::from_element(1, 1, c);
        prior.c_u0 = 0.1;
        AugmentedState::from_prior(&prior, 1.0).unwrap()
    }

    #[test]
    fn rejects_zero_horizon() {
        let spec = build_local_level().unwrap();
        let s = level_state(0.0, 1.0);
        assert!(forecast_seq(&s, &spec, QuantileSpec::median(), 1.0, 0, 0, 0.9, &QuadConfig::default()).is_err());
    }

    #[test]
    fn frozen_dynamics_keep_moments() {
        let spec = build_local_level()
            .unwrap()
            .with_evolution_variance(EvolutionVariance::Fixed(Mat::zeros(1, 1)))
            .unwrap();
        let s = level_state(3.0, 2.0);
        let r = forecast_seq(&s, &spec, QuantileSpec::median(), 1.0, 4, 10, 0.9, &QuadConfig::default()).unwrap();
        for st in &r.steps {
            assert_eq!(st.linear_predictor.mean, 3.0);
            assert_eq!(st.linear_predictor.variance, 2.0);
        }
    }
}
