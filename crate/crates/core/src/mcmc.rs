//! Gibbs sampler for the dynamic quantile model with forward filtering,
//! backward sampling of the states.
//!
//! The observation law is the normal–exponential mixture
//! `y_t | U_t ~ N(F_t'θ_t + a_τ U_t, b_τ σ U_t)`, `U_t ~ Ga(1, 1/σ)` with
//! `σ = φ^{-1/2}`. Each sweep updates `σ`, then every `U_t`, then the
//! evolution variances (and Student-t weights), then the states.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{gig_sample, GigParams, QuantileSpec};
use crate::error::{domain, DqlmError, Result};
use crate::linalg::{cholesky_jittered, quad_form_inv, sample_mvn, symmetrize, Mat, Vector};
use crate::model::{EvolutionScale, EvolutionVariance, ModelSpec, PriorSpec, TimeSeriesData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { sweeps: 5000, burn_in: 1000, thin: 4, seed: 1 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return domain(format!("sweeps ({}) must exceed burn-in ({})", self.sweeps, self.burn_in));
        }
        if self.thin == 0 {
            return domain("thin must be at least 1");
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin
    }
}

/// Current values of every block of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    /// `θ_0..θ_T`.
    pub theta: Vec<Vector>,
    /// `U_1..U_T`.
    pub u: Vec<f64>,
    /// `φ^{-1/2}`.
    pub sigma: f64,
    /// Inverse-Wishart policy: `W_1..W_T`. Shared inverse-Wishart, fixed,
    /// half-Cauchy and Student-t policies: the single base matrix. Discount: empty.
    pub w: Vec<Mat>,
    /// Half-Cauchy policies: the current `s` with `W = s² I`.
    pub w_scale: Option<f64>,
    /// Student-t weights `λ_1..λ_T` (all 1 otherwise).
    pub lambda: Vec<f64>,
}

impl GibbsState {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Evolution covariance at time `t`, or `None` under a discount policy.
    pub fn evolution_cov(&self, spec: &ModelSpec, t: usize) -> Option<Mat> {
        match &spec.evolution_variance {
            EvolutionVariance::Discount(_) => None,
            EvolutionVariance::InverseWishart { .. } => Some(self.w[t - 1].clone()),
            EvolutionVariance::Fixed(_)
            | EvolutionVariance::SharedInverseWishart { .. }
            | EvolutionVariance::HalfCauchy { .. } => Some(self.w[0].clone()),
            EvolutionVariance::StudentT { .. } => Some(&self.w[0] / self.lambda[t - 1]),
        }
    }

    /// Innovation `θ_t - G_t θ_{t-1}`.
    pub fn innovation(&self, spec: &ModelSpec, t: usize) -> Vector {
        &self.theta[t] - spec.g(t) * &self.theta[t - 1]
    }

    /// Residual `y_t - F_t'θ_t`.
    pub fn residual(&self, spec: &ModelSpec, data: &TimeSeriesData, t: usize) -> f64 {
        data.y[t - 1] - spec.linear_predictor(t, &self.theta[t])
    }
}

fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| DqlmError::Numerical(e.to_string()))?;
    Ok(1.0 / g.sample(rng))
}

/// `φ^{-1/2} ~ IGa((n_φ + 3T)/2, s*_φ/2)` with
/// `s*_φ = s_φ + Σ (y_t - F_t'θ_t - a_τU_t)² / (b_τU_t) + 2 Σ U_t`.
pub fn sample_phi<R: Rng + ?Sized>(
    state: &GibbsState,
    spec: &ModelSpec,
    data: &TimeSeriesData,
    prior: &PriorSpec,
    q: &QuantileSpec,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = phi_conditional(state, spec, data, prior, q)?;
    inverse_gamma(shape, rate, rng)
}

/// Shape and rate of the inverse-gamma full conditional of `φ^{-1/2}`.
pub fn phi_conditional(
    state: &GibbsState,
    spec: &ModelSpec,
    data: &TimeSeriesData,
    prior: &PriorSpec,
    q: &QuantileSpec,
) -> Result<(f64, f64)> {
    let t_len = state.len();
    let mut s = prior.s_phi;
    for t in 1..=t_len {
        let u = state.u[t - 1];
        if !(u > 0.0) {
            return domain(format!("U_{t} must be positive"));
        }
        let r = state.residual(spec, data, t) - q.a_tau() * u;
        s += r * r / (q.b_tau() * u) + 2.0 * u;
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(DqlmError::Numerical(format!("scale posterior rate is {s}")));
    }
    Ok(((prior.n_phi + 3.0 * t_len as f64) / 2.0, s / 2.0))
}

/// GIG full conditional of `U_t`: `χ = r²/(b_τσ)`, `κ = a_τ²/(b_τσ) + 2/σ`, `λ = 1/2`.
pub fn u_conditional(state: &GibbsState, spec: &ModelSpec, data: &TimeSeriesData, q: &QuantileSpec, t: usize) -> Result<GigParams> {
    let sigma = state.sigma;
    if !(sigma > 0.0) {
        return domain("scale must be positive");
    }
    let r = state.residual(spec, data, t);
    let bs = q.b_tau() * sigma;
    GigParams::new(r * r / bs, q.a_tau() * q.a_tau() / bs + 2.0 / sigma, 0.5)
}

pub fn sample_u<R: Rng + ?Sized>(
    state: &GibbsState,
    spec: &ModelSpec,
    data: &TimeSeriesData,
    q: &QuantileSpec,
    t: usize,
    rng: &mut R,
) -> Result<f64> {
    gig_sample(&u_conditional(state, spec, data, q, t)?, rng)
}

/// `W ~ IW(dof, scale)` with density `∝ |W|^{-(dof+p+1)/2} exp(-tr(scale W^{-1})/2)`,
/// drawn as the inverse of a Bartlett-decomposed Wishart.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(dof: f64, scale: &Mat, rng: &mut R) -> Result<Mat> {
    let p = scale.nrows();
    if !(dof > p as f64 - 1.0) {
        return domain(format!("inverse-Wishart needs dof > p - 1, got {dof} with p = {p}"));
    }
    let prec = cholesky_jittered(scale)?.inverse();
    let l = cholesky_jittered(&prec)?.l();
    let mut a = Mat::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64).map_err(|e| DqlmError::Numerical(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let mut w = cholesky_jittered(&wishart)?.inverse();
    symmetrize(&mut w);
    Ok(w)
}

/// Inverse-Wishart full conditional of `W_t`: dof `n_w + 1`,
/// scale `S_w + e_t e_t'` with `e_t = θ_t - G_t θ_{t-1}`. One innovation adds
/// one degree of freedom; `n_w + p + 1` would not match the joint density.
pub fn w_conditional(state: &GibbsState, spec: &ModelSpec, t: usize) -> Result<(f64, Mat)> {
    let EvolutionVariance::InverseWishart { dof, scale } = &spec.evolution_variance else {
        return domain("W_t full conditional needs the inverse-Wishart policy");
    };
    let e = state.innovation(spec, t);
    Ok((dof + 1.0, scale + &e * e.transpose()))
}

/// Inverse-Wishart full conditional of a time-invariant `W`: dof `n_w + T`,
/// scale `S_w + Σ e_t e_t'`.
pub fn shared_w_conditional(state: &GibbsState, spec: &ModelSpec) -> Result<(f64, Mat)> {
    let EvolutionVariance::SharedInverseWishart { dof, scale } = &spec.evolution_variance else {
        return domain("shared W full conditional needs the shared inverse-Wishart policy");
    };
    let mut s = scale.clone();
    for t in 1..=state.len() {
        let e = state.innovation(spec, t);
        s += &e * e.transpose();
    }
    Ok((dof + state.len() as f64, s))
}

pub fn sample_w<R: Rng + ?Sized>(state: &GibbsState, spec: &ModelSpec, t: usize, rng: &mut R) -> Result<Mat> {
    let (dof, scale) = w_conditional(state, spec, t)?;
    sample_inverse_wishart(dof, &scale, rng)
}

/// `λ_t ~ Ga((ν + p)/2, ν/2 + e_t'W^{-1}e_t/2)` (shape, rate).
pub fn lambda_conditional(state: &GibbsState, spec: &ModelSpec, t: usize) -> Result<(f64, f64)> {
    let EvolutionVariance::StudentT { nu, .. } = &spec.evolution_variance else {
        return domain("λ_t full conditional needs the Student-t policy");
    };
    let p = spec.state_dim() as f64;
    let e = state.innovation(spec, t);
    let qf = quad_form_inv(&state.w[0], &e)?;
    Ok(((nu + p) / 2.0, nu / 2.0 + qf / 2.0))
}

pub fn sample_lambda<R: Rng + ?Sized>(state: &GibbsState, spec: &ModelSpec, t: usize, rng: &mut R) -> Result<f64> {
    let (shape, rate) = lambda_conditional(state, spec, t)?;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| DqlmError::Numerical(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Log target of `log s` under `W = s² I`, a half-Cauchy(0, A) prior on `s`
/// and Gaussian innovations weighted by `λ_t`.
pub fn half_cauchy_log_target(state: &GibbsState, spec: &ModelSpec, scale: f64, log_s: f64) -> f64 {
    let p = spec.state_dim() as f64;
    let t_len = state.len();
    let qsum: f64 = (1..=t_len).map(|t| state.lambda[t - 1] * state.innovation(spec, t).norm_squared()).sum();
    let s2 = (2.0 * log_s).exp();
    -(p * t_len as f64) * log_s - qsum / (2.0 * s2) - (1.0 + s2 / (scale * scale)).ln() + log_s
}

/// Random-walk Metropolis–Hastings on `log s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSampler {
    pub step: f64,
    pub proposed: usize,
    pub accepted: usize,
}

impl Default for ScaleSampler {
    fn default() -> Self {
        Self { step: 0.5, proposed: 0, accepted: 0 }
    }
}

impl ScaleSampler {
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Nudges the step toward an acceptance rate in `[0.2, 0.5]` and resets the counters.
    pub fn adapt(&mut self) {
        let a = self.acceptance();
        if a < 0.2 {
            self.step *= 0.7;
        } else if a > 0.5 {
            self.step *= 1.4;
        }
        self.proposed = 0;
        self.accepted = 0;
    }

    pub fn step<R: Rng + ?Sized>(&mut self, state: &GibbsState, spec: &ModelSpec, scale: f64, s: f64, rng: &mut R) -> f64 {
        let cur = s.ln();
        let prop = cur + self.step * rng.sample::<f64, _>(StandardNormal);
        let log_ratio = half_cauchy_log_target(state, spec, scale, prop) - half_cauchy_log_target(state, spec, scale, cur);
        self.proposed += 1;
        if rng.random::<f64>().ln() < log_ratio {
            self.accepted += 1;
            prop.exp()
        } else {
            s
        }
    }
}

/// Moments from one step of the forward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStep {
    pub a: Vector,
    pub r: Mat,
    pub f: f64,
    pub q: f64,
    pub m: Vector,
    pub c: Mat,
}

/// Forward filter given `U`, `σ` and the evolution variances:
/// `f_t = F_t'a_t + a_τU_t`, `q_t = F_t'R_tF_t + b_τU_tσ`.
pub fn forward_filter(
    state: &GibbsState,
    spec: &ModelSpec,
    data: &TimeSeriesData,
    prior: &PriorSpec,
    q: &QuantileSpec,
) -> Result<Vec<ForwardStep>> {
    let t_len = data.len();
    let mut out: Vec<ForwardStep> = Vec::with_capacity(t_len);
    let mut m = prior.m0.clone();
    let mut c = prior.c0.clone();
    for t in 1..=t_len {
        let g = spec.g(t);
        let a = g * &m;
        let mut r = g * &c * g.transpose();
        match state.evolution_cov(spec, t) {
            Some(w) => r += w,
            None => {
                let EvolutionVariance::Discount(delta) = spec.evolution_variance else { unreachable!() };
                r /= delta;
            }
        }
        symmetrize(&mut r);
        let f_vec = spec.f(t);
        let u = state.u[t - 1];
        let rf = &r * f_vec;
        let f = f_vec.dot(&a) + q.a_tau() * u;
        let qt = f_vec.dot(&rf) + q.b_tau() * u * state.sigma;
        if !(qt > 0.0 && qt.is_finite()) {
            return Err(DqlmError::Numerical(format!("one-step variance {qt} at t = {t}")));
        }
        let gain = &rf / qt;
        m = &a + &gain * (data.y[t - 1] - f);
        c = &r - &gain * gain.transpose() * qt;
        symmetrize(&mut c);
        out.push(ForwardStep { a, r, f, q: qt, m: m.clone(), c: c.clone() });
    }
    Ok(out)
}

/// Conditional moments of `θ_t` given `θ_{t+1}` and the filtered moments at `t`:
/// `h_t = m_t + C_tG'R^{-1}(θ_{t+1} - a_{t+1})`, `H_t = C_t - C_tG'R^{-1}GC_t`.
fn backward_moments(m: &Vector, c: &Mat, g_next: &Mat, next: &ForwardStep, theta_next: &Vector) -> Result<(Vector, Mat, Mat)> {
    let chol = cholesky_jittered(&next.r)?;
    let cg = c * g_next.transpose();
    let b = chol.solve(&cg.transpose()).transpose();
    let h = m + &b * (theta_next - &next.a);
    let mut hh = c - &b * g_next * c;
    symmetrize(&mut hh);
    Ok((h, hh, b))
}

/// Joint draw of `θ_{0:T}` and the forward pass it was built on.
pub fn ffbs<R: Rng + ?Sized>(
    state: &GibbsState,
    spec: &ModelSpec,
    data: &TimeSeriesData,
    prior: &PriorSpec,
    q: &QuantileSpec,
    rng: &mut R,
) -> Result<(Vec<Vector>, Vec<ForwardStep>)> {
    let fwd = forward_filter(state, spec, data, prior, q)?;
    let t_len = fwd.len();
    let mut theta = vec![Vector::zeros(spec.state_dim()); t_len + 1];
    if t_len == 0 {
        theta[0] = sample_mvn(&prior.m0, &prior.c0, rng)?;
        return Ok((theta, fwd));
    }
    theta[t_len] = sample_mvn(&fwd[t_len - 1].m, &fwd[t_len - 1].c, rng)?;
    for t in (0..t_len).rev() {
        let (m, c) = if t == 0 { (&prior.m0, &prior.c0) } else { (&fwd[t - 1].m, &fwd[t - 1].c) };
        let (h, hh, _) = backward_moments(m, c, spec.g(t + 1), &fwd[t], &theta[t + 1])?;
        theta[t] = sample_mvn(&h, &hh, rng)?;
    }
    Ok((theta, fwd))
}

/// Smoothed means and covariances of `θ_{0:T}` from a forward pass
/// (the expectation of the backward sampling recursion).
pub fn backward_smoother(fwd: &[ForwardStep], spec: &ModelSpec, prior: &PriorSpec) -> Result<Vec<(Vector, Mat)>> {
    let t_len = fwd.len();
    let mut out = vec![(prior.m0.clone(), prior.c0.clone()); t_len + 1];
    if t_len == 0 {
        return Ok(out);
    }
    out[t_len] = (fwd[t_len - 1].m.clone(), fwd[t_len - 1].c.clone());
    for t in (0..t_len).rev() {
        let (m, c) = if t == 0 { (&prior.m0, &prior.c0) } else { (&fwd[t - 1].m, &fwd[t - 1].c) };
        let (s_next, sc_next) = out[t + 1].clone();
        let (h, _, b) = backward_moments(m, c, spec.g(t + 1), &fwd[t], &s_next)?;
        let mut s = c + &b * (sc_next - &fwd[t].r) * b.transpose();
        symmetrize(&mut s);
        out[t] = (h, s);
    }
    Ok(out)
}

fn initial_state(spec: &ModelSpec, data: &TimeSeriesData, prior: &PriorSpec, q: &QuantileSpec) -> Result<GibbsState> {
    let t_len = data.len();
    let p = spec.state_dim();
    let diffs: Vec<f64> = data.y.windows(2).map(|w| w[1] - w[0]).collect();
    let spread = if diffs.len() > 1 {
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64 / 2.0).sqrt()
    } else {
        0.0
    };
    let level = data.y.iter().map(|v| v.abs()).sum::<f64>() / t_len.max(1) as f64;
    let noise = spread.max(1e-3 * (1.0 + level));
    let sigma = noise / (q.b_tau() + q.a_tau() * q.a_tau()).sqrt();
    let (w, w_scale) = match &spec.evolution_variance {
        EvolutionVariance::Discount(_) => (Vec::new(), None),
        EvolutionVariance::Fixed(w) => (vec![w.clone()], None),
        EvolutionVariance::InverseWishart { dof, scale } | EvolutionVariance::SharedInverseWishart { dof, scale } => {
            let denom = dof - p as f64 - 1.0;
            let w0 = if denom > 0.0 { scale / denom } else { scale.clone() };
            let n = if matches!(spec.evolution_variance, EvolutionVariance::InverseWishart { .. }) { t_len } else { 1 };
            (vec![w0; n], None)
        }
        EvolutionVariance::HalfCauchy { .. } | EvolutionVariance::StudentT { scale: EvolutionScale::HalfCauchy { .. }, .. } => {
            let s = 0.1 * noise;
            (vec![Mat::identity(p, p) * (s * s)], Some(s))
        }
        EvolutionVariance::StudentT { scale: EvolutionScale::Fixed(w), .. } => (vec![w.clone()], None),
    };
    let mut state = GibbsState {
        theta: vec![prior.m0.clone(); t_len + 1],
        u: vec![sigma; t_len],
        sigma,
        w,
        w_scale,
        lambda: vec![1.0; t_len],
    };
    // Start the states at the smoothed means given the initial blocks.
    let fwd = forward_filter(&state, spec, data, prior, q)?;
    state.theta = backward_smoother(&fwd, spec, prior)?.into_iter().map(|(m, _)| m).collect();
    Ok(state)
}

/// Retained draws of one chain.
#[derive(Debug, Clone)]
pub struct McmcDraws {
    pub quantile: QuantileSpec,
    pub config: McmcConfig,
    /// `[draw][t]` for `t = 0..T`.
    pub theta: Vec<Vec<Vector>>,
    /// `[draw][t-1]`.
    pub u: Vec<Vec<f64>>,
    /// `φ^{-1/2}` per draw.
    pub sigma: Vec<f64>,
    /// Per draw, the same layout as [`GibbsState::w`].
    pub w: Vec<Vec<Mat>>,
    pub w_scale: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    /// Filtered `C_T` per draw.
    pub terminal_cov: Vec<Mat>,
    /// `F_t'θ_t` per draw, `t = 1..T`.
    pub linear_predictor: Vec<Vec<f64>>,
    /// Acceptance rate of the half-Cauchy step after burn-in.
    pub scale_acceptance: Option<f64>,
}

/// Posterior mean and equal-tailed credible bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = prob.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], level: f64) -> Summary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Summary {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        lower: empirical_quantile(&v, tail),
        upper: empirical_quantile(&v, 1.0 - tail),
    }
}

/// Effective sample size from the initial positive sequence of
/// autocorrelation pair sums.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |k: usize| (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum::<f64>() / (n as f64 * var);
    let mut sum = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    (n as f64 / (2.0 * sum - 1.0)).min(n as f64 * (n as f64).log10())
}

impl McmcDraws {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.u.first().map_or(0, |u| u.len())
    }

    /// Per-time summary of `F_t'θ_t`.
    pub fn linear_predictor_summary(&self, level: f64) -> Vec<Summary> {
        (0..self.series_len())
            .map(|t| summarize(&self.linear_predictor.iter().map(|d| d[t]).collect::<Vec<_>>(), level))
            .collect()
    }

    /// Per-time summary of a component `Σ_{i ∈ idx} F_{t,i} θ_{t,i}`.
    pub fn component_summary(&self, spec: &ModelSpec, component: &crate::model::Component, level: f64) -> Vec<Summary> {
        (1..=self.series_len())
            .map(|t| {
                let v: Vec<f64> = self.theta.iter().map(|d| spec.component_value(component, t, &d[t])).collect();
                summarize(&v, level)
            })
            .collect()
    }

    /// Draws of `log λ_t^{-1}` at `t` (Student-t chains only).
    pub fn log_lambda_inv(&self, t: usize) -> Vec<f64> {
        self.lambda.iter().map(|d| -d[t - 1].ln()).collect()
    }

    pub fn sigma_summary(&self, level: f64) -> Summary {
        summarize(&self.sigma, level)
    }

    /// One row per retained draw: `sigma`, `w_scale` (if any), `lp_t`, `u_t`,
    /// `lambda_t` (if any), then `theta_t_i`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let t_len = self.series_len();
        let p = self.theta.first().map_or(0, |d| d[0].len());
        let has_scale = !self.w_scale.is_empty();
        let has_lambda = self.lambda.first().is_some_and(|l| !l.is_empty());
        let mut header = vec!["sigma".to_string()];
        if has_scale {
            header.push("w_scale".into());
        }
        header.extend((1..=t_len).map(|t| format!("lp_{t}")));
        header.extend((1..=t_len).map(|t| format!("u_{t}")));
        if has_lambda {
            header.extend((1..=t_len).map(|t| format!("lambda_{t}")));
        }
        for t in 0..=t_len {
            header.extend((0..p).map(|i| format!("theta_{t}_{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for d in 0..self.len() {
            let mut row = vec![self.sigma[d].to_string()];
            if has_scale {
                row.push(self.w_scale[d].to_string());
            }
            row.extend(self.linear_predictor[d].iter().map(f64::to_string));
            row.extend(self.u[d].iter().map(f64::to_string));
            if has_lambda {
                row.extend(self.lambda[d].iter().map(f64::to_string));
            }
            for th in &self.theta[d] {
                row.extend(th.iter().map(f64::to_string));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_finite(ok: bool, sweep: usize, block: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DqlmError::ChainDiverged { sweep, block })
    }
}

/// Runs one chain for the quantile `q`.
pub fn run_gibbs(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    q: QuantileSpec,
    config: &McmcConfig,
) -> Result<McmcDraws> {
    config.validate()?;
    spec.validate()?;
    prior.validate(spec.state_dim())?;
    data.validate()?;
    if data.is_empty() {
        return domain("cannot fit an empty series");
    }
    let t_len = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = initial_state(spec, data, prior, &q)?;
    let mut mh = ScaleSampler::default();
    let mut post_burn = ScaleSampler::default();
    let n_keep = config.retained();
    let mut draws = McmcDraws {
        quantile: q,
        config: *config,
        theta: Vec::with_capacity(n_keep),
        u: Vec::with_capacity(n_keep),
        sigma: Vec::with_capacity(n_keep),
        w: Vec::with_capacity(n_keep),
        w_scale: Vec::new(),
        lambda: Vec::with_capacity(n_keep),
        terminal_cov: Vec::with_capacity(n_keep),
        linear_predictor: Vec::with_capacity(n_keep),
        scale_acceptance: None,
    };
    let is_student = matches!(spec.evolution_variance, EvolutionVariance::StudentT { .. });
    let half_cauchy = match &spec.evolution_variance {
        EvolutionVariance::HalfCauchy { scale } => Some(*scale),
        EvolutionVariance::StudentT { scale: EvolutionScale::HalfCauchy { scale }, .. } => Some(*scale),
        _ => None,
    };
    let p = spec.state_dim();

    for sweep in 1..=config.sweeps {
        state.sigma = sample_phi(&state, spec, data, prior, &q, &mut rng)?;
        check_finite(state.sigma.is_finite() && state.sigma > 0.0, sweep, "scale")?;

        for t in 1..=t_len {
            state.u[t - 1] = sample_u(&state, spec, data, &q, t, &mut rng)?;
        }
        check_finite(state.u.iter().all(|u| u.is_finite() && *u > 0.0), sweep, "mixing weights")?;

        if let EvolutionVariance::InverseWishart { .. } = spec.evolution_variance {
            for t in 1..=t_len {
                state.w[t - 1] = sample_w(&state, spec, t, &mut rng)?;
            }
            check_finite(state.w.iter().all(|w| w.iter().all(|v| v.is_finite())), sweep, "evolution variance")?;
        }
        if let EvolutionVariance::SharedInverseWishart { .. } = spec.evolution_variance {
            let (dof, scale) = shared_w_conditional(&state, spec)?;
            state.w[0] = sample_inverse_wishart(dof, &scale, &mut rng)?;
            check_finite(state.w[0].iter().all(|v| v.is_finite()), sweep, "evolution variance")?;
        }
        if is_student {
            for t in 1..=t_len {
                state.lambda[t - 1] = sample_lambda(&state, spec, t, &mut rng)?;
            }
            check_finite(state.lambda.iter().all(|l| l.is_finite() && *l > 0.0), sweep, "student-t weights")?;
        }
        if let Some(scale) = half_cauchy {
            let sampler = if sweep <= config.burn_in { &mut mh } else { &mut post_burn };
            let mut s = state.w_scale.unwrap_or(1.0);
            for _ in 0..5 {
                s = sampler.step(&state, spec, scale, s, &mut rng);
            }
            if sweep <= config.burn_in && sweep % 50 == 0 {
                mh.adapt();
                post_burn.step = mh.step;
            }
            check_finite(s.is_finite() && s > 0.0, sweep, "evolution scale")?;
            state.w_scale = Some(s);
            state.w[0] = Mat::identity(p, p) * (s * s);
        }

        let (theta, fwd) = ffbs(&state, spec, data, prior, &q, &mut rng)?;
        check_finite(theta.iter().all(|th| th.iter().all(|v| v.is_finite())), sweep, "states")?;
        state.theta = theta;

        if sweep > config.burn_in && (sweep - config.burn_in).is_multiple_of(config.thin) {
            draws.linear_predictor.push((1..=t_len).map(|t| spec.linear_predictor(t, &state.theta[t])).collect());
            draws.theta.push(state.theta.clone());
            draws.u.push(state.u.clone());
            draws.sigma.push(state.sigma);
            draws.w.push(state.w.clone());
            if let Some(s) = state.w_scale {
                draws.w_scale.push(s);
            }
            draws.lambda.push(if is_student { state.lambda.clone() } else { Vec::new() });
            draws.terminal_cov.push(fwd[t_len - 1].c.clone());
        }
    }
    if half_cauchy.is_some() {
        draws.scale_acceptance = Some(post_burn.acceptance());
    }
    Ok(draws)
}

/// Fits every quantile in `spec.quantiles` on its own thread. Chain `i`
/// uses seed `config.seed + i`.
pub fn run_gibbs_grid(data: &TimeSeriesData, spec: &ModelSpec, prior: &PriorSpec, config: &McmcConfig) -> Result<Vec<McmcDraws>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .quantiles
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let cfg = McmcConfig { seed: config.seed.wrapping_add(i as u64), ..*config };
                scope.spawn(move || run_gibbs(data, spec, prior, q, &cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_local_level, build_static_level};
    use approx::assert_relative_eq;

    fn scalar_state(theta: &[f64], u: &[f64], sigma: f64) -> GibbsState {
        GibbsState {
            theta: theta.iter().map(|&v| Vector::from_element(1, v)).collect(),
            u: u.to_vec(),
            sigma,
            w: vec![Mat::from_element(1, 1, 0.5)],
            w_scale: None,
            lambda: vec![1.0; u.len()],
        }
    }

    #[test]
    fn config_rules() {
        assert!(McmcConfig { sweeps: 10, burn_in: 10, thin: 1, seed: 0 }.validate().is_err());
        assert!(McmcConfig { sweeps: 10, burn_in: 0, thin: 0, seed: 0 }.validate().is_err());
        assert_eq!(McmcConfig::default().retained(), 1000);
    }

    #[test]
    fn phi_conditional_collapses_with_zero_residuals() {
        let spec = build_local_level().unwrap();
        let data = TimeSeriesData::from_values(vec![1.0, 2.0]).unwrap();
        let state = scalar_state(&[0.0, 1.0, 2.0], &[0.3, 0.7], 1.0);
        let prior = PriorSpec::vague(1);
        let (shape, rate) = phi_conditional(&state, &spec, &data, &prior, &QuantileSpec::median()).unwrap();
        assert_relative_eq!(shape, (0.001 + 6.0) / 2.0);
        assert_relative_eq!(rate, (0.001 + 2.0 * 1.0) / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn u_conditional_for_exact_fit_and_median() {
        let spec = build_local_level().unwrap();
        let data = TimeSeriesData::from_values(vec![1.0]).unwrap();
        let state = scalar_state(&[0.0, 1.0], &[0.3], 2.0);
        let g = u_conditional(&state, &spec, &data, &QuantileSpec::median(), 1).unwrap();
        assert_eq!(g.chi, 0.0);
        assert_eq!(g.kappa, 2.0 / 2.0);
        assert_eq!(g.lambda, 0.5);
    }

    #[test]
    fn w_conditional_keeps_scale_for_zero_innovation() {
        let spec = build_local_level()
            .unwrap()
            .with_evolution_variance(EvolutionVariance::InverseWishart { dof: 3.0, scale: Mat::from_element(1, 1, 0.2) })
            .unwrap();
        let state = scalar_state(&[1.0, 1.0], &[1.0], 1.0);
        let (dof, scale) = w_conditional(&state, &spec, 1).unwrap();
        assert_eq!(dof, 4.0);
        assert_eq!(scale[(0, 0)], 0.2);
    }

    #[test]
    fn lambda_conditional_without_innovation() {
        let spec = build_local_level()
            .unwrap()
            .with_evolution_variance(EvolutionVariance::StudentT { nu: 2.5, scale: EvolutionScale::Fixed(Mat::from_element(1, 1, 4.0)) })
            .unwrap();
        let mut state = scalar_state(&[1.0, 1.0], &[1.0], 1.0);
        state.w[0] = Mat::from_element(1, 1, 4.0);
        assert_eq!(lambda_conditional(&state, &spec, 1).unwrap(), (1.75, 1.25));
    }

    #[test]
    fn huge_observation_variance_means_no_update() {
        let spec = build_local_level().unwrap().with_evolution_variance(EvolutionVariance::Fixed(Mat::zeros(1, 1))).unwrap();
        let data = TimeSeriesData::from_values(vec![100.0]).unwrap();
        let mut prior = PriorSpec::vague(1);
        prior.c0 = Mat::from_element(1, 1, 1.0);
        let state = scalar_state(&[0.0, 0.0], &[1e12], 1.0);
        let fwd = forward_filter(&state, &spec, &data, &prior, &QuantileSpec::median()).unwrap();
        assert!(fwd[0].m[0].abs() < 1e-9);
    }

    #[test]
    fn scalar_one_step_by_hand() {
        let spec = build_static_level().unwrap();
        let data = TimeSeriesData::from_values(vec![3.0]).unwrap();
        let mut prior = PriorSpec::vague(1);
        prior.m0[0] = 1.0;
        prior.c0[(0, 0)] = 2.0;
        let q = QuantileSpec::new(0.25).unwrap();
        let state = scalar_state(&[0.0, 0.0], &[0.5], 1.5);
        let fwd = forward_filter(&GibbsState { w: vec![Mat::zeros(1, 1)], ..state }, &spec, &data, &prior, &q).unwrap();
        let (a_t, b_t) = (q.a_tau(), q.b_tau());
        let obs_var = b_t * 0.5 * 1.5;
        let adjusted = 3.0 - a_t * 0.5;
        let expect = (1.0 / 2.0 + adjusted / obs_var) / (1.0 / 2.0 + 1.0 / obs_var);
        assert_relative_eq!(fwd[0].m[0], expect, max_relative = 1e-13);
        assert_relative_eq!(fwd[0].c[(0, 0)], 1.0 / (0.5 + 1.0 / obs_var), max_relative = 1e-13);
    }

    #[test]
    fn inverse_wishart_scalar_matches_inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (dof, s) = (9.0, 3.0);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| sample_inverse_wishart(dof, &Mat::from_element(1, 1, s), &mut rng).unwrap()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        // IW(ν, S) with p = 1 is IGa(ν/2, S/2), mean S/(ν - 2).
        assert_relative_eq!(mean, s / (dof - 2.0), max_relative = 0.01);
    }

    #[test]
    fn inverse_wishart_matrix_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let scale = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let dof = 10.0;
        let n = 100_000;
        let mut acc = Mat::zeros(2, 2);
        for _ in 0..n {
            acc += sample_inverse_wishart(dof, &scale, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expect = &scale / (dof - 3.0);
        assert!((mean - expect).amax() < 0.01);
    }

    #[test]
    fn summary_quantiles() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = summarize(&v, 0.9);
        assert_eq!(s.mean, 50.0);
        assert_relative_eq!(s.lower, 5.0, max_relative = 1e-12);
        assert_relative_eq!(s.upper, 95.0, max_relative = 1e-12);
    }

    #[test]
    fn ess_of_iid_and_sticky_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let iid: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&iid);
        assert!(ess > 3000.0, "{ess}");
        let mut ar = vec![0.0f64; 4000];
        for i in 1..4000 {
            ar[i] = 0.9 * ar[i - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        let ess = effective_sample_size(&ar);
        // AR(1) with coefficient 0.9 has ESS ≈ n (1 - 0.9)/(1 + 0.9).
        assert!(ess > 120.0 && ess < 330.0, "{ess}");
    }

    #[test]
    fn chains_are_seed_deterministic() {
        let spec = build_local_level().unwrap();
        let data = TimeSeriesData::from_values((0..30).map(|i| (i as f64 * 0.3).sin() * 3.0).collect()).unwrap();
        let prior = PriorSpec::vague(1);
        let cfg = McmcConfig { sweeps: 60, burn_in: 20, thin: 2, seed: 8 };
        let a = run_gibbs(&data, &spec, &prior, QuantileSpec::median(), &cfg).unwrap();
        let b = run_gibbs(&data, &spec, &prior, QuantileSpec::median(), &cfg).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.linear_predictor, b.linear_predictor);
    }
}
