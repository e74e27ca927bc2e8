//! Approximate sequential DQLM.
//!
//! The state is augmented with `u_t = log U_t`, kept jointly normal with
//! `θ_t`. Covariances are stored in units of `φ^{-1}`: the true covariance of
//! `(θ_t, u_t)` is `φ^{-1} C*`. Each step evolves the augmented state, maps the
//! normal law of `u_t` to a gamma law for `U_t`, forms the NGAL one-step
//! predictive and applies a Bayes linear update.

use serde::{Deserialize, Serialize};

use crate::distributions::{DensityMethod, GalParams, GammaMoments, NgalParams, QuantileSpec};
use crate::error::{domain, DqlmError, Result};
use crate::linalg::{symmetrize, Mat, Vector};
use crate::model::{EvolutionScale, EvolutionVariance, ModelSpec, PriorSpec, TimeSeriesData, UEvolution, DEFAULT_DISCOUNT};
use crate::quadrature::QuadConfig;

/// Smallest gamma shape handed to the predictive; below it the lognormal
/// to gamma bridge has no interior mode.
pub const MIN_U_SHAPE: f64 = 1.0001;

/// Mean and scaled covariance of `θ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub m: Vector,
    pub c: Mat,
}

/// `(θ_t, u_t)` with mean `m` and scaled covariance `c`; the last
/// coordinate is the u-block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub m: Vector,
    pub c: Mat,
}

impl AugmentedState {
    /// Prior at `t = 0`. Prior covariances are absolute, so they are
    /// multiplied by `φ` here.
    pub fn from_prior(prior: &PriorSpec, phi: f64) -> Result<Self> {
        let p = prior.m0.len();
        prior.validate(p)?;
        check_phi(phi)?;
        let mut m = Vector::zeros(p + 1);
        m.rows_mut(0, p).copy_from(&prior.m0);
        m[p] = prior.m_u0;
        let mut c = Mat::zeros(p + 1, p + 1);
        c.view_mut((0, 0), (p, p)).copy_from(&(&prior.c0 * phi));
        c.view_mut((0, p), (p, 1)).copy_from(&(&prior.lambda0 * phi));
        c.view_mut((p, 0), (1, p)).copy_from(&(prior.lambda0.transpose() * phi));
        c[(p, p)] = prior.c_u0 * phi;
        Ok(Self { m, c })
    }

    pub fn state_dim(&self) -> usize {
        self.m.len() - 1
    }

    pub fn theta_mean(&self) -> Vector {
        self.m.rows(0, self.state_dim()).into_owned()
    }

    pub fn theta_cov(&self) -> Mat {
        let p = self.state_dim();
        self.c.view((0, 0), (p, p)).into_owned()
    }

    /// State–u covariance `Λ`.
    pub fn cross_cov(&self) -> Vector {
        let p = self.state_dim();
        self.c.view((0, p), (p, 1)).column(0).into_owned()
    }

    pub fn u_mean(&self) -> f64 {
        self.m[self.state_dim()]
    }

    pub fn u_var(&self) -> f64 {
        let p = self.state_dim();
        self.c[(p, p)]
    }

    pub fn theta_part(&self) -> GaussianState {
        GaussianState { m: self.theta_mean(), c: self.theta_cov() }
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi.is_finite()) {
        return domain(format!("phi must be positive and finite, got {phi}"));
    }
    Ok(())
}

/// The state-block policy the sequential engine applies. Policies that need
/// posterior sampling fall back to the default discount factor.
fn state_policy(spec: &ModelSpec) -> StatePolicy {
    match &spec.evolution_variance {
        EvolutionVariance::Fixed(w) => StatePolicy::Fixed(w.clone()),
        EvolutionVariance::StudentT { scale: EvolutionScale::Fixed(w), .. } => StatePolicy::Fixed(w.clone()),
        EvolutionVariance::Discount(d) => StatePolicy::Discount(*d),
        _ => StatePolicy::Discount(DEFAULT_DISCOUNT),
    }
}

enum StatePolicy {
    Fixed(Mat),
    Discount(f64),
}

/// Scaled `W*_t = blockdiag(W_t, W_{u,t})` for the transition out of `state`.
pub fn evolution_variance(state: &AugmentedState, spec: &ModelSpec, t: usize, phi: f64) -> Mat {
    let p = state.state_dim();
    let g = spec.g(t);
    let mut w = Mat::zeros(p + 1, p + 1);
    let w_theta = match state_policy(spec) {
        StatePolicy::Fixed(w) => w * phi,
        StatePolicy::Discount(d) => g * state.theta_cov() * g.transpose() * ((1.0 - d) / d),
    };
    w.view_mut((0, 0), (p, p)).copy_from(&w_theta);
    w[(p, p)] = match spec.u_evolution {
        UEvolution::Zero => 0.0,
        UEvolution::Discount(d) => state.u_var() * (1.0 - d) / d,
        UEvolution::Fixed(v) => v * phi,
    };
    symmetrize(&mut w);
    w
}

/// `G*_t = blockdiag(G_t, 1)`.
pub fn augmented_g(spec: &ModelSpec, t: usize) -> Mat {
    let p = spec.state_dim();
    let mut g = Mat::identity(p + 1, p + 1);
    g.view_mut((0, 0), (p, p)).copy_from(spec.g(t));
    g
}

/// Propagates with an explicit `W*`: `a* = G* m*`, `R* = G* C* G*' + W*`.
pub fn evolve_with(state: &AugmentedState, spec: &ModelSpec, t: usize, w_star: &Mat) -> AugmentedState {
    let g = augmented_g(spec, t);
    let mut r = &g * &state.c * g.transpose() + w_star;
    symmetrize(&mut r);
    AugmentedState { m: &g * &state.m, c: r }
}

/// Prior moments `(a*_t, R*_t)` at time `t`.
pub fn evolve(state: &AugmentedState, spec: &ModelSpec, t: usize, phi: f64) -> Result<AugmentedState> {
    check_phi(phi)?;
    Ok(evolve_with(state, spec, t, &evolution_variance(state, spec, t, phi)))
}

/// Gamma law of `U_t` given the prior: `α = φ/R_u`, `β = e^{-a_u} α`.
/// The returned flag is set when `α` had to be raised to [`MIN_U_SHAPE`].
pub fn u_marginal_gamma(prior: &AugmentedState, phi: f64) -> Result<(GammaMoments, bool)> {
    check_phi(phi)?;
    let r_u = prior.u_var();
    if !(r_u > 0.0) {
        return Err(DqlmError::Numerical(format!("u-block variance {r_u} is not positive")));
    }
    let mut alpha = phi / r_u;
    let mut clamped = false;
    if alpha < 1.0 - 1e-9 {
        alpha = MIN_U_SHAPE;
        clamped = true;
    }
    let beta = (-prior.u_mean()).exp() * alpha;
    Ok((GammaMoments::new(alpha, beta)?, clamped))
}

/// Caps the prior u-block variance at `φ / MIN_U_SHAPE`, rescaling `Λ` to
/// keep the state–u correlation, so that the gamma law used by the
/// predictive stays consistent with the covariance used by the update.
/// Returns whether the cap was applied.
pub fn cap_u_variance(prior: &mut AugmentedState, phi: f64) -> bool {
    let p = prior.state_dim();
    let cap = phi / MIN_U_SHAPE;
    let r_u = prior.c[(p, p)];
    if r_u <= phi * (1.0 + 1e-9) {
        return false;
    }
    let k = (cap / r_u).sqrt();
    for i in 0..p {
        prior.c[(i, p)] *= k;
        prior.c[(p, i)] *= k;
    }
    prior.c[(p, p)] = cap;
    true
}

/// One-step predictive law of `y_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepPredictive {
    pub f: f64,
    /// Scaled variance: `V(y_t) = φ^{-1} q`.
    pub q: f64,
    pub ngal: NgalParams,
    pub alpha: f64,
    pub beta: f64,
    /// Whether the u-shape guard fired.
    pub clamped: bool,
}

/// NGAL predictive: `GAL(F'a, a_τφ^{-1/2}/β, b_τφ^{-1}/β, α)` convolved with
/// `N(0, φ^{-1}F'RF)`.
pub fn predictive(prior: &AugmentedState, spec: &ModelSpec, q: &QuantileSpec, phi: f64, t: usize) -> Result<OneStepPredictive> {
    let (gam, clamped) = u_marginal_gamma(prior, phi)?;
    let (alpha, beta) = (gam.shape, gam.rate);
    let f_vec = spec.f(t);
    let a = prior.theta_mean();
    let r = prior.theta_cov();
    let frf = f_vec.dot(&(&r * f_vec)).max(0.0);
    let sd = phi.powf(-0.5);
    let lin = f_vec.dot(&a);
    let gal = GalParams::new(lin, q.a_tau() * sd / beta, q.b_tau() / (phi * beta), alpha)?;
    let ngal = NgalParams::new(gal, frf / phi)?;
    let f = lin + q.a_tau() * sd * alpha / beta;
    let qq = frf + q.b_tau() * alpha / beta + q.a_tau() * q.a_tau() * alpha / (beta * beta);
    Ok(OneStepPredictive { f, q: qq, ngal, alpha, beta, clamped })
}

/// Bayes linear update of the augmented state.
pub fn bayes_linear_update(
    prior: &AugmentedState,
    pred: &OneStepPredictive,
    spec: &ModelSpec,
    q: &QuantileSpec,
    y: f64,
    phi: f64,
    t: usize,
) -> Result<AugmentedState> {
    check_phi(phi)?;
    if !(pred.q > 0.0 && pred.q.is_finite()) {
        return Err(DqlmError::Numerical(format!("one-step variance {} is not positive", pred.q)));
    }
    if !y.is_finite() {
        return domain("observation must be finite");
    }
    let p = prior.state_dim();
    let f_vec = spec.f(t);
    let lambda = prior.cross_cov();
    let r = prior.theta_cov();
    let k = phi.powf(-0.5) * q.a_tau() * prior.u_mean().exp();
    let mut gain = Vector::zeros(p + 1);
    gain.rows_mut(0, p).copy_from(&((&r * f_vec + &lambda * k) / pred.q));
    gain[p] = (lambda.dot(f_vec) + k * prior.u_var()) / pred.q;
    let m = &prior.m + &gain * (y - pred.f);
    let mut c = &prior.c - &gain * gain.transpose() * pred.q;
    symmetrize(&mut c);
    if (0..=p).any(|i| !(c[(i, i)] >= 0.0)) {
        return Err(DqlmError::Numerical(format!("posterior covariance lost positivity at t = {t}")));
    }
    Ok(AugmentedState { m, c })
}

/// Exact update of `θ_t` given `u_t`: `f(u) = F'a + a_τφ^{-1/2}e^u`,
/// `q(u) = F'RF + b_τe^u`.
pub fn conditional_filter_step(
    prior: &GaussianState,
    spec: &ModelSpec,
    q: &QuantileSpec,
    y: f64,
    u: f64,
    phi: f64,
    t: usize,
) -> Result<GaussianState> {
    check_phi(phi)?;
    let f_vec = spec.f(t);
    let rf = &prior.c * f_vec;
    let f = f_vec.dot(&prior.m) + q.a_tau() * phi.powf(-0.5) * u.exp();
    let qq = f_vec.dot(&rf) + q.b_tau() * u.exp();
    if !(qq > 0.0 && qq.is_finite()) {
        return Err(DqlmError::Numerical(format!("conditional variance {qq} is not positive")));
    }
    let m = &prior.m + &rf * ((y - f) / qq);
    let mut c = &prior.c - &rf * rf.transpose() / qq;
    symmetrize(&mut c);
    Ok(GaussianState { m, c })
}

/// Conditional prior `(a_t, R_t)` of `θ_t` for the frozen-`u` filter.
pub fn conditional_evolve(state: &GaussianState, spec: &ModelSpec, t: usize, phi: f64) -> GaussianState {
    let g = spec.g(t);
    let mut r = g * &state.c * g.transpose();
    match state_policy(spec) {
        StatePolicy::Fixed(w) => r += w * phi,
        StatePolicy::Discount(d) => r /= d,
    }
    symmetrize(&mut r);
    GaussianState { m: g * &state.m, c: r }
}

pub fn log_predictive(pred: &OneStepPredictive, y: f64, method: DensityMethod, cfg: &QuadConfig) -> Result<f64> {
    pred.ngal.ln_density(y, method, cfg)
}

/// Settings of a filter pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub method: DensityMethod,
    pub quad: QuadSettings,
    /// Evaluate `log p(y_t | D_{t-1})` (the expensive part of a step).
    pub log_likelihood: bool,
}

/// Serializable mirror of [`QuadConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        let q = QuadConfig::default();
        Self { abs_tol: q.abs_tol, rel_tol: q.rel_tol, max_subdivisions: q.max_subdivisions }
    }
}

impl From<QuadSettings> for QuadConfig {
    fn from(s: QuadSettings) -> Self {
        QuadConfig::default()
            .with_abs_tol(s.abs_tol)
            .with_rel_tol(s.rel_tol)
            .with_max_subdivisions(s.max_subdivisions)
    }
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { method: DensityMethod::CfInversion, quad: QuadSettings::default(), log_likelihood: true }
    }
}

/// Everything emitted by one filter step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStep {
    pub t: usize,
    pub prior: AugmentedState,
    pub predictive: OneStepPredictive,
    pub posterior: AugmentedState,
    /// `log p(y_t | D_{t-1}, φ)`, `NaN` when not requested.
    pub log_predictive: f64,
}

impl FilterStep {
    /// Filtered mean and scaled variance of `F_t'θ_t`.
    pub fn linear_predictor(&self, spec: &ModelSpec) -> (f64, f64) {
        let f = spec.f(self.t);
        let m = self.posterior.theta_mean();
        let c = self.posterior.theta_cov();
        (f.dot(&m), f.dot(&(&c * f)))
    }
}

/// Online filter for one quantile at a fixed `φ`.
#[derive(Debug, Clone)]
pub struct SequentialFilter<'a> {
    spec: &'a ModelSpec,
    quantile: QuantileSpec,
    phi: f64,
    options: FilterOptions,
    state: AugmentedState,
    t: usize,
    log_lik: f64,
    clamps: usize,
}

impl<'a> SequentialFilter<'a> {
    pub fn new(spec: &'a ModelSpec, prior: &PriorSpec, quantile: QuantileSpec, phi: f64, options: FilterOptions) -> Result<Self> {
        spec.validate()?;
        prior.validate(spec.state_dim())?;
        let state = AugmentedState::from_prior(prior, phi)?;
        Ok(Self { spec, quantile, phi, options, state, t: 0, log_lik: 0.0, clamps: 0 })
    }

    pub fn state(&self) -> &AugmentedState {
        &self.state
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Accumulated `Σ log p(y_s | D_{s-1}, φ)`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_lik
    }

    /// Number of steps where the u-block variance was capped.
    pub fn clamp_count(&self) -> usize {
        self.clamps
    }

    pub fn step(&mut self, y: f64) -> Result<FilterStep> {
        let t = self.t + 1;
        let mut prior = evolve(&self.state, self.spec, t, self.phi)?;
        let capped = cap_u_variance(&mut prior, self.phi);
        let pred = predictive(&prior, self.spec, &self.quantile, self.phi, t)?;
        let lp = if self.options.log_likelihood {
            log_predictive(&pred, y, self.options.method, &self.options.quad.into())?
        } else {
            f64::NAN
        };
        let posterior = bayes_linear_update(&prior, &pred, self.spec, &self.quantile, y, self.phi, t)?;
        if posterior.m.iter().chain(posterior.c.iter()).any(|v| !v.is_finite()) {
            return Err(DqlmError::Numerical(format!("non-finite filter moments at t = {t}")));
        }
        self.state = posterior.clone();
        self.t = t;
        self.log_lik += lp;
        if capped || pred.clamped {
            self.clamps += 1;
        }
        Ok(FilterStep { t, prior, predictive: pred, posterior, log_predictive: lp })
    }
}

/// A complete filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRun {
    pub quantile: QuantileSpec,
    pub phi: f64,
    pub steps: Vec<FilterStep>,
    pub log_likelihood: f64,
    pub clamp_count: usize,
}

impl FilterRun {
    pub fn final_state(&self) -> Option<&AugmentedState> {
        self.steps.last().map(|s| &s.posterior)
    }
}

/// Runs the filter over `data`, handing every step to `sink` as it is produced.
pub fn run_filter_with(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    quantile: QuantileSpec,
    phi: f64,
    options: FilterOptions,
    mut sink: impl FnMut(&FilterStep),
) -> Result<FilterRun> {
    data.validate()?;
    let mut filter = SequentialFilter::new(spec, prior, quantile, phi, options)?;
    let mut steps = Vec::with_capacity(data.len());
    for &y in &data.y {
        let s = filter.step(y)?;
        sink(&s);
        steps.push(s);
    }
    Ok(FilterRun { quantile, phi, steps, log_likelihood: filter.log_likelihood(), clamp_count: filter.clamp_count() })
}

pub fn run_filter(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    quantile: QuantileSpec,
    phi: f64,
    options: FilterOptions,
) -> Result<FilterRun> {
    run_filter_with(data, spec, prior, quantile, phi, options, |_| {})
}

/// `log Ga(φ^{-1}; n_0/2, d_0/2)` as a density in `φ^{-1}`.
pub fn log_phi_prior(phi_inv: f64, prior: &PriorSpec) -> f64 {
    let (a, b) = (prior.n0 / 2.0, prior.d0 / 2.0);
    a * b.ln() - crate::special::ln_gamma(a) + (a - 1.0) * phi_inv.ln() - b * phi_inv
}

/// Settings of the scale search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub filter: FilterOptions,
    /// Half-width, in `log φ^{-1}`, of the initial grid around the start.
    pub grid_half_width: f64,
    pub grid_points: usize,
    pub max_iterations: usize,
    pub objective_tol: f64,
    pub relative_tol: f64,
    /// Evaluate grid candidates on separate threads.
    pub parallel: bool,
    /// Re-evaluate the optimum with the convolution density.
    pub cross_check: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            filter: FilterOptions::default(),
            grid_half_width: 6.0,
            grid_points: 13,
            max_iterations: 100,
            objective_tol: 1e-8,
            relative_tol: 1e-6,
            parallel: true,
            cross_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub phi_inv: f64,
    pub log_posterior: f64,
    /// Best objective after each iteration; non-decreasing.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// `|log posterior (convolution) - log posterior (ch.f.)|` at the optimum.
    pub cross_check_gap: Option<f64>,
}

impl PhiEstimate {
    /// `φ^{-1/2}`.
    pub fn scale(&self) -> f64 {
        self.phi_inv.sqrt()
    }

    pub fn phi(&self) -> f64 {
        1.0 / self.phi_inv
    }
}

/// `Σ_t log p(y_t | D_{t-1}, φ) + log p(φ^{-1})`.
pub fn log_posterior_phi(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    quantile: QuantileSpec,
    phi_inv: f64,
    options: FilterOptions,
) -> Result<f64> {
    let run = run_filter(data, spec, prior, quantile, 1.0 / phi_inv, FilterOptions { log_likelihood: true, ..options })?;
    Ok(run.log_likelihood + log_phi_prior(phi_inv, prior))
}

/// Maximizes the posterior of `φ^{-1}` over `x = log φ^{-1}`: a grid scan
/// (shifted until the best point is interior), then golden-section search
/// on the bracketing interval. Filter failures count as `-∞`.
pub fn fit_map_phi(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    quantile: QuantileSpec,
    init_phi_inv: f64,
    cfg: &MapConfig,
) -> Result<PhiEstimate> {
    if !(init_phi_inv > 0.0 && init_phi_inv.is_finite()) {
        return domain("initial phi^-1 must be positive");
    }
    if cfg.grid_points < 3 || !(cfg.grid_half_width > 0.0) {
        return domain("scale search needs at least 3 grid points and a positive width");
    }
    spec.validate()?;
    prior.validate(spec.state_dim())?;
    let eval = |x: f64| -> f64 {
        match log_posterior_phi(data, spec, prior, quantile, x.exp(), cfg.filter) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    let eval_many = |xs: &[f64]| -> Vec<f64> {
        if cfg.parallel && xs.len() > 1 {
            std::thread::scope(|s| {
                let hs: Vec<_> = xs.iter().map(|&x| s.spawn(move || eval(x))).collect();
                hs.into_iter().map(|h| h.join().unwrap_or(f64::NEG_INFINITY)).collect()
            })
        } else {
            xs.iter().map(|&x| eval(x)).collect()
        }
    };

    let n = cfg.grid_points;
    let h = 2.0 * cfg.grid_half_width / (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| init_phi_inv.ln() - cfg.grid_half_width + h * i as f64).collect();
    let mut fs = eval_many(&xs);
    let mut evaluations = n;
    let mut iterations = 1;
    let mut best = fs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut trace = vec![best];
    // Shift the grid while the maximum sits on an edge.
    loop {
        let i = argmax(&fs);
        if !fs[i].is_finite() {
            return Err(DqlmError::Numerical("filter failed at every grid point".into()));
        }
        if i > 0 && i < n - 1 {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Ok(PhiEstimate {
                phi_inv: xs[i].exp(),
                log_posterior: fs[i],
                trace,
                converged: false,
                iterations,
                evaluations,
                cross_check_gap: None,
            });
        }
        let shift = if i == 0 { -(n as f64 - 2.0) * h } else { (n as f64 - 2.0) * h };
        xs = xs.iter().map(|x| x + shift).collect();
        fs = eval_many(&xs);
        evaluations += n;
        iterations += 1;
        best = best.max(fs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        trace.push(best);
    }

    let i = argmax(&fs);
    let (mut a, mut b) = (xs[i - 1], xs[i + 1]);
    let (mut best_x, mut best_f) = (xs[i], fs[i]);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    evaluations += 2;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let prev = best_f;
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
        evaluations += 1;
        for (x, f) in [(c, fc), (d, fd)] {
            if f > best_f {
                best_f = f;
                best_x = x;
            }
        }
        trace.push(best_f);
        let improved = best_f - prev;
        if (improved > 0.0 && improved < cfg.objective_tol) || (b - a) < cfg.relative_tol {
            converged = true;
            break;
        }
    }
    let phi_inv = best_x.exp();
    let cross_check_gap = if cfg.cross_check {
        let conv = FilterOptions { method: DensityMethod::Convolution, ..cfg.filter };
        log_posterior_phi(data, spec, prior, quantile, phi_inv, conv).ok().map(|v| (v - best_f).abs())
    } else {
        None
    };
    Ok(PhiEstimate { phi_inv, log_posterior: best_f, trace, converged, iterations, evaluations, cross_check_gap })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fits `φ` and runs the filter at the estimate, for each quantile on its own thread.
pub fn fit_sequential_grid(
    data: &TimeSeriesData,
    spec: &ModelSpec,
    prior: &PriorSpec,
    init_phi_inv: f64,
    cfg: &MapConfig,
) -> Result<Vec<(PhiEstimate, FilterRun)>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .quantiles
            .iter()
            .map(|&q| {
                scope.spawn(move || -> Result<(PhiEstimate, FilterRun)> {
                    let inner = MapConfig { parallel: false, ..*cfg };
                    let est = fit_map_phi(data, spec, prior, q, init_phi_inv, &inner)?;
                    let run = run_filter(data, spec, prior, q, est.phi(), cfg.filter)?;
                    Ok((est, run))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("filter thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_local_level, build_trend_seasonal};
    use approx::assert_relative_eq;

    fn level_prior() -> PriorSpec {
        let mut p = PriorSpec::vague(1);
        p.c0[(0, 0)] = 10.0;
        p
    }

    #[test]
    fn prior_state_is_scaled_by_phi() {
        let s = AugmentedState::from_prior(&level_prior(), 0.5).unwrap();
        assert_eq!(s.theta_cov()[(0, 0)], 5.0);
        assert_eq!(s.u_var(), 0.5);
        assert_eq!(s.u_mean(), 0.0);
    }

    #[test]
    fn identity_evolution_without_noise_is_a_no_op() {
        let spec = build_local_level().unwrap().with_evolution_variance(EvolutionVariance::Fixed(Mat::zeros(1, 1))).unwrap();
        let s = AugmentedState::from_prior(&level_prior(), 1.0).unwrap();
        let e = evolve(&s, &spec, 1, 1.0).unwrap();
        assert_eq!(e, s);
    }

    #[test]
    fn discount_inflates_state_block_and_rotates_cross_block() {
        let spec = build_trend_seasonal(12).unwrap();
        let mut prior = PriorSpec::vague(4);
        prior.c0 = Mat::identity(4, 4) * 2.0;
        prior.lambda0 = Vector::from_vec(vec![0.1, 0.0, 0.2, -0.1]);
        let s = AugmentedState::from_prior(&prior, 1.0).unwrap();
        let e = evolve(&s, &spec, 1, 1.0).unwrap();
        let g = spec.g(1);
        let expect = g * s.theta_cov() * g.transpose() / 0.95;
        assert!((e.theta_cov() - expect).amax() < 1e-12);
        assert!((e.cross_cov() - g * s.cross_cov()).amax() < 1e-15);
        assert_eq!(e.u_var(), s.u_var());
    }

    #[test]
    fn u_gamma_examples() {
        let mut s = AugmentedState::from_prior(&level_prior(), 1.0).unwrap();
        s.c[(1, 1)] = 0.25;
        let (g, clamped) = u_marginal_gamma(&s, 1.0).unwrap();
        assert_eq!((g.shape, g.rate), (4.0, 4.0));
        assert!(!clamped);
        s.c[(1, 1)] = 4.0;
        let (g, clamped) = u_marginal_gamma(&s, 1.0).unwrap();
        assert!(clamped);
        assert_eq!(g.shape, MIN_U_SHAPE);
    }

    #[test]
    fn median_predictive_is_centred_on_the_level() {
        let spec = build_local_level().unwrap();
        let s = AugmentedState::from_prior(&level_prior(), 2.0).unwrap();
        let e = evolve(&s, &spec, 1, 2.0).unwrap();
        let p = predictive(&e, &spec, &QuantileSpec::median(), 2.0, 1).unwrap();
        assert_eq!(p.f, 0.0);
        let m = p.ngal.moments();
        assert_relative_eq!(m.mean, p.f, epsilon = 1e-12);
        assert_relative_eq!(m.variance, p.q / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn predictive_moments_match_ngal_for_skewed_quantile() {
        let spec = build_local_level().unwrap();
        let mut prior = level_prior();
        prior.m_u0 = 0.3;
        prior.c_u0 = 0.2;
        let phi = 0.7;
        let s = AugmentedState::from_prior(&prior, phi).unwrap();
        let e = evolve(&s, &spec, 1, phi).unwrap();
        let p = predictive(&e, &spec, &QuantileSpec::new(0.2).unwrap(), phi, 1).unwrap();
        let m = p.ngal.moments();
        assert_relative_eq!(m.mean, p.f, max_relative = 1e-12);
        assert_relative_eq!(m.variance, p.q / phi, max_relative = 1e-12);
        assert_relative_eq!(p.alpha / p.beta, 0.3f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn zero_innovation_leaves_prior_mean() {
        let spec = build_local_level().unwrap();
        let q = QuantileSpec::new(0.8).unwrap();
        let s = AugmentedState::from_prior(&level_prior(), 1.0).unwrap();
        let e = evolve(&s, &spec, 1, 1.0).unwrap();
        let p = predictive(&e, &spec, &q, 1.0, 1).unwrap();
        let post = bayes_linear_update(&e, &p, &spec, &q, p.f, 1.0, 1).unwrap();
        assert_eq!(post.m, e.m);
    }

    #[test]
    fn median_gain_is_kalman_gain_without_cross_covariance() {
        let spec = build_local_level().unwrap();
        let q = QuantileSpec::median();
        let s = AugmentedState::from_prior(&level_prior(), 1.0).unwrap();
        let e = evolve(&s, &spec, 1, 1.0).unwrap();
        let p = predictive(&e, &spec, &q, 1.0, 1).unwrap();
        let post = bayes_linear_update(&e, &p, &spec, &q, 3.0, 1.0, 1).unwrap();
        let r = e.theta_cov()[(0, 0)];
        assert_relative_eq!(post.m[0], r / p.q * 3.0, max_relative = 1e-14);
        assert_eq!(post.m[1], 0.0);
    }

    #[test]
    fn huge_mixing_weight_blocks_the_conditional_update() {
        let spec = build_local_level().unwrap();
        let g = GaussianState { m: Vector::from_element(1, 1.0), c: Mat::from_element(1, 1, 1.0) };
        let post = conditional_filter_step(&g, &spec, &QuantileSpec::median(), 50.0, 60.0, 1.0, 1).unwrap();
        assert!((post.m[0] - 1.0).abs() < 1e-20);
    }

    #[test]
    fn map_phi_prior_mode_without_data() {
        let spec = build_local_level().unwrap();
        let mut prior = level_prior();
        prior.n0 = 10.0;
        prior.d0 = 4.0;
        let data = TimeSeriesData::from_values(vec![]).unwrap();
        let est = fit_map_phi(&data, &spec, &prior, QuantileSpec::median(), 0.3, &MapConfig::default()).unwrap();
        assert!(est.converged);
        assert_relative_eq!(est.phi_inv, 2.0, max_relative = 1e-5);
        assert!(est.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
