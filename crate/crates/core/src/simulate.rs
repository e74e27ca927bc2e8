//! Synthetic data generators for the simulation designs used in tests and
//! the command-line presets.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};

use crate::distributions::{al_sample_via_mixture, AlParams, QuantileSpec};
use crate::error::{domain, Result};
use crate::linalg::{block_diag, psd_factor, Mat, Vector};
use crate::model::{ModelSpec, TimeSeriesData};

/// A simulated series together with its latent states `θ_0..θ_T`.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub data: TimeSeriesData,
    pub states: Vec<Vector>,
}

impl SimulatedPath {
    /// `F_t' θ_t` for `t = 1..T`.
    pub fn linear_predictor(&self, spec: &ModelSpec) -> Vec<f64> {
        (1..self.states.len()).map(|t| spec.linear_predictor(t, &self.states[t])).collect()
    }
}

/// Ground truth for a Gaussian DLM.
#[derive(Debug, Clone)]
pub struct DlmTruth {
    pub obs_var: f64,
    pub w: Mat,
    pub theta0: Vector,
}

/// `V = 49`, `W = blockdiag(W_2, I_2)` with `W_2 = [[0.02, 0.01], [0.01, 0.01]]`.
pub fn trend_seasonal_truth() -> DlmTruth {
    let w2 = Mat::from_row_slice(2, 2, &[0.02, 0.01, 0.01, 0.01]);
    DlmTruth {
        obs_var: 49.0,
        w: block_diag(&w2, &Mat::identity(2, 2)),
        theta0: Vector::from_vec(vec![20.0, 0.1, 10.0, 0.0]),
    }
}

fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn evolve_states<R: Rng + ?Sized>(spec: &ModelSpec, w: &Mat, theta0: &Vector, t_len: usize, rng: &mut R) -> Result<Vec<Vector>> {
    let p = spec.state_dim();
    if w.shape() != (p, p) || theta0.len() != p {
        return domain(format!("truth dimensions do not match state dimension {p}"));
    }
    let lw = psd_factor(w)?;
    let mut states = Vec::with_capacity(t_len + 1);
    states.push(theta0.clone());
    for t in 1..=t_len {
        let next = spec.g(t) * &states[t - 1] + &lw * standard_normal_vec(p, rng);
        states.push(next);
    }
    Ok(states)
}

/// Gaussian DLM: `θ_t = G_t θ_{t-1} + w_t`, `y_t = F_t'θ_t + v_t`.
pub fn simulate_dlm<R: Rng + ?Sized>(spec: &ModelSpec, truth: &DlmTruth, t_len: usize, rng: &mut R) -> Result<SimulatedPath> {
    if t_len == 0 {
        return domain("series length must be at least 1");
    }
    if !(truth.obs_var >= 0.0) {
        return domain("observation variance must be non-negative");
    }
    let states = evolve_states(spec, &truth.w, &truth.theta0, t_len, rng)?;
    let sd = truth.obs_var.sqrt();
    let y = (1..=t_len)
        .map(|t| spec.linear_predictor(t, &states[t]) + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(SimulatedPath { data: TimeSeriesData::from_values(y)?, states })
}

/// DLM with asymmetric Laplace observations `y_t ~ AL(F_t'θ_t, σ, τ)`.
pub fn simulate_al_dlm<R: Rng + ?Sized>(
    spec: &ModelSpec,
    w: &Mat,
    theta0: &Vector,
    sigma: f64,
    quantile: QuantileSpec,
    t_len: usize,
    rng: &mut R,
) -> Result<SimulatedPath> {
    if t_len == 0 {
        return domain("series length must be at least 1");
    }
    let states = evolve_states(spec, w, theta0, t_len, rng)?;
    let mut y = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let p = AlParams::new(spec.linear_predictor(t, &states[t]), sigma, quantile)?;
        y.push(al_sample_via_mixture(&p, rng));
    }
    Ok(SimulatedPath { data: TimeSeriesData::from_values(y)?, states })
}

/// Dynamic gamma regression with log link: `x_t ~ U(2, 4)`, `F_t = (1, x_t)'`,
/// `θ_t = θ_{t-1} + N(0, w I)`, `y_t ~ Ga(φ, φ/μ_t)` with `log μ_t = F_t'θ_t`.
pub fn simulate_gamma_regression<R: Rng + ?Sized>(
    t_len: usize,
    phi: f64,
    w: f64,
    theta0: &Vector,
    rng: &mut R,
) -> Result<SimulatedPath> {
    if t_len == 0 || !(phi > 0.0) || !(w >= 0.0) || theta0.len() != 2 {
        return domain("gamma regression needs T >= 1, phi > 0, w >= 0 and a 2-vector theta0");
    }
    let ux = Uniform::new(2.0, 4.0).map_err(|e| crate::DqlmError::Domain(e.to_string()))?;
    let sd = w.sqrt();
    let mut states = vec![theta0.clone()];
    let mut x = Vec::with_capacity(t_len);
    let mut y = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let next = &states[t - 1] + sd * standard_normal_vec(2, rng);
        let xt: f64 = ux.sample(rng);
        let mu = (next[0] + next[1] * xt).exp();
        let g = Gamma::new(phi, mu / phi).map_err(|e| crate::DqlmError::Domain(e.to_string()))?;
        y.push(g.sample(rng));
        x.push(xt);
        states.push(next);
    }
    let data = TimeSeriesData::from_values(y)?.with_covariates(x.iter().map(|&v| vec![v]).collect())?;
    Ok(SimulatedPath { data, states })
}

/// IID `Ga(shape, rate)` draws indexed `1..=T`.
pub fn simulate_static_gamma<R: Rng + ?Sized>(t_len: usize, shape: f64, rate: f64, rng: &mut R) -> Result<TimeSeriesData> {
    if t_len == 0 || !(shape > 0.0 && rate > 0.0) {
        return domain("static gamma needs T >= 1 and positive shape and rate");
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| crate::DqlmError::Domain(e.to_string()))?;
    TimeSeriesData::from_values((0..t_len).map(|_| g.sample(rng)).collect())
}

/// Settings for a Gaussian local-level series with one abrupt level change.
#[derive(Debug, Clone, Copy)]
pub struct LevelShift {
    pub t_len: usize,
    pub level0: f64,
    /// Time of the jump, `1 <= jump_at <= T`.
    pub jump_at: usize,
    pub jump: f64,
    pub evolution_sd: f64,
    pub obs_sd: f64,
}

impl Default for LevelShift {
    fn default() -> Self {
        Self { t_len: 100, level0: 1100.0, jump_at: 28, jump: -250.0, evolution_sd: 10.0, obs_sd: 30.0 }
    }
}

pub fn simulate_level_shift<R: Rng + ?Sized>(cfg: &LevelShift, rng: &mut R) -> Result<SimulatedPath> {
    if cfg.t_len == 0 || cfg.jump_at == 0 || cfg.jump_at > cfg.t_len {
        return domain("jump time must lie in 1..=T");
    }
    let mut level = cfg.level0;
    let mut states = vec![Vector::from_element(1, level)];
    let mut y = Vec::with_capacity(cfg.t_len);
    for t in 1..=cfg.t_len {
        level += cfg.evolution_sd * rng.sample::<f64, _>(StandardNormal);
        if t == cfg.jump_at {
            level += cfg.jump;
        }
        states.push(Vector::from_element(1, level));
        y.push(level + cfg.obs_sd * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(SimulatedPath { data: TimeSeriesData::from_values(y)?, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_local_level, build_trend_seasonal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_dlm_is_deterministic_rotation() {
        let spec = build_trend_seasonal(12).unwrap();
        let truth = DlmTruth { obs_var: 0.0, w: Mat::zeros(4, 4), theta0: Vector::from_vec(vec![1.0, 0.5, 2.0, -1.0]) };
        let path = simulate_dlm(&spec, &truth, 30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g = spec.g(1);
        let mut theta = truth.theta0.clone();
        for t in 1..=30 {
            theta = g * theta;
            assert!((path.data.y[t - 1] - spec.f(t).dot(&theta)).abs() < 1e-10);
        }
    }

    #[test]
    fn seeds_reproduce_paths() {
        let spec = build_trend_seasonal(12).unwrap();
        let truth = trend_seasonal_truth();
        let a = simulate_dlm(&spec, &truth, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_dlm(&spec, &truth, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn gamma_regression_covariates_in_range_and_dispersion_shrinks() {
        let theta0 = Vector::from_vec(vec![1.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = simulate_gamma_regression(400, 50.0, 0.01, &theta0, &mut rng).unwrap();
        let x = path.data.covariates.as_ref().unwrap();
        assert!(x.iter().all(|r| r[0] > 2.0 && r[0] < 4.0));
        let rel_sd = |phi: f64, rng: &mut ChaCha8Rng| {
            let p = simulate_gamma_regression(4000, phi, 0.0, &theta0, rng).unwrap();
            let xs = p.data.covariates.unwrap();
            let r: Vec<f64> = p
                .data
                .y
                .iter()
                .zip(&xs)
                .map(|(y, x)| y / (theta0[0] + theta0[1] * x[0]).exp() - 1.0)
                .collect();
            (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
        };
        for phi in [4.0, 50.0, 400.0] {
            let s = rel_sd(phi, &mut rng);
            assert!((s * phi.sqrt() - 1.0).abs() < 0.06, "phi {phi}: rel sd {s}");
        }
    }

    #[test]
    fn level_shift_places_jump() {
        let cfg = LevelShift { evolution_sd: 0.0, obs_sd: 0.0, ..LevelShift::default() };
        let path = simulate_level_shift(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(path.data.y[26], 1100.0);
        assert_eq!(path.data.y[27], 850.0);
    }

    #[test]
    fn al_dlm_median_sits_on_the_level() {
        let spec = build_local_level().unwrap();
        let q = QuantileSpec::new(0.9).unwrap();
        let path = simulate_al_dlm(&spec, &Mat::zeros(1, 1), &Vector::from_element(1, 5.0), 2.0, q, 20_000, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let below = path.data.y.iter().filter(|&&v| v <= 5.0).count() as f64 / 20_000.0;
        assert!((below - 0.9).abs() < 0.01);
    }
}
