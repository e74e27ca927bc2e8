//! Model specification: design and evolution matrices, the evolution
//! variance policy, priors and the observed series.

use std::f64::consts::PI;

use crate::distributions::QuantileSpec;
use crate::error::{domain, DqlmError, Result};
use crate::linalg::{block_diag, is_spd, Mat, Vector};

/// Regression vector `F_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Constant(Vector),
    /// One vector per observation time `t = 1..T`; later times reuse the last.
    PerTime(Vec<Vector>),
}

impl Design {
    /// `F_t` for the 1-based time index `t`.
    pub fn at(&self, t: usize) -> &Vector {
        match self {
            Design::Constant(f) => f,
            Design::PerTime(fs) => &fs[t.saturating_sub(1).min(fs.len() - 1)],
        }
    }
}

/// Evolution matrix `G_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Evolution {
    Constant(Mat),
    PerTime(Vec<Mat>),
}

impl Evolution {
    pub fn at(&self, t: usize) -> &Mat {
        match self {
            Evolution::Constant(g) => g,
            Evolution::PerTime(gs) => &gs[t.saturating_sub(1).min(gs.len() - 1)],
        }
    }
}

/// Scale of `W` in the Student-t evolution variant.
#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionScale {
    Fixed(Mat),
    /// `W = s² I` with a half-Cauchy prior of the given scale on `s`.
    HalfCauchy { scale: f64 },
}

/// How the state evolution variance `W_t` is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionVariance {
    /// Known `W` (absolute units).
    Fixed(Mat),
    /// `W_t ~ IWishart(n_w, S_w)` independently for each `t`.
    InverseWishart { dof: f64, scale: Mat },
    /// One `W` for all `t` with `W ~ IWishart(n_w, S_w)`.
    SharedInverseWishart { dof: f64, scale: Mat },
    /// `R_t = G_t C_{t-1} G_t' / δ`.
    Discount(f64),
    /// `W = s² I` with `s ~ half-Cauchy(0, scale)`.
    HalfCauchy { scale: f64 },
    /// `θ_t ~ N(G_t θ_{t-1}, W/λ_t)` with `λ_t ~ Ga(ν/2, ν/2)`.
    StudentT { nu: f64, scale: EvolutionScale },
}

/// Evolution of the log mixing weight `u_t` in the sequential engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UEvolution {
    /// `u_t = u_{t-1}`.
    Zero,
    /// `R_{u,t} = C_{u,t-1} / δ`.
    Discount(f64),
    /// Random-walk variance per step, in absolute units.
    Fixed(f64),
}

pub const DEFAULT_DISCOUNT: f64 = 0.95;
pub const DEFAULT_STUDENT_NU: f64 = 2.5;

/// A named additive piece of the linear predictor, `Σ_{i ∈ idx} F_{t,i} θ_{t,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    state_dim: usize,
    pub design: Design,
    pub evolution: Evolution,
    pub evolution_variance: EvolutionVariance,
    pub u_evolution: UEvolution,
    pub quantiles: Vec<QuantileSpec>,
    pub components: Vec<Component>,
}

impl ModelSpec {
    pub fn new(design: Design, evolution: Evolution, evolution_variance: EvolutionVariance) -> Result<Self> {
        let state_dim = match &design {
            Design::Constant(f) => f.len(),
            Design::PerTime(fs) => fs.first().map(|f| f.len()).unwrap_or(0),
        };
        let spec = Self {
            state_dim,
            design,
            evolution,
            evolution_variance,
            u_evolution: UEvolution::Zero,
            quantiles: vec![QuantileSpec::median()],
            components: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn with_evolution_variance(mut self, v: EvolutionVariance) -> Result<Self> {
        self.evolution_variance = v;
        self.validate()?;
        Ok(self)
    }

    pub fn with_u_evolution(mut self, u: UEvolution) -> Result<Self> {
        self.u_evolution = u;
        self.validate()?;
        Ok(self)
    }

    pub fn with_quantiles(mut self, taus: &[f64]) -> Result<Self> {
        self.quantiles = taus.iter().map(|&t| QuantileSpec::new(t)).collect::<Result<_>>()?;
        Ok(self)
    }

    pub fn with_components(mut self, components: Vec<Component>) -> Result<Self> {
        self.components = components;
        self.validate()?;
        Ok(self)
    }

    pub fn f(&self, t: usize) -> &Vector {
        self.design.at(t)
    }

    pub fn g(&self, t: usize) -> &Mat {
        self.evolution.at(t)
    }

    /// Linear predictor `F_t' θ`.
    pub fn linear_predictor(&self, t: usize, theta: &Vector) -> f64 {
        self.f(t).dot(theta)
    }

    pub fn component_value(&self, component: &Component, t: usize, theta: &Vector) -> f64 {
        let f = self.f(t);
        component.indices.iter().map(|&i| f[i] * theta[i]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.state_dim;
        if p == 0 {
            return Err(DqlmError::Dimension("state dimension must be at least 1".into()));
        }
        match &self.design {
            Design::Constant(f) => check_finite_vec(f, "F")?,
            Design::PerTime(fs) => {
                if fs.is_empty() {
                    return Err(DqlmError::Dimension("time-varying design is empty".into()));
                }
                for f in fs {
                    if f.len() != p {
                        return Err(DqlmError::Dimension("design vectors differ in length".into()));
                    }
                    check_finite_vec(f, "F")?;
                }
            }
        }
        let gs: Vec<&Mat> = match &self.evolution {
            Evolution::Constant(g) => vec![g],
            Evolution::PerTime(gs) => {
                if gs.is_empty() {
                    return Err(DqlmError::Dimension("time-varying evolution is empty".into()));
                }
                gs.iter().collect()
            }
        };
        for g in gs {
            if g.shape() != (p, p) {
                return Err(DqlmError::Dimension(format!("G must be {p}x{p}, got {:?}", g.shape())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return domain("G has non-finite entries");
            }
        }
        match &self.evolution_variance {
            EvolutionVariance::Fixed(w) => check_psd(w, p, "W")?,
            EvolutionVariance::InverseWishart { dof, scale } | EvolutionVariance::SharedInverseWishart { dof, scale } => {
                if !(*dof > 0.0) {
                    return domain("inverse-Wishart degrees of freedom must be positive");
                }
                if scale.shape() != (p, p) || !is_spd(scale) {
                    return domain("inverse-Wishart scale must be a p x p SPD matrix");
                }
            }
            EvolutionVariance::Discount(d) => check_discount(*d)?,
            EvolutionVariance::HalfCauchy { scale } => {
                if !(*scale > 0.0) {
                    return domain("half-Cauchy scale must be positive");
                }
            }
            EvolutionVariance::StudentT { nu, scale } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return domain(format!("Student-t degrees of freedom must be positive, got {nu}"));
                }
                match scale {
                    EvolutionScale::Fixed(w) => check_psd(w, p, "W")?,
                    EvolutionScale::HalfCauchy { scale } => {
                        if !(*scale > 0.0) {
                            return domain("half-Cauchy scale must be positive");
                        }
                    }
                }
            }
        }
        match self.u_evolution {
            UEvolution::Zero => {}
            UEvolution::Discount(d) => check_discount(d)?,
            UEvolution::Fixed(w) => {
                if !(w >= 0.0 && w.is_finite()) {
                    return domain("u-block evolution variance must be non-negative");
                }
            }
        }
        for c in &self.components {
            if c.indices.iter().any(|&i| i >= p) {
                return Err(DqlmError::Dimension(format!("component `{}` indexes past the state", c.name)));
            }
        }
        Ok(())
    }
}

fn check_discount(d: f64) -> Result<()> {
    if !(d > 0.0 && d < 1.0) {
        return domain(format!("discount factor must lie in (0, 1), got {d}"));
    }
    Ok(())
}

fn check_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return domain(format!("{what} has non-finite entries"));
    }
    Ok(())
}

fn check_psd(w: &Mat, p: usize, what: &str) -> Result<()> {
    if w.shape() != (p, p) {
        return Err(DqlmError::Dimension(format!("{what} must be {p}x{p}")));
    }
    if w.iter().any(|x| !x.is_finite()) || (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
        return domain(format!("{what} must be finite and symmetric"));
    }
    if w.amax() == 0.0 {
        return Ok(());
    }
    let min_eig = w.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * w.amax() {
        return domain(format!("{what} must be positive semi-definite"));
    }
    Ok(())
}

/// Priors for both engines.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub m0: Vector,
    pub c0: Mat,
    /// `φ^{-1/2} ~ IGa(n_φ/2, s_φ/2)` (Gibbs engine).
    pub n_phi: f64,
    pub s_phi: f64,
    /// `φ^{-1} ~ Ga(n_0/2, d_0/2)` (sequential engine).
    pub n0: f64,
    pub d0: f64,
    /// Prior mean of `u_0 = log U_0`.
    pub m_u0: f64,
    /// Prior variance of `u_0`, absolute units.
    pub c_u0: f64,
    /// Prior state–u covariance `Λ_0`, in `φ^{-1}` units.
    pub lambda0: Vector,
}

impl PriorSpec {
    /// Vague defaults: `m_0 = 0`, `C_0 = 10^5 I`, `n_φ = s_φ = n_0 = d_0 = 0.001`,
    /// `u_0 ~ N(0, 1)`, `Λ_0 = 0`.
    pub fn vague(p: usize) -> Self {
        Self {
            m0: Vector::zeros(p),
            c0: Mat::identity(p, p) * 1e5,
            n_phi: 0.001,
            s_phi: 0.001,
            n0: 0.001,
            d0: 0.001,
            m_u0: 0.0,
            c_u0: 1.0,
            lambda0: Vector::zeros(p),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.m0.len() != p || self.c0.shape() != (p, p) || self.lambda0.len() != p {
            return Err(DqlmError::Dimension(format!("prior dimensions do not match state dimension {p}")));
        }
        if !is_spd(&self.c0) {
            return domain("C0 must be symmetric positive definite");
        }
        for (name, v) in [("n_phi", self.n_phi), ("s_phi", self.s_phi), ("n0", self.n0), ("d0", self.d0), ("c_u0", self.c_u0)] {
            if !(v > 0.0 && v.is_finite()) {
                return domain(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.m_u0.is_finite() || self.m0.iter().any(|v| !v.is_finite()) || self.lambda0.iter().any(|v| !v.is_finite()) {
            return domain("prior means must be finite");
        }
        Ok(())
    }
}

/// Observed series `y_1..y_T` with optional covariates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeSeriesData {
    pub times: Vec<i64>,
    pub y: Vec<f64>,
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl TimeSeriesData {
    pub fn new(times: Vec<i64>, y: Vec<f64>) -> Result<Self> {
        let d = Self { times, y, covariates: None };
        d.validate()?;
        Ok(d)
    }

    /// Series indexed `1..=T`.
    pub fn from_values(y: Vec<f64>) -> Result<Self> {
        let times = (1..=y.len() as i64).collect();
        Self::new(times, y)
    }

    pub fn with_covariates(mut self, x: Vec<Vec<f64>>) -> Result<Self> {
        self.covariates = Some(x);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.y.len() {
            return Err(DqlmError::Dimension("times and observations differ in length".into()));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return domain(format!("times must be strictly increasing (positions {} and {})", i + 1, i + 2));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return domain(format!("observation {} is not finite", i + 1));
        }
        if let Some(x) = &self.covariates {
            if x.len() != self.y.len() {
                return Err(DqlmError::Dimension("covariate rows differ from observation count".into()));
            }
        }
        Ok(())
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.clone();
        out.y = self.y.iter().map(|&v| f(v)).collect();
        out.validate()?;
        Ok(out)
    }
}

/// `L_2 = [[1, 1], [0, 1]]`.
pub fn linear_growth_block() -> Mat {
    Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])
}

/// Rotation block `J_2(ω) = [[cos ω, sin ω], [-sin ω, cos ω]]`.
pub fn harmonic_block(omega: f64) -> Mat {
    let (s, c) = omega.sin_cos();
    Mat::from_row_slice(2, 2, &[c, s, -s, c])
}

/// Second-order polynomial trend plus one harmonic of the given period:
/// `F = (1, 0, 1, 0)'`, `G = blockdiag(L_2, J_2(2π/period))`.
pub fn build_trend_seasonal(harmonic_period: usize) -> Result<ModelSpec> {
    if harmonic_period < 2 {
        return domain(format!("harmonic period must be at least 2, got {harmonic_period}"));
    }
    let omega = 2.0 * PI / harmonic_period as f64;
    let g = block_diag(&linear_growth_block(), &harmonic_block(omega));
    ModelSpec::new(
        Design::Constant(Vector::from_vec(vec![1.0, 0.0, 1.0, 0.0])),
        Evolution::Constant(g),
        EvolutionVariance::Discount(DEFAULT_DISCOUNT),
    )?
    .with_components(vec![
        Component { name: "level".into(), indices: vec![0] },
        Component { name: "seasonal".into(), indices: vec![2, 3] },
    ])
}

/// First-order polynomial model, `F = G = 1`.
pub fn build_local_level() -> Result<ModelSpec> {
    ModelSpec::new(
        Design::Constant(Vector::from_element(1, 1.0)),
        Evolution::Constant(Mat::identity(1, 1)),
        EvolutionVariance::Discount(DEFAULT_DISCOUNT),
    )?
    .with_components(vec![Component { name: "level".into(), indices: vec![0] }])
}

/// Local linear trend plus a quarterly seasonal in effects form:
/// `F = (1, 0, 1, 0, 0)'` and the 5×5 `G` whose seasonal rows are
/// `(-1, -1, -1)`, `(1, 0, 0)`, `(0, 1, 0)`.
pub fn build_local_linear_plus_quarterly() -> Result<ModelSpec> {
    #[rustfmt::skip]
    let g = Mat::from_row_slice(5, 5, &[
        1.0, 1.0,  0.0,  0.0,  0.0,
        0.0, 1.0,  0.0,  0.0,  0.0,
        0.0, 0.0, -1.0, -1.0, -1.0,
        0.0, 0.0,  1.0,  0.0,  0.0,
        0.0, 0.0,  0.0,  1.0,  0.0,
    ]);
    ModelSpec::new(
        Design::Constant(Vector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0])),
        Evolution::Constant(g),
        EvolutionVariance::Discount(DEFAULT_DISCOUNT),
    )?
    .with_components(vec![
        Component { name: "level".into(), indices: vec![0] },
        Component { name: "seasonal".into(), indices: vec![2, 3, 4] },
    ])
}

/// Dynamic regression `F_t = (1, x_t)'`, `G = I`.
pub fn build_regression(x: &[f64]) -> Result<ModelSpec> {
    if x.is_empty() {
        return domain("regression needs at least one covariate value");
    }
    let fs = x.iter().map(|&xi| Vector::from_vec(vec![1.0, xi])).collect();
    ModelSpec::new(
        Design::PerTime(fs),
        Evolution::Constant(Mat::identity(2, 2)),
        EvolutionVariance::Discount(DEFAULT_DISCOUNT),
    )?
    .with_components(vec![
        Component { name: "intercept".into(), indices: vec![0] },
        Component { name: "slope".into(), indices: vec![1] },
    ])
}

/// Static level, `F = G = 1`, `W = 0`.
pub fn build_static_level() -> Result<ModelSpec> {
    ModelSpec::new(
        Design::Constant(Vector::from_element(1, 1.0)),
        Evolution::Constant(Mat::identity(1, 1)),
        EvolutionVariance::Fixed(Mat::zeros(1, 1)),
    )?
    .with_components(vec![Component { name: "level".into(), indices: vec![0] }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_seasonal_matrices() {
        let m = build_trend_seasonal(12).unwrap();
        let g = m.g(1);
        let w = 2.0 * PI / 12.0;
        #[rustfmt::skip]
        let expect = Mat::from_row_slice(4, 4, &[
            1.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, w.cos(), w.sin(),
            0.0, 0.0, -w.sin(), w.cos(),
        ]);
        assert_eq!(g, &expect);
        assert_eq!(m.f(1).as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        let rot = g.view((2, 2), (2, 2)).into_owned();
        assert!((rot.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_returns_after_full_period() {
        let m = build_trend_seasonal(12).unwrap();
        let j = m.g(1).view((2, 2), (2, 2)).into_owned();
        let x = Vector::from_vec(vec![0.3, -1.7]);
        let mut y = x.clone();
        for _ in 0..12 {
            y = &j * y;
        }
        assert!((y - x).norm() < 1e-12);
    }

    #[test]
    fn linear_predictor_reads_level_plus_first_harmonic() {
        let m = build_trend_seasonal(12).unwrap();
        let theta = Vector::from_vec(vec![10.0, 0.5, 2.0, -3.0]);
        assert_eq!(m.linear_predictor(1, &theta), 12.0);
    }

    #[test]
    fn local_level_is_scalar_identity() {
        let m = build_local_level().unwrap();
        assert_eq!(m.state_dim(), 1);
        assert_eq!(m.f(1)[0], 1.0);
        assert_eq!(m.g(1)[(0, 0)], 1.0);
    }

    #[test]
    fn quarterly_block_matches_display_and_has_period_four() {
        let m = build_local_linear_plus_quarterly().unwrap();
        let g = m.g(1);
        assert_eq!(g.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, -1.0, -1.0, -1.0]);
        assert_eq!(g.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.row(4).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let s = g.view((2, 2), (3, 3)).into_owned();
        let x = Vector::from_vec(vec![1.5, -0.5, -2.0]);
        let mut y = x.clone();
        for _ in 0..4 {
            y = &s * y;
        }
        assert!((y - &x).norm() < 1e-14);
        // Four consecutive seasonal effects sum to zero once the sub-state
        // has been propagated once.
        let e1 = &s * &x;
        let e2 = &s * &e1;
        let e3 = &s * &e2;
        let e4 = &s * &e3;
        assert!((e1[0] + e2[0] + e3[0] + e4[0]).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_fail_at_construction() {
        assert!(build_trend_seasonal(1).is_err());
        let m = build_local_level().unwrap();
        assert!(m.clone().with_evolution_variance(EvolutionVariance::Discount(1.0)).is_err());
        assert!(m
            .clone()
            .with_evolution_variance(EvolutionVariance::StudentT {
                nu: 0.0,
                scale: EvolutionScale::HalfCauchy { scale: 25.0 }
            })
            .is_err());
        assert!(m.with_evolution_variance(EvolutionVariance::Fixed(Mat::from_element(1, 1, -1.0))).is_err());
        let mut prior = PriorSpec::vague(2);
        prior.c0[(0, 0)] = -1.0;
        assert!(prior.validate(2).is_err());
    }

    #[test]
    fn series_invariants() {
        assert!(TimeSeriesData::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0]).is_err());
        assert!(TimeSeriesData::new(vec![1, 2, 3], vec![0.0, f64::NAN, 2.0]).is_err());
        assert_eq!(TimeSeriesData::from_values(vec![1.0, 2.0]).unwrap().times, vec![1, 2]);
    }
}
