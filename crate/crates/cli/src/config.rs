//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use dqlm::distributions::DensityMethod;
use dqlm::linalg::{Mat, Vector};
use dqlm::mcmc::McmcConfig;
use dqlm::model::{
    build_local_level, build_local_linear_plus_quarterly, build_regression, build_static_level, build_trend_seasonal,
    EvolutionScale, EvolutionVariance, ModelSpec, PriorSpec, TimeSeriesData, UEvolution, DEFAULT_DISCOUNT, DEFAULT_STUDENT_NU,
};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Mcmc,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    /// Column holding integer times or ISO dates; rows are numbered 1.. when absent.
    pub time_column: Option<String>,
    pub value_column: String,
    /// Regressor column for the `regression` model.
    pub covariate_column: Option<String>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { path: None, time_column: Some("t".into()), value_column: "y".into(), covariate_column: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LocalLevel,
    TrendSeasonal,
    LocalLinearQuarterly,
    Regression,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolutionKind {
    Discount,
    Fixed,
    InverseWishart,
    SharedInverseWishart,
    HalfCauchy,
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Harmonic period of the trend-seasonal model.
    pub period: usize,
    pub evolution: EvolutionKind,
    pub discount: f64,
    /// Fixed `W` (or the Student-t base matrix); a single row is read as a diagonal.
    pub w: Option<Vec<Vec<f64>>>,
    pub iw_dof: f64,
    /// Inverse-Wishart scale is `iw_scale * I`.
    pub iw_scale: f64,
    pub half_cauchy_scale: f64,
    pub nu: f64,
    /// Discount for the log-mixing-weight block; omitted means static.
    pub u_discount: Option<f64>,
    /// Fixed evolution variance of the log-mixing-weight block.
    pub u_variance: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LocalLevel,
            period: 12,
            evolution: EvolutionKind::Discount,
            discount: DEFAULT_DISCOUNT,
            w: None,
            iw_dof: 8.0,
            iw_scale: 0.1,
            half_cauchy_scale: 25.0,
            nu: DEFAULT_STUDENT_NU,
            u_discount: None,
            u_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub m0: Option<Vec<f64>>,
    /// Diagonal of `C_0`.
    pub c0: f64,
    pub n_phi: f64,
    pub s_phi: f64,
    pub n0: f64,
    pub d0: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let v = PriorSpec::vague(1);
        Self { m0: None, c0: v.c0[(0, 0)], n_phi: v.n_phi, s_phi: v.s_phi, n0: v.n0, d0: v.d0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self { sweeps: d.sweeps, burn_in: d.burn_in, thin: d.thin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityChoice {
    Cf,
    Convolution,
}

impl From<DensityChoice> for DensityMethod {
    fn from(d: DensityChoice) -> Self {
        match d {
            DensityChoice::Cf => DensityMethod::CfInversion,
            DensityChoice::Convolution => DensityMethod::Convolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequentialSection {
    pub density: DensityChoice,
    /// Starting value of `φ^{-1/2}` for the scale search.
    pub init_scale: f64,
}

impl Default for SequentialSection {
    fn default() -> Self {
        Self { density: DensityChoice::Cf, init_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    /// Also report sums over consecutive windows of this many steps.
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: Engine,
    pub quantiles: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fit on `log y` and exponentiate the reported quantiles.
    pub log: bool,
    pub level: f64,
    pub input: InputConfig,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub mcmc: McmcSection,
    pub sequential: SequentialSection,
    pub forecast: ForecastSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            engine: Engine::Sequential,
            quantiles: vec![0.5],
            seed: 1,
            output_dir: PathBuf::from("dqlm-out"),
            log: false,
            level: 0.95,
            input: InputConfig::default(),
            model: ModelConfig::default(),
            prior: PriorConfig::default(),
            mcmc: McmcSection::default(),
            sequential: SequentialSection::default(),
            forecast: ForecastSection::default(),
        }
    }
}

/// Flag values that replace config entries when given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub engine: Option<Engine>,
    pub quantiles: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub log: bool,
    pub horizon: Option<usize>,
    pub window: Option<usize>,
    pub sweeps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(p) = &o.input {
            self.input.path = Some(p.clone());
        }
        if let Some(e) = o.engine {
            self.engine = e;
        }
        if let Some(q) = &o.quantiles {
            self.quantiles = q.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        self.log |= o.log;
        if let Some(h) = o.horizon {
            self.forecast.horizon = h;
        }
        if o.window.is_some() {
            self.forecast.window = o.window;
        }
        if let Some(v) = o.sweeps {
            self.mcmc.sweeps = v;
        }
        if let Some(v) = o.burn_in {
            self.mcmc.burn_in = v;
        }
        if let Some(v) = o.thin {
            self.mcmc.thin = v;
        }
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.quantiles.is_empty() {
            return config_err("quantile grid is empty");
        }
        if self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return config_err("quantiles must lie in (0, 1)");
        }
        if self.quantiles.windows(2).any(|w| w[1] <= w[0]) {
            return config_err("quantile grid must be strictly increasing");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return config_err("credible level must lie in (0, 1)");
        }
        if self.forecast.window == Some(0) {
            return config_err("forecast window must be at least 1");
        }
        self.mcmc_config(0).validate()?;
        if !(self.sequential.init_scale > 0.0) {
            return config_err("sequential.init_scale must be positive");
        }
        if self.model.kind == ModelKind::Regression && self.input.covariate_column.is_none() {
            return config_err("the regression model needs input.covariate_column");
        }
        Ok(())
    }

    pub fn mcmc_config(&self, offset: u64) -> McmcConfig {
        McmcConfig { sweeps: self.mcmc.sweeps, burn_in: self.mcmc.burn_in, thin: self.mcmc.thin, seed: self.seed.wrapping_add(offset) }
    }

    pub fn build_spec(&self, data: &TimeSeriesData) -> CliResult<ModelSpec> {
        let m = &self.model;
        let base = match m.kind {
            ModelKind::LocalLevel => build_local_level()?,
            ModelKind::TrendSeasonal => build_trend_seasonal(m.period)?,
            ModelKind::LocalLinearQuarterly => build_local_linear_plus_quarterly()?,
            ModelKind::Static => build_static_level()?,
            ModelKind::Regression => {
                let x = data.covariates.as_ref().ok_or_else(|| CliError::Config("regression model needs a covariate column".into()))?;
                build_regression(&x.iter().map(|r| r[0]).collect::<Vec<_>>())?
            }
        };
        let p = base.state_dim();
        let fixed_w = || -> CliResult<Mat> {
            match &m.w {
                None => config_err("model.w is required for this evolution policy"),
                Some(rows) if rows.len() == 1 && rows[0].len() == p => Ok(Mat::from_diagonal(&Vector::from_vec(rows[0].clone()))),
                Some(rows) if rows.len() == p && rows.iter().all(|r| r.len() == p) => Ok(Mat::from_fn(p, p, |i, j| rows[i][j])),
                Some(_) => config_err(format!("model.w must be {p}x{p} or a single row of {p} diagonal entries")),
            }
        };
        let ev = match m.evolution {
            EvolutionKind::Discount => EvolutionVariance::Discount(m.discount),
            EvolutionKind::Fixed => EvolutionVariance::Fixed(fixed_w()?),
            EvolutionKind::InverseWishart => EvolutionVariance::InverseWishart { dof: m.iw_dof, scale: Mat::identity(p, p) * m.iw_scale },
            EvolutionKind::SharedInverseWishart => {
                EvolutionVariance::SharedInverseWishart { dof: m.iw_dof, scale: Mat::identity(p, p) * m.iw_scale }
            }
            EvolutionKind::HalfCauchy => EvolutionVariance::HalfCauchy { scale: m.half_cauchy_scale },
            EvolutionKind::StudentT => EvolutionVariance::StudentT {
                nu: m.nu,
                scale: match m.w {
                    Some(_) => EvolutionScale::Fixed(fixed_w()?),
                    None => EvolutionScale::HalfCauchy { scale: m.half_cauchy_scale },
                },
            },
        };
        let u = match (m.u_discount, m.u_variance) {
            (Some(_), Some(_)) => return config_err("set at most one of model.u_discount and model.u_variance"),
            (Some(d), None) => UEvolution::Discount(d),
            (None, Some(v)) => UEvolution::Fixed(v),
            (None, None) => UEvolution::Zero,
        };
        Ok(base.with_evolution_variance(ev)?.with_u_evolution(u)?.with_quantiles(&self.quantiles)?)
    }

    pub fn build_prior(&self, p: usize) -> CliResult<PriorSpec> {
        let mut prior = PriorSpec::vague(p);
        if let Some(m0) = &self.prior.m0 {
            if m0.len() != p {
                return config_err(format!("prior.m0 needs {p} entries"));
            }
            prior.m0 = Vector::from_vec(m0.clone());
        }
        prior.c0 = Mat::identity(p, p) * self.prior.c0;
        prior.n_phi = self.prior.n_phi;
        prior.s_phi = self.prior.s_phi;
        prior.n0 = self.prior.n0;
        prior.d0 = self.prior.d0;
        prior.validate(p)?;
        Ok(prior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::from_toml("engine = \"mcmc\"\nquantiles = [0.1, 0.9]\n[mcmc]\nsweeps = 300\nburn_in = 100\n").unwrap();
        let o = Overrides { engine: Some(Engine::Sequential), sweeps: Some(50), log: true, ..Default::default() };
        let c = c.apply(&o);
        assert_eq!(c.engine, Engine::Sequential);
        assert_eq!(c.mcmc.sweeps, 50);
        assert_eq!(c.quantiles, vec![0.1, 0.9]);
        assert!(c.log);
    }

    #[test]
    fn grid_rules() {
        let mut c = RunConfig { quantiles: vec![0.5, 0.1], ..Default::default() };
        assert!(c.validate().is_err());
        c.quantiles = vec![0.0, 0.5];
        assert!(c.validate().is_err());
        c.quantiles = vec![0.1, 0.5];
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("engin = \"mcmc\"").is_err());
    }

    #[test]
    fn fixed_w_as_diagonal_row() {
        let c = RunConfig::from_toml("[model]\nkind = \"trend-seasonal\"\nevolution = \"fixed\"\nw = [[0.02, 0.01, 1.0, 1.0]]\n").unwrap();
        let data = TimeSeriesData::from_values(vec![1.0, 2.0]).unwrap();
        let spec = c.build_spec(&data).unwrap();
        let EvolutionVariance::Fixed(w) = spec.evolution_variance else { panic!() };
        assert_eq!(w[(2, 2)], 1.0);
        assert_eq!(w[(0, 1)], 0.0);
    }
}
