//! `fit` and `forecast`.

use std::path::Path;
use std::time::Instant;

use dqlm::distributions::QuantileSpec;
use dqlm::forecast::{forecast_seq, forecast_terminal, window_sums, ForecastResult, TerminalDraws};
use dqlm::mcmc::{run_gibbs, McmcDraws};
use dqlm::model::{ModelSpec, PriorSpec, TimeSeriesData};
use dqlm::quadrature::QuadConfig;
use dqlm::seqfilter::{fit_map_phi, run_filter, AugmentedState, FilterOptions, FilterRun, MapConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{Engine, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::ingest_csv;
use crate::output::{
    ensure_dir, tau_label, write_rows, ComponentRow, FitInfo, FitRow, ForecastRow, IqrRow, LogPredictiveRow, Manifest, WindowRow,
};

pub const STATE_FILE: &str = "fit_state.json";

/// What `forecast` needs from a finished fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedFit {
    pub config: RunConfig,
    /// The series the model was fitted to (log scale when `config.log`).
    pub data: TimeSeriesData,
    pub quantiles: Vec<SavedQuantile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "kebab-case")]
pub enum SavedQuantile {
    Sequential { tau: f64, phi: f64, state: AugmentedState },
    Mcmc { draws: TerminalDraws },
}

/// `(mean, lower, upper)` per time point.
pub type Band = Vec<(f64, f64, f64)>;

/// One fitted quantile, on the fitting scale.
pub struct QuantileFit {
    pub tau: f64,
    /// Band of `F_t'θ_t`.
    pub linear_predictor: Band,
    pub components: Vec<(String, Band)>,
    pub log_predictive: Option<Vec<f64>>,
    pub info: FitInfo,
    pub saved: SavedQuantile,
    pub mcmc: Option<McmcDraws>,
    pub filter: Option<FilterRun>,
}

fn z_value(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + 0.5 * level)
}

pub fn fit_quantile(cfg: &RunConfig, spec: &ModelSpec, prior: &PriorSpec, data: &TimeSeriesData, idx: usize) -> CliResult<QuantileFit> {
    let started = Instant::now();
    let q: QuantileSpec = spec.quantiles[idx];
    let tau = q.tau();
    match cfg.engine {
        Engine::Sequential => {
            let options = FilterOptions { method: cfg.sequential.density.into(), ..Default::default() };
            let map = MapConfig { filter: options, ..Default::default() };
            let est = fit_map_phi(data, spec, prior, q, cfg.sequential.init_scale.powi(2), &map)?;
            let run = run_filter(data, spec, prior, q, est.phi(), options)?;
            let z = z_value(cfg.level);
            let phi = est.phi();
            let bounds = |m: f64, v: f64| {
                let sd = (v.max(0.0) / phi).sqrt();
                (m, m - z * sd, m + z * sd)
            };
            let linear_predictor = run.steps.iter().map(|s| {
                let (m, v) = s.linear_predictor(spec);
                bounds(m, v)
            });
            let components = spec
                .components
                .iter()
                .map(|c| {
                    let rows = run
                        .steps
                        .iter()
                        .map(|s| {
                            let f = spec.f(s.t);
                            let m = s.posterior.theta_mean();
                            let cov = s.posterior.theta_cov();
                            let mean: f64 = c.indices.iter().map(|&i| f[i] * m[i]).sum();
                            let mut var = 0.0;
                            for &i in &c.indices {
                                for &j in &c.indices {
                                    var += f[i] * f[j] * cov[(i, j)];
                                }
                            }
                            bounds(mean, var)
                        })
                        .collect();
                    (c.name.clone(), rows)
                })
                .collect();
            let state = run.final_state().cloned().ok_or_else(|| CliError::Input("empty series".into()))?;
            Ok(QuantileFit {
                tau,
                linear_predictor: linear_predictor.collect(),
                components,
                log_predictive: Some(run.steps.iter().map(|s| s.log_predictive).collect()),
                info: FitInfo {
                    tau,
                    scale: est.scale(),
                    converged: Some(est.converged),
                    log_likelihood: Some(run.log_likelihood),
                    clamp_count: Some(run.clamp_count),
                    scale_acceptance: None,
                    seconds: started.elapsed().as_secs_f64(),
                },
                saved: SavedQuantile::Sequential { tau, phi, state },
                mcmc: None,
                filter: Some(run),
            })
        }
        Engine::Mcmc => {
            let draws = run_gibbs(data, spec, prior, q, &cfg.mcmc_config(idx as u64))?;
            let lp = draws.linear_predictor_summary(cfg.level).iter().map(|s| (s.mean, s.lower, s.upper)).collect();
            let components = spec
                .components
                .iter()
                .map(|c| (c.name.clone(), draws.component_summary(spec, c, cfg.level).iter().map(|s| (s.mean, s.lower, s.upper)).collect()))
                .collect();
            Ok(QuantileFit {
                tau,
                linear_predictor: lp,
                components,
                log_predictive: None,
                info: FitInfo {
                    tau,
                    scale: draws.sigma_summary(cfg.level).mean,
                    converged: None,
                    log_likelihood: None,
                    clamp_count: None,
                    scale_acceptance: draws.scale_acceptance,
                    seconds: started.elapsed().as_secs_f64(),
                },
                saved: SavedQuantile::Mcmc { draws: TerminalDraws::from_draws(&draws) },
                mcmc: Some(draws),
                filter: None,
            })
        }
    }
}

/// Fits every quantile of the grid, one thread each.
pub fn fit_grid(cfg: &RunConfig, spec: &ModelSpec, prior: &PriorSpec, data: &TimeSeriesData) -> CliResult<Vec<QuantileFit>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..spec.quantiles.len()).map(|i| s.spawn(move || fit_quantile(cfg, spec, prior, data, i))).collect();
        handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect()
    })
}

/// Reads the configured input and applies the log transform when asked.
pub fn load_data(cfg: &RunConfig) -> CliResult<(TimeSeriesData, TimeSeriesData)> {
    let path = cfg.input.path.as_ref().ok_or_else(|| CliError::Config("no input file (set input.path or pass --input)".into()))?;
    let raw = ingest_csv(path, &cfg.input)?;
    let fitted = if cfg.log {
        if let Some(i) = raw.y.iter().position(|&v| v <= 0.0) {
            return Err(CliError::Input(format!("--log needs positive data; observation {} is {}", i + 1, raw.y[i])));
        }
        raw.map_values(f64::ln)?
    } else {
        raw.clone()
    };
    Ok((raw, fitted))
}

fn back(log: bool, v: f64) -> f64 {
    if log {
        v.exp()
    } else {
        v
    }
}

/// Writes the per-quantile tables of a finished grid into `dir`.
pub fn write_fit_tables(cfg: &RunConfig, raw: &TimeSeriesData, fits: &[QuantileFit], dir: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let log = cfg.log;
    for fit in fits {
        let label = tau_label(fit.tau);
        let rows: Vec<FitRow> = fit
            .linear_predictor
            .iter()
            .enumerate()
            .map(|(i, &(m, lo, hi))| FitRow { t: raw.times[i], y: raw.y[i], mean: back(log, m), lower: back(log, lo), upper: back(log, hi) })
            .collect();
        let path = dir.join(format!("fit_{label}.csv"));
        write_rows(&path, &rows)?;
        manifest.add_file(dir, &path);

        if !fit.components.is_empty() {
            let mut rows = Vec::new();
            for (name, vals) in &fit.components {
                for (i, &(m, lo, hi)) in vals.iter().enumerate() {
                    rows.push(ComponentRow { t: raw.times[i], component: name.clone(), mean: m, lower: lo, upper: hi });
                }
            }
            let path = dir.join(format!("components_{label}.csv"));
            write_rows(&path, &rows)?;
            manifest.add_file(dir, &path);
        }
        if let Some(lp) = &fit.log_predictive {
            let rows: Vec<LogPredictiveRow> = lp.iter().enumerate().map(|(i, &v)| LogPredictiveRow { t: raw.times[i], log_predictive: v }).collect();
            let path = dir.join(format!("logpred_{label}.csv"));
            write_rows(&path, &rows)?;
            manifest.add_file(dir, &path);
        }
        manifest.fits.push(fit.info.clone());
    }
    if log {
        manifest.notes.push("fitted on log(y); quantile columns are exponentiated, component tables stay on the log scale".into());
    }
    if fits.len() >= 2 {
        // 10%-90% when both are on the grid, else the outermost pair.
        let pick = |t: f64| fits.iter().position(|f| (f.tau - t).abs() < 1e-12);
        let (lo_i, hi_i) = match (pick(0.1), pick(0.9)) {
            (Some(a), Some(b)) => (a, b),
            _ => (0, fits.len() - 1),
        };
        let (lo, hi) = (&fits[lo_i], &fits[hi_i]);
        let rows: Vec<IqrRow> = (0..raw.len())
            .map(|i| {
                let (a, b) = (back(log, lo.linear_predictor[i].0), back(log, hi.linear_predictor[i].0));
                IqrRow { t: raw.times[i], lower_tau: lo.tau, upper_tau: hi.tau, lower: a, upper: b, iqr: b - a }
            })
            .collect();
        let path = dir.join("iqr.csv");
        write_rows(&path, &rows)?;
        manifest.add_file(dir, &path);
    }
    Ok(())
}

pub fn run_fit(cfg: &RunConfig) -> CliResult<Manifest> {
    let started = Instant::now();
    cfg.validate()?;
    let (raw, data) = load_data(cfg)?;
    let spec = cfg.build_spec(&data)?;
    let prior = cfg.build_prior(spec.state_dim())?;
    let fits = fit_grid(cfg, &spec, &prior, &data)?;
    let dir = ensure_dir(&cfg.output_dir)?;
    let mut manifest = Manifest::new("fit", Some(cfg.clone()), cfg.seed);
    write_fit_tables(cfg, &raw, &fits, &dir, &mut manifest)?;
    let saved = SavedFit { config: cfg.clone(), data, quantiles: fits.into_iter().map(|f| f.saved).collect() };
    let path = dir.join(STATE_FILE);
    std::fs::write(&path, serde_json::to_string(&saved)?)?;
    manifest.add_file(&dir, &path);
    if cfg.forecast.horizon > 0 {
        write_forecasts(&saved, cfg.forecast.horizon, cfg.forecast.window, &dir, &mut manifest)?;
    }
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Time label `h` steps past the end, using the last spacing.
fn future_time(times: &[i64], h: usize) -> i64 {
    let n = times.len();
    let step = if n >= 2 { times[n - 1] - times[n - 2] } else { 1 };
    times[n - 1] + step * h as i64
}

pub fn forecast_saved(saved: &SavedFit, k: usize) -> CliResult<Vec<ForecastResult>> {
    let cfg = &saved.config;
    let spec = cfg.build_spec(&saved.data)?;
    let t_end = saved.data.len();
    let quad = QuadConfig::default();
    saved
        .quantiles
        .iter()
        .enumerate()
        .map(|(i, sq)| {
            Ok(match sq {
                SavedQuantile::Sequential { tau, phi, state } => forecast_seq(state, &spec, QuantileSpec::new(*tau)?, *phi, k, t_end, cfg.level, &quad)?,
                SavedQuantile::Mcmc { draws } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 + i as u64));
                    forecast_terminal(draws, &spec, k, cfg.level, &mut rng)?
                }
            })
        })
        .collect()
}

pub fn write_forecasts(saved: &SavedFit, k: usize, window: Option<usize>, dir: &Path, manifest: &mut Manifest) -> CliResult<()> {
    if k == 0 {
        return Err(CliError::Config("forecast horizon must be at least 1".into()));
    }
    let log = saved.config.log;
    let results = forecast_saved(saved, k)?;
    let times = &saved.data.times;
    let mut rows = Vec::new();
    for r in &results {
        for s in &r.steps {
            let y_mean = match (&r.observation_draws, log) {
                (_, false) => s.observation.mean,
                (Some(d), true) => d.iter().map(|v| v[s.horizon - 1].exp()).sum::<f64>() / d.len() as f64,
                (None, true) => f64::NAN,
            };
            rows.push(ForecastRow {
                tau: r.quantile.tau(),
                horizon: s.horizon,
                t: future_time(times, s.horizon),
                lp_mean: back(log, s.linear_predictor.mean),
                lp_lower: back(log, s.linear_predictor.lower),
                lp_upper: back(log, s.linear_predictor.upper),
                y_mean,
                y_lower: back(log, s.observation.lower),
                y_upper: back(log, s.observation.upper),
            });
        }
    }
    if log {
        manifest.notes.push("forecast quantities are exponentiated; y_mean is a draw average under MCMC and unavailable (NaN) for the sequential engine".into());
    }
    let path = dir.join("forecast.csv");
    write_rows(&path, &rows)?;
    manifest.add_file(dir, &path);

    if let Some(width) = window {
        let spec = saved.config.build_spec(&saved.data)?;
        let mut rows = Vec::new();
        for r in &results {
            let sums = if log {
                match &r.linear_predictor_draws {
                    Some(d) => {
                        let exp_draws: Vec<Vec<f64>> = d.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect();
                        let mut copy = r.clone();
                        copy.linear_predictor_draws = Some(exp_draws);
                        window_sums(&copy, &spec, width)?
                    }
                    None => {
                        manifest.notes.push(format!("window sums skipped for tau {}: not available on the log scale for the sequential engine", r.quantile.tau()));
                        continue;
                    }
                }
            } else {
                window_sums(r, &spec, width)?
            };
            for (w, s) in sums.iter().enumerate() {
                rows.push(WindowRow {
                    tau: r.quantile.tau(),
                    window: w + 1,
                    first_t: future_time(times, w * width + 1),
                    last_t: future_time(times, (w + 1) * width),
                    sum_mean: s.mean,
                    sum_lower: s.lower,
                    sum_upper: s.upper,
                });
            }
        }
        let path = dir.join("forecast_windows.csv");
        write_rows(&path, &rows)?;
        manifest.add_file(dir, &path);
    }
    Ok(())
}

pub fn run_forecast(state_path: &Path, k: usize, window: Option<usize>, out: &Path) -> CliResult<Manifest> {
    let started = Instant::now();
    let text = std::fs::read_to_string(state_path).map_err(|e| CliError::Config(format!("cannot read fit state {}: {e}", state_path.display())))?;
    let saved: SavedFit = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("fit state {} is unreadable: {e}", state_path.display())))?;
    let dir = ensure_dir(out)?;
    let mut manifest = Manifest::new("forecast", Some(saved.config.clone()), saved.config.seed);
    write_forecasts(&saved, k, window, &dir, &mut manifest)?;
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("forecast_manifest.json"))?;
    Ok(manifest)
}
