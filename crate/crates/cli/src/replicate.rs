//! `replicate <preset>`: the two canned studies.

use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use dqlm::distributions::QuantileSpec;
use dqlm::linalg::Mat;
use dqlm::mcmc::{run_gibbs, summarize, McmcConfig};
use dqlm::model::{build_static_level, build_trend_seasonal, EvolutionVariance, PriorSpec};
use dqlm::seqfilter::{fit_map_phi, run_filter, FilterOptions, MapConfig};
use dqlm::simulate::simulate_static_gamma;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, tau_label, write_rows, CoverageRow, FitInfo, FitRow, Manifest};
use crate::simulate::{simulate_preset, SimPreset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReplicatePreset {
    /// Both engines on the simulated trend + seasonal series, tau 0.1/0.5/0.9.
    TrendSeasonal,
    /// Coverage and error of raw vs log-scale fits of gamma quantiles.
    GammaCoverage,
}

#[derive(Debug, Clone)]
pub struct ReplicateOptions {
    pub seed: u64,
    pub replications: usize,
    pub mcmc: McmcConfig,
}

const TAUS: [f64; 3] = [0.1, 0.5, 0.9];

pub fn run_replicate(preset: ReplicatePreset, opts: &ReplicateOptions, out: &Path) -> CliResult<Manifest> {
    opts.mcmc.validate()?;
    let started = Instant::now();
    let dir = ensure_dir(out)?;
    let mut manifest = Manifest::new(&format!("replicate {}", preset.to_possible_value().map_or(String::new(), |v| v.get_name().to_string())), None, opts.seed);
    match preset {
        ReplicatePreset::TrendSeasonal => trend_seasonal(opts, &dir, &mut manifest)?,
        ReplicatePreset::GammaCoverage => gamma_coverage(opts, &dir, &mut manifest)?,
    }
    manifest.elapsed_seconds = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

fn trend_seasonal(opts: &ReplicateOptions, dir: &Path, manifest: &mut Manifest) -> CliResult<()> {
    let sim = simulate_preset(SimPreset::TrendSeasonal, None, opts.seed)?;
    let base = build_trend_seasonal(12)?;
    let mcmc_spec = base.clone().with_evolution_variance(EvolutionVariance::SharedInverseWishart { dof: 8.0, scale: Mat::identity(4, 4) * 0.1 })?;
    let seq_spec = base.with_evolution_variance(EvolutionVariance::Discount(0.95))?;
    let prior = PriorSpec::vague(4);
    let data = &sim.data;

    let results: Vec<CliResult<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = TAUS
            .iter()
            .enumerate()
            .map(|(i, &tau)| {
                let (mcmc_spec, seq_spec, prior) = (&mcmc_spec, &seq_spec, &prior);
                s.spawn(move || -> CliResult<_> {
                    let q = QuantileSpec::new(tau)?;
                    let t0 = Instant::now();
                    let draws = run_gibbs(data, mcmc_spec, prior, q, &McmcConfig { seed: opts.mcmc.seed + i as u64, ..opts.mcmc })?;
                    let mcmc_secs = t0.elapsed().as_secs_f64();
                    let t0 = Instant::now();
                    let est = fit_map_phi(data, seq_spec, prior, q, 1.0, &MapConfig::default())?;
                    let run = run_filter(data, seq_spec, prior, q, est.phi(), FilterOptions::default())?;
                    Ok((tau, draws, mcmc_secs, est, run, t0.elapsed().as_secs_f64()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("replicate thread panicked")).collect()
    });

    let mut summary = Vec::new();
    for r in results {
        let (tau, draws, mcmc_secs, est, run, seq_secs) = r?;
        let label = tau_label(tau);
        let mc = draws.linear_predictor_summary(0.95);
        let rows: Vec<FitRow> = mc
            .iter()
            .enumerate()
            .map(|(i, s)| FitRow { t: data.times[i], y: data.y[i], mean: s.mean, lower: s.lower, upper: s.upper })
            .collect();
        let path = dir.join(format!("mcmc_{label}.csv"));
        write_rows(&path, &rows)?;
        manifest.add_file(dir, &path);

        let z = 1.959_963_984_540_054;
        let seq: Vec<FitRow> = run
            .steps
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let (m, v) = st.linear_predictor(&seq_spec);
                let sd = (v.max(0.0) / est.phi()).sqrt();
                FitRow { t: data.times[i], y: data.y[i], mean: m, lower: m - z * sd, upper: m + z * sd }
            })
            .collect();
        let path = dir.join(format!("sequential_{label}.csv"));
        write_rows(&path, &seq)?;
        manifest.add_file(dir, &path);

        // The series is Gaussian with sd 7 around the simulated mean.
        let shift = 7.0 * Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(tau);
        let truth_cov = mc.iter().zip(&sim.truth).filter(|(s, v)| s.lower <= **v + shift && **v + shift <= s.upper).count() as f64 / mc.len() as f64;
        let inside = mc.iter().zip(&seq).filter(|(s, r)| s.lower <= r.mean && r.mean <= s.upper).count() as f64 / mc.len() as f64;
        summary.push(serde_json::json!({
            "tau": tau,
            "mcmc_band_covers_true_quantile": truth_cov,
            "sequential_mean_inside_mcmc_band": inside,
            "mcmc_seconds": mcmc_secs,
            "sequential_seconds": seq_secs,
            "mcmc_scale": draws.sigma_summary(0.95).mean,
            "sequential_scale": est.scale(),
        }));
        manifest.fits.push(FitInfo {
            tau,
            scale: est.scale(),
            converged: Some(est.converged),
            log_likelihood: Some(run.log_likelihood),
            clamp_count: Some(run.clamp_count),
            scale_acceptance: None,
            seconds: seq_secs,
        });
    }
    let rows: Vec<_> = (0..data.len()).map(|i| crate::output::SeriesRow { t: data.times[i], y: data.y[i], x: None, truth: sim.truth[i] }).collect();
    let path = dir.join("series.csv");
    write_rows(&path, &rows)?;
    manifest.add_file(dir, &path);
    manifest.summary = Some(serde_json::Value::Array(summary));
    Ok(())
}

struct CellResult {
    cov: [f64; 2],
    rmae: [f64; 2],
}

fn coverage_cell(shape: f64, tau: f64, t_len: usize, opts: &ReplicateOptions) -> CliResult<CellResult> {
    let spec = build_static_level()?;
    let prior = PriorSpec::vague(1);
    let q = QuantileSpec::new(tau)?;
    let truth = Gamma::new(shape, 1.0).map_err(|e| CliError::Config(e.to_string()))?.inverse_cdf(tau);
    let (mut hit, mut err) = ([0usize; 2], [0.0; 2]);
    for rep in 0..opts.replications as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(1_000_003).wrapping_add(rep));
        let data = simulate_static_gamma(t_len, shape, 1.0, &mut rng)?;
        let cfg = McmcConfig { seed: opts.mcmc.seed + rep, ..opts.mcmc };
        for (k, log) in [false, true].into_iter().enumerate() {
            let fitted = if log { data.map_values(f64::ln)? } else { data.clone() };
            let draws: Vec<f64> = run_gibbs(&fitted, &spec, &prior, q, &cfg)?.linear_predictor.iter().map(|d| d[0]).collect();
            let s = summarize(&draws, 0.95);
            let target = if log { truth.ln() } else { truth };
            hit[k] += usize::from(s.lower <= target && target <= s.upper);
            let point = if log { s.mean.exp() } else { s.mean };
            err[k] += (point - truth).abs() / truth;
        }
    }
    let n = opts.replications as f64;
    Ok(CellResult { cov: [hit[0] as f64 / n, hit[1] as f64 / n], rmae: [err[0] / n, err[1] / n] })
}

fn gamma_coverage(opts: &ReplicateOptions, dir: &Path, manifest: &mut Manifest) -> CliResult<()> {
    if opts.replications == 0 {
        return Err(CliError::Config("replications must be at least 1".into()));
    }
    let mut jobs = Vec::new();
    for shape in [1.0, 4.0, 16.0] {
        for tau in TAUS {
            for t_len in [100, 250] {
                jobs.push((shape, tau, t_len));
            }
        }
    }
    let results: Vec<CliResult<CellResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|&(shape, tau, t)| s.spawn(move || coverage_cell(shape, tau, t, opts))).collect();
        handles.into_iter().map(|h| h.join().expect("coverage thread panicked")).collect()
    });
    let mut rows = Vec::new();
    for (&(shape, tau, t_len), r) in jobs.iter().zip(results) {
        let r = r?;
        for (k, scale) in ["raw", "log"].into_iter().enumerate() {
            rows.push(CoverageRow { shape, skewness: 2.0 / f64::sqrt(shape), tau, t_len, scale: scale.into(), coverage: r.cov[k], rmae: r.rmae[k] });
        }
    }
    let path = dir.join("coverage.csv");
    write_rows(&path, &rows)?;
    manifest.add_file(dir, &path);
    let log_closer = rows.chunks(2).filter(|p| (p[1].coverage - 0.95).abs() < (p[0].coverage - 0.95).abs()).count();
    manifest.summary = Some(serde_json::json!({
        "replications": opts.replications,
        "cells": rows.len() / 2,
        "log_closer_to_nominal": log_closer,
    }));
    Ok(())
}
