//! Browser demo. The plain functions do the work and are tested natively;
//! the `#[wasm_bindgen]` wrappers take and return JSON strings.

use dqlm::distributions::{al_density, AlParams, DensityMethod, GalParams, NgalParams, QuantileSpec};
use dqlm::forecast::forecast_seq;
use dqlm::linalg::{Mat, Vector};
use dqlm::model::{build_local_level, EvolutionVariance, PriorSpec, TimeSeriesData};
use dqlm::quadrature::QuadConfig;
use dqlm::seqfilter::{fit_map_phi, run_filter, FilterOptions, MapConfig};
use dqlm::simulate::simulate_al_dlm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type DemoResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRequest {
    pub tau: f64,
    pub sigma: f64,
    /// Gamma shape of the mixing variable; 1 is the AL law itself.
    pub shape: f64,
    /// Variance of the added normal noise.
    pub noise_var: f64,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityCurves {
    pub x: Vec<f64>,
    pub al: Vec<f64>,
    pub ngal: Vec<f64>,
    pub ngal_mean: f64,
    pub ngal_sd: f64,
}

/// AL(0, σ, τ) next to the NGAL law with the same asymmetry.
pub fn density_curves(req: &DensityRequest) -> DemoResult<DensityCurves> {
    if req.points < 2 || req.points > 2000 || req.to.partial_cmp(&req.from) != Some(std::cmp::Ordering::Greater) {
        return Err("need 2..=2000 points on an increasing range".into());
    }
    let q = QuantileSpec::new(req.tau).map_err(err)?;
    let al = AlParams::new(0.0, req.sigma, q).map_err(err)?;
    let gal = GalParams::new(0.0, q.a_tau() * req.sigma, q.b_tau() * req.sigma * req.sigma, req.shape).map_err(err)?;
    let ngal = NgalParams::new(gal, req.noise_var).map_err(err)?;
    let cfg = QuadConfig::default();
    let step = (req.to - req.from) / (req.points - 1) as f64;
    let x: Vec<f64> = (0..req.points).map(|i| req.from + step * i as f64).collect();
    let al_y = x.iter().map(|&v| al_density(v, &al)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let ngal_y = x.iter().map(|&v| ngal.density(v, DensityMethod::CfInversion, &cfg)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let m = ngal.moments();
    Ok(DensityCurves { x, al: al_y, ngal: ngal_y, ngal_mean: m.mean, ngal_sd: m.variance.sqrt() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRequest {
    /// Series to fit; simulated from `seed` and `length` when empty.
    #[serde(default)]
    pub values: Vec<f64>,
    pub seed: u64,
    pub length: usize,
    pub taus: Vec<f64>,
    pub discount: f64,
    #[serde(default)]
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileBand {
    pub tau: f64,
    pub scale: f64,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub forecast_mean: Vec<f64>,
    pub forecast_lower: Vec<f64>,
    pub forecast_upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResponse {
    pub y: Vec<f64>,
    pub bands: Vec<QuantileBand>,
}

fn demo_series(req: &FitRequest) -> DemoResult<TimeSeriesData> {
    if !req.values.is_empty() {
        return TimeSeriesData::from_values(req.values.clone()).map_err(err);
    }
    if req.length == 0 || req.length > 1000 {
        return Err("length must be 1..=1000".into());
    }
    let spec = build_local_level().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let path = simulate_al_dlm(&spec, &Mat::from_element(1, 1, 1.0), &Vector::from_element(1, 20.0), 2.0, QuantileSpec::median(), req.length, &mut rng)
        .map_err(err)?;
    Ok(path.data)
}

/// Local-level sequential fit per quantile, with an optional forecast.
pub fn fit_local_level(req: &FitRequest) -> DemoResult<FitResponse> {
    let data = demo_series(req)?;
    let spec = build_local_level()
        .and_then(|s| s.with_evolution_variance(EvolutionVariance::Discount(req.discount)))
        .map_err(err)?;
    let prior = PriorSpec::vague(1);
    // Threads are unavailable in the browser.
    let map = MapConfig { parallel: false, cross_check: false, grid_points: 9, relative_tol: 1e-4, objective_tol: 1e-6, ..Default::default() };
    let z = 1.959_963_984_540_054;
    let mut bands = Vec::new();
    for &tau in &req.taus {
        let q = QuantileSpec::new(tau).map_err(err)?;
        let est = fit_map_phi(&data, &spec, &prior, q, 1.0, &map).map_err(err)?;
        let phi = est.phi();
        let run = run_filter(&data, &spec, &prior, q, phi, FilterOptions { log_likelihood: false, ..Default::default() }).map_err(err)?;
        let mut band = QuantileBand {
            tau,
            scale: est.scale(),
            mean: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            forecast_mean: Vec::new(),
            forecast_lower: Vec::new(),
            forecast_upper: Vec::new(),
        };
        for s in &run.steps {
            let (m, v) = s.linear_predictor(&spec);
            let sd = (v.max(0.0) / phi).sqrt();
            band.mean.push(m);
            band.lower.push(m - z * sd);
            band.upper.push(m + z * sd);
        }
        if req.horizon > 0 {
            let last = run.final_state().ok_or("empty series")?;
            let fc = forecast_seq(last, &spec, q, phi, req.horizon, data.len(), 0.95, &QuadConfig::default()).map_err(err)?;
            for s in &fc.steps {
                band.forecast_mean.push(s.linear_predictor.mean);
                band.forecast_lower.push(s.linear_predictor.lower);
                band.forecast_upper.push(s.linear_predictor.upper);
            }
        }
        bands.push(band);
    }
    Ok(FitResponse { y: data.y, bands })
}

pub fn json_call<Q: for<'de> Deserialize<'de>, R: Serialize>(input: &str, f: impl Fn(&Q) -> DemoResult<R>) -> DemoResult<String> {
    let req: Q = serde_json::from_str(input).map_err(err)?;
    serde_json::to_string(&f(&req)?).map_err(err)
}

#[wasm_bindgen(js_name = densityCurves)]
pub fn density_curves_js(request: &str) -> Result<String, JsValue> {
    json_call(request, density_curves).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = fitLocalLevel)]
pub fn fit_local_level_js(request: &str) -> Result<String, JsValue> {
    json_call(request, fit_local_level).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn al_curve_integrates_to_one() {
        let req = DensityRequest { tau: 0.3, sigma: 1.0, shape: 1.0, noise_var: 0.5, from: -40.0, to: 40.0, points: 801 };
        let c = density_curves(&req).unwrap();
        let area: f64 = c.al.iter().sum::<f64>() * 0.1;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
        let area: f64 = c.ngal.iter().sum::<f64>() * 0.1;
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn fit_orders_quantiles() {
        let req = FitRequest { values: vec![], seed: 3, length: 40, taus: vec![0.1, 0.9], discount: 0.95, horizon: 3 };
        let out = fit_local_level(&req).unwrap();
        assert_eq!(out.y.len(), 40);
        assert_eq!(out.bands[0].forecast_mean.len(), 3);
        let below = out.bands[0].mean.iter().zip(&out.bands[1].mean).filter(|(a, b)| a < b).count();
        assert!(below >= 35, "{below}");
    }

    #[test]
    fn bad_requests_are_errors() {
        let req = DensityRequest { tau: 1.5, sigma: 1.0, shape: 1.0, noise_var: 0.0, from: -1.0, to: 1.0, points: 10 };
        assert!(density_curves(&req).is_err());
        assert!(json_call::<FitRequest, FitResponse>("{", fit_local_level).is_err());
    }
}
