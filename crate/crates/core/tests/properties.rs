use dqlm::distributions::{al_cdf, al_cdf_at_location, al_quantile, gamma_to_lognormal, lognormal_to_gamma, AlParams, GammaMoments, GigParams, QuantileSpec};
use dqlm::forecast::forecast_seq;
use dqlm::linalg::Mat;
use dqlm::mcmc::{run_gibbs, McmcConfig};
use dqlm::model::{build_local_level, EvolutionVariance, PriorSpec, TimeSeriesData};
use dqlm::quadrature::{integrate_interval, integrate_upper_tail, QuadConfig};
use dqlm::seqfilter::{run_filter, FilterOptions};
use dqlm::special::ln_bessel_k;
use proptest::prelude::*;
use statrs::function::gamma::digamma;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn al_location_is_the_tau_quantile(tau in 0.01f64..0.99, mu in -50.0f64..50.0, sigma in 0.01f64..20.0) {
        let p = AlParams::new(mu, sigma, QuantileSpec::new(tau).unwrap()).unwrap();
        prop_assert!((al_cdf_at_location(&p).unwrap() - tau).abs() < 1e-12);
    }

    #[test]
    fn al_quantile_inverts_cdf(tau in 0.02f64..0.98, prob in 0.001f64..0.999, sigma in 0.1f64..5.0) {
        let p = AlParams::new(1.0, sigma, QuantileSpec::new(tau).unwrap()).unwrap();
        let y = al_quantile(prob, &p).unwrap();
        prop_assert!((al_cdf(y, &p).unwrap() - prob).abs() < 1e-9);
    }

    // Half-integer orders have elementary closed forms.
    #[test]
    fn bessel_k_half_orders(x in 0.01f64..60.0) {
        let k12 = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        prop_assert!((ln_bessel_k(0.5, x) - k12.ln()).abs() < 1e-8);
        prop_assert!((ln_bessel_k(1.5, x) - (k12 * (1.0 + 1.0 / x)).ln()).abs() < 1e-8);
    }

    #[test]
    fn gig_mean_matches_quadrature(chi in 0.05f64..20.0, kappa in 0.05f64..20.0, lambda in -3.0f64..3.0) {
        let p = GigParams::new(chi, kappa, lambda).unwrap();
        let cfg = QuadConfig::default();
        let m = p.mean();
        // Shift by the kernel at the mean so the integrands stay O(1).
        let shift = p.ln_kernel(m);
        let moment = |k: i32| {
            let f = |x: f64| x.powi(k) * (p.ln_kernel(x) - shift).exp();
            integrate_interval(f, 0.0, m, &cfg).unwrap().value + integrate_upper_tail(f, m, &cfg).unwrap().value
        };
        let (z, first) = (moment(0), moment(1));
        prop_assert!((first / z - m).abs() < 1e-6 * m.max(1.0), "{} vs {}", first / z, m);
    }

    #[test]
    fn gamma_bridge_round_trips_shape(shape in 1.2f64..200.0, rate in 0.01f64..100.0) {
        let g = GammaMoments::new(shape, rate).unwrap();
        let l = gamma_to_lognormal(&g).unwrap();
        let back = lognormal_to_gamma(&l).unwrap();
        prop_assert!((back.shape - shape).abs() < 1e-9 * shape);
        // The log mean is a first-order expansion of E log θ = ψ(a) - log b.
        let exact = digamma(shape) - rate.ln();
        prop_assert!((l.log_mean - exact).abs() < 0.1 / shape);
    }

    #[test]
    fn forecast_variance_grows_with_horizon(discount in 0.7f64..0.99, tau in 0.05f64..0.95, seed in 0u64..1000) {
        let spec = build_local_level().unwrap().with_evolution_variance(EvolutionVariance::Discount(discount)).unwrap();
        let y: Vec<f64> = (0..25).map(|i| 5.0 + ((i as f64 + seed as f64) * 0.9).sin()).collect();
        let data = TimeSeriesData::from_values(y).unwrap();
        let q = QuantileSpec::new(tau).unwrap();
        let run = run_filter(&data, &spec, &PriorSpec::vague(1), q, 1.0, FilterOptions { log_likelihood: false, ..Default::default() }).unwrap();
        let fc = forecast_seq(run.final_state().unwrap(), &spec, q, 1.0, 6, 25, 0.9, &QuadConfig::default()).unwrap();
        for w in fc.steps.windows(2) {
            prop_assert!(w[1].linear_predictor.variance > w[0].linear_predictor.variance);
            prop_assert!(w[1].observation.upper - w[1].observation.lower >= w[0].observation.upper - w[0].observation.lower - 1e-9);
        }
        // Frozen dynamics: the mean is flat.
        prop_assert!((fc.steps[5].linear_predictor.mean - fc.steps[0].linear_predictor.mean).abs() < 1e-12);
    }
}

#[test]
fn gibbs_runs_are_seed_deterministic() {
    let spec = build_local_level().unwrap().with_evolution_variance(EvolutionVariance::Fixed(Mat::from_element(1, 1, 0.3))).unwrap();
    let data = TimeSeriesData::from_values((0..30).map(|i| (i as f64 * 0.4).cos()).collect()).unwrap();
    let cfg = McmcConfig { sweeps: 120, burn_in: 20, thin: 1, seed: 5 };
    let q = QuantileSpec::new(0.3).unwrap();
    let a = run_gibbs(&data, &spec, &PriorSpec::vague(1), q, &cfg).unwrap();
    let b = run_gibbs(&data, &spec, &PriorSpec::vague(1), q, &cfg).unwrap();
    assert_eq!(a.sigma, b.sigma);
    assert_eq!(a.linear_predictor, b.linear_predictor);
    let c = run_gibbs(&data, &spec, &PriorSpec::vague(1), q, &McmcConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.sigma, c.sigma);
}

#[test]
fn local_level_filter_tracks_a_constant() {
    let spec = build_local_level().unwrap().with_evolution_variance(EvolutionVariance::Discount(0.9)).unwrap();
    let data = TimeSeriesData::from_values(vec![4.0; 60]).unwrap();
    let run = run_filter(&data, &spec, &PriorSpec::vague(1), QuantileSpec::median(), 1.0, FilterOptions { log_likelihood: false, ..Default::default() }).unwrap();
    let (m, _) = run.steps.last().unwrap().linear_predictor(&spec);
    assert!((m - 4.0).abs() < 0.05, "{m}");
}
