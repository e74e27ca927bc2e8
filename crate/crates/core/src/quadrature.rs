//! Adaptive Gauss–Kronrod quadrature (21-point Kronrod rule embedding the
//! 10-point Gauss rule), in the style of QUADPACK's QAG/QAGP.
//!
//! The NGAL density routes and the test oracles all go through
//! [`integrate`], so every integral in the crate shares one tolerance
//! policy.

use crate::error::{DqlmError, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Tolerances and budget for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-10,
            max_subdivisions: 200,
        }
    }
}

impl QuadConfig {
    pub fn with_abs_tol(mut self, tol: f64) -> Self {
        self.abs_tol = tol;
        self
    }

    pub fn with_rel_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Apply the 21-point Kronrod rule on `[a, b]`, returning the integral and a
/// QUADPACK-style error estimate.
pub fn gauss_kronrod_21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let abs_half = half.abs();

    let fc = f(center);
    let mut res_g = 0.0;
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_k += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let mean = res_k * 0.5;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    res_abs *= abs_half;
    res_asc *= abs_half;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (1.0f64).min((200.0 * err / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

/// Adaptive integration over the finite interval spanned by `points`.
///
/// `points` must be sorted and contain at least the two endpoints; interior
/// points seed the initial partition (kinks, peaks, known oscillation
/// periods). Bisects the segment with the largest error estimate until the
/// total error satisfies `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    if points.len() < 2 {
        return Err(DqlmError::Domain("quadrature needs at least two points".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(DqlmError::Domain("quadrature limits must be finite".into()));
    }
    let mut segments: Vec<Segment> = Vec::with_capacity(cfg.max_subdivisions.max(points.len()));
    for w in points.windows(2) {
        if w[1] < w[0] {
            return Err(DqlmError::Domain("quadrature points must be sorted".into()));
        }
        if w[1] == w[0] {
            continue;
        }
        let (value, error) = gauss_kronrod_21(&mut f, w[0], w[1]);
        segments.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    if segments.is_empty() {
        return Ok(QuadResult {
            value: 0.0,
            abs_error: 0.0,
            subdivisions: 0,
        });
    }

    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let total_err: f64 = segments.iter().map(|s| s.error).sum();
        if !total.is_finite() || !total_err.is_finite() {
            return Err(DqlmError::Numerical(
                "non-finite integrand value encountered in quadrature".into(),
            ));
        }
        let tol = cfg.abs_tol.max(cfg.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(QuadResult {
                value: total,
                abs_error: total_err,
                subdivisions: segments.len(),
            });
        }
        if segments.len() >= cfg.max_subdivisions {
            return Err(DqlmError::Quadrature {
                estimate: total,
                abs_error: total_err,
                subdivisions: segments.len(),
            });
        }

        let (idx, worst) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, s)| (i, *s))
            .expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        // Roundoff floor: the segment can no longer be split meaningfully.
        if mid <= worst.a || mid >= worst.b {
            return Err(DqlmError::Quadrature {
                estimate: total,
                abs_error: total_err,
                subdivisions: segments.len(),
            });
        }
        let (v1, e1) = gauss_kronrod_21(&mut f, worst.a, mid);
        let (v2, e2) = gauss_kronrod_21(&mut f, mid, worst.b);
        segments[idx] = Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segments.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
}

/// Integrate over `[a, b]` with a single initial segment.
pub fn integrate_interval<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    integrate(f, &[a, b], cfg)
}

/// Integrate over `[a, ∞)` via the map `x = a + t / (1 - t)`.
pub fn integrate_upper_tail<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    cfg: &QuadConfig,
) -> Result<QuadResult> {
    integrate(
        |t| {
            let one_minus = 1.0 - t;
            let x = a + t / one_minus;
            let v = f(x) / (one_minus * one_minus);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        &[0.0, 1.0],
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate_interval(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, &QuadConfig::default())
            .unwrap();
        // ∫ x^5 - 3x^2 = [x^6/6 - x^3] = (64/6 - 8) - (1/6 + 1)
        assert_abs_diff_eq!(r.value, 64.0 / 6.0 - 8.0 - 1.0 / 6.0 - 1.0, epsilon = 1e-13);
        assert_eq!(r.subdivisions, 1);
    }

    #[test]
    fn gaussian_tail_integral() {
        let r = integrate_upper_tail(
            |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            0.0,
            &QuadConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn sqrt_endpoint_singularity_converges() {
        let r = integrate_interval(|x| 1.0 / x.sqrt(), 0.0, 1.0, &QuadConfig::default()).unwrap();
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn oscillatory_with_breakpoints() {
        let n = 40;
        let pts: Vec<f64> = (0..=n).map(|i| i as f64 * std::f64::consts::PI / 2.0).collect();
        let r = integrate(|x| x.cos(), &pts, &QuadConfig::default()).unwrap();
        // sin(20π) = 0
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn budget_exhaustion_reports_estimate() {
        let cfg = QuadConfig::default().with_max_subdivisions(3).with_abs_tol(1e-14);
        let err = integrate_interval(|x| (50.0 * x).sin().abs(), 0.0, 10.0, &cfg).unwrap_err();
        assert!(matches!(err, DqlmError::Quadrature { subdivisions: 3, .. }));
    }

    #[test]
    fn unsorted_points_rejected() {
        assert!(integrate(|x| x, &[1.0, 0.0], &QuadConfig::default()).is_err());
    }
}
