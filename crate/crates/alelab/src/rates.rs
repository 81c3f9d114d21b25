//! Convolution rates `∫_1^{t-1} s^{-α}(t-s)^{-β} ds` and power-law fitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateClass {
    /// Signed power: the integral behaves like `t^exponent (log t)^{has_log}`.
    pub exponent: f64,
    pub has_log: bool,
    /// `min{α, β, α+β−1}`: every `θ` below it gives the bound `t^{-θ}`.
    pub theta: f64,
}

pub fn convolution_rate_class(alpha: f64, beta: f64) -> Result<RateClass> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain(format!("alpha, beta must be positive: ({alpha}, {beta})")));
    }
    let gamma = alpha.min(beta);
    let delta = alpha.max(beta);
    let theta = gamma.min(alpha + beta - 1.0);
    let class = if (delta - 1.0).abs() < 1e-12 {
        RateClass { exponent: -gamma, has_log: true, theta }
    } else if delta > 1.0 {
        RateClass { exponent: -gamma, has_log: false, theta }
    } else {
        RateClass { exponent: 1.0 - alpha - beta, has_log: false, theta }
    };
    Ok(class)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod 7-15 with relative tolerance.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut stack = vec![(a, b, gk15(&f, a, b))];
    let mut total: f64 = 0.0;
    let mut done: Vec<f64> = Vec::new();
    let mut evals = 0usize;
    let (whole, _) = gk15(&f, a, b);
    while let Some((lo, hi, (v, e))) = stack.pop() {
        evals += 1;
        if evals > 200_000 {
            return Err(Error::Numeric("adaptive quadrature did not converge".into()));
        }
        let scale = whole.abs().max(total.abs()).max(1e-300);
        if e <= rel_tol * scale * (hi - lo) / (b - a) || hi - lo < 1e-14 * (b - a) {
            done.push(v);
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, gk15(&f, lo, mid)));
            stack.push((mid, hi, gk15(&f, mid, hi)));
        }
    }
    done.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());
    let s: f64 = done.iter().sum();
    if s.is_nan() {
        return Err(Error::Numeric("NaN in quadrature".into()));
    }
    Ok(s)
}

/// One half of the split integral: `∫_1^{t/2} s^{-α}(t-s)^{-β} ds` with `s = e^x`.
fn half_integral(alpha: f64, beta: f64, t: f64) -> Result<f64> {
    let top = (0.5 * t).ln();
    integrate_adaptive(
        |x| {
            let s = x.exp();
            (x * (1.0 - alpha)).exp() * (t - s).powf(-beta)
        },
        0.0,
        top,
        1e-13,
    )
}

pub fn convolution_integral(alpha: f64, beta: f64, t: f64) -> Result<f64> {
    if !(t >= 2.0) {
        return Err(Error::Domain(format!("t must be at least 2, got {t}")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain("alpha, beta must be positive".into()));
    }
    let left = half_integral(alpha, beta, t)?;
    let right = half_integral(beta, alpha, t)?;
    Ok(left + right)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub log_coefficient: Option<f64>,
    pub residual: f64,
    pub window: [f64; 2],
    pub degenerate: bool,
    pub has_log: bool,
}

impl RateFit {
    pub fn degenerate(window: [f64; 2]) -> Self {
        RateFit {
            exponent: 0.0,
            amplitude: 0.0,
            log_coefficient: None,
            residual: f64::INFINITY,
            window,
            degenerate: true,
            has_log: false,
        }
    }
}

/// Values below this are treated as numerically zero.
pub const DEGENERATE_FLOOR: f64 = 1e-300;

/// Least squares of `ln v = a + γ ln t (+ c ln ln t)`.
pub fn fit_rate(samples: &[(f64, f64)], allow_log: bool) -> Result<RateFit> {
    if samples.len() < 2 {
        return Err(Error::Domain("at least two samples required".into()));
    }
    let t_lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let t_hi = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let window = [t_lo, t_hi];
    if samples.iter().any(|s| !(s.0 > 0.0) || s.1.is_nan()) {
        return Err(Error::Domain("fit samples need positive abscissae and finite values".into()));
    }
    if samples.iter().any(|s| s.1 <= DEGENERATE_FLOOR) {
        return Ok(RateFit::degenerate(window));
    }
    if allow_log && t_lo <= 1.0 {
        return Err(Error::Domain("log-corrected fit requires t > 1".into()));
    }
    let cols = if allow_log { 3 } else { 2 };
    let m = samples.len();
    let mut a = DMatrix::zeros(m, cols);
    let mut b = DVector::zeros(m);
    for (i, &(t, v)) in samples.iter().enumerate() {
        a[(i, 0)] = 1.0;
        a[(i, 1)] = t.ln();
        if allow_log {
            a[(i, 2)] = t.ln().ln();
        }
        b[i] = v.ln();
    }
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
    let res = &a * &x - &b;
    let rms = (res.norm_squared() / m as f64).sqrt();
    let c = if allow_log { Some(x[2]) } else { None };
    Ok(RateFit {
        exponent: x[1],
        amplitude: x[0].exp(),
        log_coefficient: c,
        residual: rms,
        window,
        degenerate: false,
        has_log: c.map(|c| c.abs() > 0.5).unwrap_or(false),
    })
}

/// Log-spaced sample times on `[lo, hi]`.
pub fn log_times(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub alpha: f64,
    pub beta: f64,
    pub predicted_exponent: f64,
    pub fitted_exponent: f64,
    pub log_flag: bool,
    pub residual: f64,
    pub pass: bool,
}

/// The twelve `(α, β)` pairs of the rate sweep: five with `δ > 1`, three with `δ = 1`,
/// four with `δ < 1`.
pub const SWEEP_PAIRS: [(f64, f64); 12] = [
    (2.0, 2.0),
    (0.5, 3.0),
    (1.5, 2.5),
    (3.0, 0.8),
    (1.2, 3.0),
    (1.0, 1.0),
    (0.5, 1.0),
    (1.0, 0.4),
    (0.3, 0.4),
    (0.2, 0.3),
    (0.1, 0.5),
    (0.4, 0.2),
];

/// Fit window of the sweep.
pub const SWEEP_WINDOW: [f64; 2] = [1e2, 1e5];

pub fn rate_row(alpha: f64, beta: f64) -> Result<RateRow> {
    rate_row_over(alpha, beta, SWEEP_WINDOW)
}

pub fn rate_row_over(alpha: f64, beta: f64, window: [f64; 2]) -> Result<RateRow> {
    if !(window[0] >= 2.0 && window[1] > window[0]) {
        return Err(Error::Domain(format!("bad fit window {window:?}")));
    }
    let class = convolution_rate_class(alpha, beta)?;
    let samples = log_times(window[0], window[1], 31)
        .into_iter()
        .map(|t| convolution_integral(alpha, beta, t).map(|v| (t, v)))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_rate(&samples, class.has_log)?;
    let tol = if class.has_log { 0.08 } else { 0.03 };
    let log_ok = !class.has_log || fit.has_log;
    Ok(RateRow {
        alpha,
        beta,
        predicted_exponent: class.exponent,
        fitted_exponent: fit.exponent,
        log_flag: fit.has_log,
        residual: fit.residual,
        pass: (fit.exponent - class.exponent).abs() <= tol && log_ok,
    })
}

pub fn rate_sweep(pairs: &[(f64, f64)]) -> Result<Vec<RateRow>> {
    rate_sweep_over(pairs, SWEEP_WINDOW)
}

pub fn rate_sweep_over(pairs: &[(f64, f64)], window: [f64; 2]) -> Result<Vec<RateRow>> {
    use rayon::prelude::*;
    pairs.par_iter().map(|&(a, b)| rate_row_over(a, b, window)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        let c = convolution_rate_class(2.0, 2.0).unwrap();
        assert_eq!((c.exponent, c.has_log), (-2.0, false));
        let c = convolution_rate_class(1.0, 1.0).unwrap();
        assert_eq!((c.exponent, c.has_log), (-1.0, true));
        let c = convolution_rate_class(0.3, 0.4).unwrap();
        assert!((c.exponent - 0.3).abs() < 1e-12 && !c.has_log);
        assert!(convolution_rate_class(0.0, 1.0).is_err());
    }

    #[test]
    fn closed_forms() {
        assert_eq!(convolution_integral(1.0, 1.0, 2.0).unwrap(), 0.0);
        let v = convolution_integral(1.0, 1.0, 3.0).unwrap();
        assert!((v - 2.0 * 2f64.ln() / 3.0).abs() < 1e-12);
        for t in [10.0, 1e3, 1e5] {
            let v = convolution_integral(1.0, 1.0, t).unwrap();
            let exact = 2.0 / t * (t - 1.0).ln();
            assert!((v / exact - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric() {
        for &(a, b) in &SWEEP_PAIRS {
            for t in [3.0, 50.0, 1e4] {
                let x = convolution_integral(a, b, t).unwrap();
                let y = convolution_integral(b, a, t).unwrap();
                assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
    }

    #[test]
    fn synthetic_fits() {
        let s: Vec<_> = log_times(1.0, 100.0, 20).iter().map(|&t| (t, 5.0 * t.powf(-1.5))).collect();
        let f = fit_rate(&s, false).unwrap();
        assert!((f.exponent + 1.5).abs() < 1e-10 && (f.amplitude - 5.0).abs() < 1e-9);
        let s: Vec<_> = log_times(10.0, 1e4, 20).iter().map(|&t| (t, t.ln() / t)).collect();
        let f = fit_rate(&s, true).unwrap();
        assert!((f.exponent + 1.0).abs() < 1e-8 && f.has_log);
        let z: Vec<_> = log_times(10.0, 1e4, 20).iter().map(|&t| (t, 0.0)).collect();
        assert!(fit_rate(&z, false).unwrap().degenerate);
    }

    #[test]
    fn two_sided_bound_for_delta_above_one() {
        for &(a, b) in &[(2.0, 2.0), (0.5, 3.0), (1.5, 2.5)] {
            let g = f64::min(a, b);
            let v: Vec<f64> = log_times(4.0, 1e4, 20)
                .iter()
                .map(|&t| convolution_integral(a, b, t).unwrap() * t.powf(g))
                .collect();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            assert!(lo > 0.0 && hi / lo < 10.0);
        }
    }

    #[test]
    fn half_three() {
        let r = rate_row(0.5, 3.0).unwrap();
        assert!((r.fitted_exponent + 0.5).abs() < 0.03, "{r:?}");
    }
}
