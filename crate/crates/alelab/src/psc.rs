//! Positive scalar curvature near Eguchi-Hanson: conformal metrics `(1+u)ĥ` with small
//! `L^p ∩ L^∞` distance to `ĥ` and `scal > 0`, scalar-curvature preservation along the flow, and
//! the decay-exponent comparison behind the rigidity statement.
//!
//! `u` solves `−Δ_ĥ u = f/(n−1)` for a positive source `f ~ r^{-s}`; then
//! `scal_{(1+u)ĥ} = (1+u)^{-2}(f + (3/2)|∇u|²/(1+u))` in dimension four.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{run_fixed_gauge, RunOptions, ScalIdentity};
use crate::geometry::{scalar_curvature, CohomMetric, Frame, InvariantTensor};
use crate::norms::{field_lp, norm, NormSpec, DIM};
use crate::operators::{thomas, DtPolicy};
use crate::rates::{fit_rate, RateFit};

/// Tail exponent `s = 2 + n/p + 0.1` of the sources.
pub fn source_tail(p: f64) -> f64 {
    2.0 + DIM / p + 0.1
}

/// Smooth positive source `(1 + (u/w)²)^{-s/2}` on the grid of `h`.
pub fn tail_source(h: &CohomMetric, width: f64, s: f64) -> Vec<f64> {
    h.grid().nodes().iter().map(|&u| (1.0 + (u / width).powi(2)).powf(-0.5 * s)).collect()
}

/// `−Δ_h w` for a radial function, in the finite-volume form used by the flow operators.
pub fn neg_laplacian(h: &CohomMetric, w: &[f64]) -> Vec<f64> {
    let fr = Frame::new(h);
    let n = h.len();
    let (c1, c2) = h.grid().even_extrapolation();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let lo = if i == 1 { c1 * w[1] + c2 * w[2] } else { w[i - 1] };
        out[i] = (fr.flux[i] * (w[i] - w[i + 1]) + fr.flux[i - 1] * (w[i] - lo)) / fr.cell[i];
    }
    h.grid().extrapolate_origin(&mut out);
    out[n - 1] = out[n - 2];
    out
}

/// Solve `−Δ_h w = rhs` with `w` even at the bolt and `w ~ r^{2−s}` at the outer edge.
pub fn solve_poisson(h: &CohomMetric, rhs: &[f64], s: f64) -> Result<Vec<f64>> {
    let fr = Frame::new(h);
    let n = h.len();
    let (c1, c2) = h.grid().even_extrapolation();
    let m = n - 1;
    let (mut a, mut b, mut c, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for i in 1..n - 1 {
        let r = i - 1;
        a[r] = -fr.flux[i - 1];
        b[r] = fr.flux[i] + fr.flux[i - 1];
        c[r] = -fr.flux[i];
        d[r] = rhs[i] * fr.cell[i];
    }
    // even extrapolation w_0 = c1 w_1 + c2 w_2 folded into the first row
    let l = a[0];
    b[0] += c1 * l;
    c[0] += c2 * l;
    a[0] = 0.0;
    // Robin row: outward flux A1A2A3/√f · w_u with w_u = (2−s) w (dr/du) / r
    let last = n - 1;
    let f = h.comp(0, last);
    let area = (1..4).map(|q| h.comp(q, last).sqrt()).product::<f64>() / f.sqrt();
    let out = area * (2.0 - s) * h.dr_du()[last] / h.r()[last];
    let half_cell = 0.5 * fr.dens[last] * h.grid().jacobian()[last];
    a[m - 1] = -fr.flux[last - 1];
    b[m - 1] = fr.flux[last - 1] - out;
    c[m - 1] = 0.0;
    d[m - 1] = rhs[last] * half_cell;
    let x = thomas(&a, &b, &c, &d)?;
    let mut w = vec![0.0; n];
    w[1..].copy_from_slice(&x);
    h.grid().extrapolate_origin(&mut w);
    Ok(w)
}

/// `(1+u)h` as a metric.
pub fn conformal_metric(h: &CohomMetric, u: &[f64]) -> Result<CohomMetric> {
    let k = InvariantTensor::from_fn(h, |i, _| [u[i]; 4]);
    h.perturbed(&k)
}

/// `scal_g − scal_h` node by node; removes the discretization residual of the Ricci-flat `h`.
pub fn scal_excess(g: &CohomMetric, h: &CohomMetric) -> Vec<f64> {
    scalar_curvature(g).iter().zip(scalar_curvature(h)).map(|(a, b)| a - b).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformalMember {
    pub index: usize,
    /// Amplitude of the source after the positivity bisection.
    pub amplitude: f64,
    pub norm_lp: f64,
    pub norm_linf: f64,
    pub scal_min: f64,
    #[serde(skip)]
    pub factor: Vec<f64>,
    #[serde(skip)]
    pub metric: Option<CohomMetric>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformalFamily {
    pub p: f64,
    pub tail: f64,
    pub members: Vec<ConformalMember>,
}

impl ConformalFamily {
    /// `‖g_i − ĥ‖_{L^p} + ‖g_i − ĥ‖_{L^∞}` per member.
    pub fn norms(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.norm_lp + m.norm_linf).collect()
    }
}

/// Largest amplitude `≤ amp` (halving, then bisection) with `scal > 0` at every node.
fn positive_member(h: &CohomMetric, unit: &[f64], amp: f64) -> Result<(f64, Vec<f64>, CohomMetric, f64)> {
    let build = |a: f64| -> Result<(Vec<f64>, CohomMetric, f64)> {
        let u: Vec<f64> = unit.iter().map(|v| a * v).collect();
        let g = conformal_metric(h, &u)?;
        let min = scal_excess(&g, h).into_iter().fold(f64::INFINITY, f64::min);
        Ok((u, g, min))
    };
    let mut hi = amp;
    let (u, g, min) = build(hi)?;
    if min > 0.0 {
        return Ok((hi, u, g, min));
    }
    let mut lo = None;
    for _ in 0..60 {
        hi *= 0.5;
        let r = build(hi)?;
        if r.2 > 0.0 {
            lo = Some((hi, r));
            break;
        }
    }
    let Some((mut a_lo, mut best)) = lo else {
        return Err(Error::Construction("scal > 0 not reached at any representable amplitude".into()));
    };
    let mut a_hi = 2.0 * a_lo;
    for _ in 0..30 {
        let mid = 0.5 * (a_lo + a_hi);
        let r = build(mid)?;
        if r.2 > 0.0 {
            a_lo = mid;
            best = r;
        } else {
            a_hi = mid;
        }
    }
    Ok((a_lo, best.0, best.1, best.2))
}

/// Conformal metrics `g_i = (1+u_i)ĥ`, `i = 1..=count`, with source amplitude `2^{-i}`.
pub fn conformal_psc_sequence(h_hat: &CohomMetric, p: f64, count: usize) -> Result<ConformalFamily> {
    let crit = DIM / (DIM - 2.0);
    if !(p > crit) || !p.is_finite() {
        return Err(Error::Domain(format!("p = {p} is in the rigidity regime p ≤ {crit}")));
    }
    let s = source_tail(p);
    let f = tail_source(h_hat, 1.0, s);
    let rhs: Vec<f64> = f.iter().map(|v| v / (DIM - 1.0)).collect();
    let unit = solve_poisson(h_hat, &rhs, s)?;
    let mut members = Vec::with_capacity(count);
    for i in 1..=count {
        let (amplitude, u, g, scal_min) = positive_member(h_hat, &unit, 0.5f64.powi(i as i32))?;
        let k = h_hat.difference(&g)?;
        members.push(ConformalMember {
            index: i,
            amplitude,
            norm_lp: norm(&k, &NormSpec::lp(p), h_hat)?,
            norm_linf: k.max_abs(),
            scal_min,
            factor: u,
            metric: Some(g),
        });
    }
    Ok(ConformalFamily { p, tail: s, members })
}

/// Conformal metric from an arbitrary nonnegative source `f ~ r^{-s}`; the factor has `sup u ≤ amp`
/// and `scal > 0`.
pub fn conformal_from_source(h_hat: &CohomMetric, f: &[f64], s: f64, amp: f64, p: f64) -> Result<ConformalMember> {
    if f.len() != h_hat.len() || f.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("source must be nonnegative on every node".into()));
    }
    let rhs: Vec<f64> = f.iter().map(|v| v / (DIM - 1.0)).collect();
    let w = solve_poisson(h_hat, &rhs, s)?;
    let top = w.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::Construction("source produced no positive conformal factor".into()));
    }
    let unit: Vec<f64> = w.iter().map(|v| v / top).collect();
    let (amplitude, u, g, scal_min) = positive_member(h_hat, &unit, amp)?;
    let k = h_hat.difference(&g)?;
    Ok(ConformalMember {
        index: 0,
        amplitude,
        norm_lp: norm(&k, &NormSpec::lp(p), h_hat)?,
        norm_linf: k.max_abs(),
        scal_min,
        factor: u,
        metric: Some(g),
    })
}

/// `max |scal_{(1+σu)ĥ}/σ − (n−1)(−Δu)| / max |(n−1)Δu|` over interior nodes.
pub fn conformal_linearization_error(h_hat: &CohomMetric, u: &[f64], sigma: f64) -> Result<f64> {
    let su: Vec<f64> = u.iter().map(|v| sigma * v).collect();
    let g = conformal_metric(h_hat, &su)?;
    let lin: Vec<f64> = neg_laplacian(h_hat, u).iter().map(|v| (DIM - 1.0) * v).collect();
    let ex = scal_excess(&g, h_hat);
    let n = u.len();
    let (mut num, mut den): (f64, f64) = (0.0, 0.0);
    for i in 2..n - 2 {
        num = num.max((ex[i] / sigma - lin[i]).abs());
        den = den.max(lin[i].abs());
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    /// `scal_{g_0} ≥ 0` held on the grid.
    pub precondition: bool,
    pub initial_min: f64,
    /// `max_x scal_{g_0}`: the scale of the tolerance.
    pub scale: f64,
    /// `min_t min_x scal_{g_t}` over the stored times.
    pub min_scal: f64,
    /// Largest ratio of super-heat residual to its step budget.
    pub identity_ratio: f64,
    pub preserved: bool,
    #[serde(skip)]
    pub identity: Vec<ScalIdentity>,
}

/// Tolerance on `scal_{g_0} ≥ 0` relative to `max scal_{g_0}`.
pub const PRECONDITION_TOL: f64 = 1e-12;

/// Fixed-gauge flow from `g0` with reference `h_hat`; tracks `min scal` and the super-heat identity.
pub fn scal_positivity_run(g0: &CohomMetric, h_hat: &CohomMetric, t_end: f64, policy: DtPolicy) -> Result<PositivityReport> {
    let s0 = scal_excess(g0, h_hat);
    let initial_min = s0.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = s0.iter().copied().fold(0.0, f64::max);
    if initial_min < -PRECONDITION_TOL * scale.max(f64::MIN_POSITIVE) {
        return Ok(PositivityReport {
            precondition: false,
            initial_min,
            scale,
            min_scal: initial_min,
            identity_ratio: f64::NAN,
            preserved: false,
            identity: Vec::new(),
        });
    }
    let mut opts = RunOptions::new(policy);
    opts.scal_identity = true;
    let traj = run_fixed_gauge(g0, h_hat, t_end, &opts)?;
    let min_scal = traj.rows.iter().map(|r| r.scal_min).fold(f64::INFINITY, f64::min);
    let identity_ratio = traj
        .scal_identity
        .iter()
        .map(|s| if s.budget > 0.0 { s.residual / s.budget } else if s.residual == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(PositivityReport {
        precondition: true,
        initial_min,
        scale,
        min_scal,
        identity_ratio,
        preserved: min_scal >= -1e-6 * scale,
        identity: traj.scal_identity,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Exponents {
    /// `−n/(2p) − 1`: the upper bound of the contradiction argument.
    pub predicted_upper: f64,
    /// `−n/2`: the heat-kernel lower bound.
    pub heat_floor: f64,
    pub fitted: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RigidityReport {
    pub p: f64,
    /// `p < n/(n−2)`: rigidity is claimed there; above it counterexamples exist.
    pub rigidity_regime: bool,
    pub exponents: Exponents,
    pub positivity: bool,
    /// Coordinate `u` of the tracked point.
    pub tracked_at: f64,
    pub fit: Option<RateFit>,
    /// `"heat_floor"`, `"predicted_upper"`, or `"none"` when scal stays zero.
    pub follows: String,
    pub norms_by_i: Vec<f64>,
}

/// Flow from `g0 = ĥ(1+k)` and compare the decay of `scal(x₀, t)` with `−n/(2p) − 1` and `−n/2`.
pub fn rigidity_experiment(
    h_hat: &CohomMetric,
    k: &InvariantTensor,
    p: f64,
    t_end: f64,
    policy: DtPolicy,
    window: [f64; 2],
) -> Result<RigidityReport> {
    if !(p > 1.0) {
        return Err(Error::Domain(format!("p = {p} must exceed 1")));
    }
    let g0 = h_hat.perturbed(k)?;
    let s0 = scal_excess(&g0, h_hat);
    let scale = s0.iter().copied().fold(0.0, f64::max);
    if s0.iter().any(|&v| v < -PRECONDITION_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Domain("initial scalar curvature is negative somewhere".into()));
    }
    let lp = norm(k, &NormSpec::lp(p), h_hat)?;
    if !lp.is_finite() {
        return Err(Error::Domain("perturbation is not in L^p".into()));
    }
    let exps = |fitted| Exponents { predicted_upper: -DIM / (2.0 * p) - 1.0, heat_floor: -DIM / 2.0, fitted };
    let rigidity_regime = p < DIM / (DIM - 2.0);
    if scale == 0.0 {
        return Ok(RigidityReport {
            p,
            rigidity_regime,
            exponents: exps(None),
            positivity: true,
            tracked_at: 0.0,
            fit: None,
            follows: "none".into(),
            norms_by_i: vec![lp],
        });
    }
    let i0 = (0..s0.len()).max_by(|&a, &b| s0[a].total_cmp(&s0[b])).expect("nonempty grid");
    let mut opts = RunOptions::new(policy);
    opts.snapshot_times = crate::rates::log_times(window[0], window[1], 24);
    let traj = run_fixed_gauge(&g0, h_hat, t_end, &opts)?;
    let samples: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .filter(|s| s.t >= window[0] && s.t <= window[1])
        .map(|s| (s.t, scal_excess(&s.g, h_hat)[i0]))
        .collect();
    let positivity = traj.rows.iter().all(|r| r.scal_min >= -1e-6 * scale);
    let fit = fit_rate(&samples, false)?;
    let e = exps(Some(fit.exponent));
    let follows = if (fit.exponent - e.heat_floor).abs() <= (fit.exponent - e.predicted_upper).abs() {
        "heat_floor"
    } else {
        "predicted_upper"
    };
    Ok(RigidityReport {
        p,
        rigidity_regime,
        exponents: e,
        positivity,
        tracked_at: h_hat.grid().nodes()[i0],
        fit: Some(fit),
        follows: follows.into(),
        norms_by_i: vec![lp],
    })
}

/// `L^q` norm of a scalar field; convenience for reports.
pub fn scalar_lq(h: &CohomMetric, v: &[f64], q: f64) -> Result<f64> {
    field_lp(h, v, None, q)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::eguchi_hanson;
    use crate::grid::RadialGrid;

    fn eh(r: f64, n: usize) -> CohomMetric {
        eguchi_hanson(1.0, &Arc::new(RadialGrid::build(r, n, 1.006, 2).unwrap())).unwrap()
    }

    #[test]
    fn poisson_solve_inverts_the_laplacian() {
        let h = eh(100.0, 800);
        let s = source_tail(3.0);
        let f = tail_source(&h, 1.0, s);
        let w = solve_poisson(&h, &f, s).unwrap();
        let back = neg_laplacian(&h, &w);
        for i in 1..h.len() - 1 {
            assert!((back[i] - f[i]).abs() <= 1e-9 * f[i].abs().max(1e-30), "{i} {} {}", back[i], f[i]);
        }
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rigidity_regime_is_rejected() {
        let h = eh(60.0, 400);
        assert!(matches!(conformal_psc_sequence(&h, 2.0, 2), Err(Error::Domain(_))));
        assert!(matches!(conformal_psc_sequence(&h, 1.5, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_factor_is_not_positive() {
        let h = eh(60.0, 400);
        let g = conformal_metric(&h, &vec![0.0; h.len()]).unwrap();
        assert!(scal_excess(&g, &h).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_pocket_is_flagged() {
        let h = eh(60.0, 600);
        let s = source_tail(3.0);
        let f: Vec<f64> = h.grid().nodes().iter().map(|&u| -(-(u - 4.0).powi(2)).exp()).collect();
        let w = solve_poisson(&h, &f, s).unwrap();
        let u: Vec<f64> = w.iter().map(|v| 0.01 * v).collect();
        let g = conformal_metric(&h, &u).unwrap();
        let r = scal_positivity_run(&g, &h, 0.5, DtPolicy::fixed(0.1)).unwrap();
        assert!(!r.precondition && !r.preserved);
    }
}
