//! Ricci–de Turck flow `∂_t g = −2Ric(g) + L_{V(g,h)} g` for diagonal metrics.
//!
//! With `g = h(1+k)` and `y_a = 1/(1+k_a)` the flow reads, in the frame of a Ricci-flat `h`,
//!
//! * `∂_t k = −Δ_{L,g,h} k + F_1`                                  (non-divergence form)
//! * `∂_t k = −Δ_h k + ∇_a((g^{ab} − h^{ab})∇_b k) + F_4 + F_5`    (divergence form)
//!
//! where `T^c_ab = (∇_c k)_ab`, `F_1` is quadratic in `T`, `F_4 = F_1 + y_a y_b T^a_ab T^b`
//! and `F_5 = 2(1+k_i) Σ_a y_a k_a K_ia`. Time stepping treats `−∇(g^{-1}∇k) − 2Rm_h`
//! implicitly and the rest explicitly.

pub mod picard;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::{ModuliFamily, ModuliPoint};
use crate::geometry::{eh_family_tangent, ricci_tensor, scalar_curvature, CohomMetric, Frame, InvariantTensor};
use crate::grid::Parity;
use crate::norms::{covariant_derivative, norm, NormSpec};
use crate::operators::{
    deturck_field, inverse_components, lie_derivative, mixed_lichnerowicz_op, rough_coupling, rough_laplacian_op,
    BandOp, BandSpec, DtPolicy,
};
use crate::rates::{fit_rate, RateFit};

/// Allowed range of the frame components `1 + k_a` during a run.
pub const EQUIVALENCE: (f64, f64) = (0.5, 2.0);

type Tensor3 = [[[f64; 4]; 4]; 4];

/// Full 4×4 value of `F_1(g^{-1}, g^{-1}, ∇k, ∇k)` at one node.
pub fn f1_matrix(y: &[f64; 4], t: &Tensor3) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = 0.0;
            for a in 0..4 {
                for p in 0..4 {
                    let w = y[a] * y[p];
                    s += w
                        * (0.5 * t[i][p][a] * t[j][p][a] + t[a][j][p] * t[p][i][a]
                            - t[a][j][p] * t[a][i][p]
                            - t[j][p][a] * t[a][i][p]
                            - t[i][p][a] * t[a][j][p]);
                }
            }
            out[i][j] = s;
        }
    }
    out
}

/// `F_4 − F_1 = Σ_b y_b v_b T^b` with `v_b = Σ_a y_a T^a_ab`.
pub fn f4_extra(y: &[f64; 4], t: &Tensor3) -> [[f64; 4]; 4] {
    let v: [f64; 4] = std::array::from_fn(|b| (0..4).map(|a| y[a] * t[a][a][b]).sum());
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|b| y[b] * v[b] * t[b][i][j]).sum()))
}

/// Diagonal parts of `F_1` and `F_4` together with the largest off-diagonal entry.
pub fn quadratic_terms(h: &CohomMetric, fr: &Frame, k: &InvariantTensor) -> Result<(InvariantTensor, InvariantTensor, f64)> {
    let y = inverse_components(k)?;
    let t = covariant_derivative(h, fr, k)?;
    let mut f1 = InvariantTensor::zeros(h);
    let mut f4 = InvariantTensor::zeros(h);
    let mut off: f64 = 0.0;
    for i in 1..h.len() {
        let a = f1_matrix(&y[i], &t[i]);
        let b = f4_extra(&y[i], &t[i]);
        for r in 0..4 {
            f1.comps[r][i] = a[r][r];
            f4.comps[r][i] = a[r][r] + b[r][r];
            for c in 0..4 {
                if c != r {
                    off = off.max(a[r][c].abs()).max((a[r][c] + b[r][c]).abs());
                }
            }
        }
    }
    Ok((f1, f4, off))
}

/// `F_5 = 2(1+k_i) Σ_a y_a k_a K_ia`.
pub fn f5(h: &CohomMetric, fr: &Frame, k: &InvariantTensor) -> Result<InvariantTensor> {
    let y = inverse_components(k)?;
    let mut out = InvariantTensor::zeros(h);
    for i in 0..h.len() {
        for a in 0..4 {
            let s: f64 = (0..4).map(|b| y[i][b] * k.comps[b][i] * fr.ksec[i][a][b]).sum();
            out.comps[a][i] = 2.0 * (1.0 + k.comps[a][i]) * s;
        }
    }
    Ok(out)
}

fn close_boundary(h: &CohomMetric, mut x: InvariantTensor) -> InvariantTensor {
    let n = h.len();
    let (c1, c2) = h.grid().even_extrapolation();
    for a in 0..4 {
        x.comps[a][0] = c1 * x.comps[a][1] + c2 * x.comps[a][2];
        x.comps[a][n - 1] = 0.0;
    }
    x
}

fn check_equivalence(k: &InvariantTensor, t: f64) -> Result<()> {
    for c in &k.comps {
        for v in c {
            let g = 1.0 + v;
            if !(g >= EQUIVALENCE.0 && g <= EQUIVALENCE.1) {
                return Err(Error::FlowBlowup { t, reason: format!("frame component {g:.4} outside [0.5, 2]") });
            }
        }
    }
    Ok(())
}

/// `∂_t k` from the non-divergence form `−Δ_{L,g,h}k + F_1`.
pub fn rhs_rdt1(g: &CohomMetric, h: &CohomMetric) -> Result<InvariantTensor> {
    let k = h.difference(g)?;
    let fr = Frame::new(h);
    let op = mixed_lichnerowicz_op(h, &fr, &k)?;
    let (f1, _, _) = quadratic_terms(h, &fr, &k)?;
    Ok(close_boundary(h, f1.sub(&op.apply(&k))?))
}

/// Nodal divergence-form pieces `∇_a(z^{ab}∇_b ·)` with `z = y − 1`, as a banded operator (negated).
fn gauge_divergence_op(h: &CohomMetric, fr: &Frame, k: &InvariantTensor, y: &[[f64; 4]]) -> Result<BandOp> {
    let n = h.len();
    let dk0 = h.grid().d1(&k.comps[0], Parity::Even);
    let mut adv = vec![0.0; n];
    let mut local = vec![[[0.0; 4]; 4]; n];
    for i in 1..n {
        // ∂_u z_0 = −y_0² ∂_u k_0
        adv[i] = -y[i][0] * y[i][0] * dk0[i] / fr.f[i];
        let z: [f64; 4] = std::array::from_fn(|a| y[i][a] - 1.0);
        local[i] = rough_coupling(fr, i, &z);
    }
    let scale = y.iter().map(|v| v[0] - 1.0).collect();
    Ok(BandSpec { grid: h.grid(), cell: &fr.cell, half: fr.flux.clone(), node_scale: Some(scale), adv: Some(adv), local }
        .assemble())
}

/// `∂_t k` from the divergence form `−Δ_h k + ∇(z∇k) + F_4 + F_5`, assembled node by node.
pub fn rhs_rdt3(g: &CohomMetric, h: &CohomMetric) -> Result<InvariantTensor> {
    let k = h.difference(g)?;
    let fr = Frame::new(h);
    let y = inverse_components(&k)?;
    let rough = rough_laplacian_op(h, &fr).apply(&k);
    let div = gauge_divergence_op(h, &fr, &k, &y)?.apply(&k);
    let (_, f4, _) = quadratic_terms(h, &fr, &k)?;
    let f5 = f5(h, &fr, &k)?;
    let out = f4.axpy(1.0, &f5)?.sub(&rough)?.sub(&div)?;
    Ok(close_boundary(h, out))
}

/// `∂_t k` straight from `−2Ric(g) + L_{V(g,h)}g`, converted to the frame of `h`.
pub fn rhs_direct(g: &CohomMetric, h: &CohomMetric) -> Result<InvariantTensor> {
    let k = h.difference(g)?;
    let v = deturck_field(g, h)?;
    let lie = lie_derivative(&v, g)?;
    let ric = ricci_tensor(g);
    let mut out = InvariantTensor::zeros(h);
    for a in 0..4 {
        for i in 0..h.len() {
            out.comps[a][i] = (1.0 + k.comps[a][i]) * (lie.comps[a][i] - 2.0 * ric.comps[a][i]);
        }
    }
    Ok(close_boundary(h, out))
}

/// Implicit part `−∇(g^{-1}∇·) − 2Rm_h` in divergence form.
pub fn implicit_operator(h: &CohomMetric, fr: &Frame, k: &InvariantTensor) -> Result<BandOp> {
    let y = inverse_components(k)?;
    let n = h.len();
    let half: Vec<f64> = (0..n - 1).map(|i| fr.flux[i] * 0.5 * (y[i][0] + y[i + 1][0])).collect();
    let local = (0..n)
        .map(|i| {
            if i == 0 {
                return [[0.0; 4]; 4];
            }
            let mut l = rough_coupling(fr, i, &y[i]);
            for a in 0..4 {
                for b in 0..4 {
                    l[a][b] -= 2.0 * fr.ksec[i][a][b];
                }
            }
            l
        })
        .collect();
    Ok(BandSpec { grid: h.grid(), cell: &fr.cell, half, node_scale: None, adv: None, local }.assemble())
}

/// One IMEX step of the flow with reference `h_ref`; `t` is used for error reports only.
pub fn rdt_step_at(g: &CohomMetric, h_ref: &CohomMetric, dt: f64, t: f64) -> Result<CohomMetric> {
    let k = h_ref.difference(g)?;
    check_equivalence(&k, t)?;
    if k.max_abs() == 0.0 {
        return Ok(g.clone());
    }
    let fr = Frame::new(h_ref);
    let op = implicit_operator(h_ref, &fr, &k)?;
    let (_, f4, _) = quadratic_terms(h_ref, &fr, &k)?;
    let f5 = f5(h_ref, &fr, &k)?;
    let mut rm = InvariantTensor::zeros(h_ref);
    for i in 0..h_ref.len() {
        for a in 0..4 {
            rm.comps[a][i] = 2.0 * (0..4).map(|b| fr.ksec[i][a][b] * k.comps[b][i]).sum::<f64>();
        }
    }
    let explicit = close_boundary(h_ref, f4.axpy(1.0, &f5)?.sub(&rm)?);
    let rhs = k.axpy(dt, &explicit)?;
    let next = op.factor(1.0, dt)?.solve(&rhs)?;
    check_equivalence(&next, t + dt)?;
    h_ref.perturbed(&next).map_err(|e| Error::FlowBlowup { t: t + dt, reason: e.to_string() })
}

pub fn rdt_step(g: &CohomMetric, h_ref: &CohomMetric, dt: f64) -> Result<CohomMetric> {
    rdt_step_at(g, h_ref, dt, 0.0)
}

/// One stored row of a trajectory.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub l2_k: f64,
    pub l4_k: f64,
    pub linf_k: f64,
    pub w12_k: f64,
    pub v_c0: f64,
    pub ric_c0: f64,
    pub scal_min: f64,
    pub scal_max: f64,
    pub eps: f64,
    pub residual: f64,
}

pub const CSV_HEADER: &str = "t,L2_k,L4_k,Linf_k,W12_k,V_C0,Ric_C0,scal_min,scal_max,eps,residual";

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub g: CohomMetric,
    /// Reference metric at this time (`ĥ` before the handoff, `Φ(g)` after).
    pub h: CohomMetric,
    pub k: InvariantTensor,
    pub eps: f64,
    /// `∂_t ε` for moving-gauge runs.
    pub deps_dt: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub snapshots: Vec<Snapshot>,
    /// Super-heat residual and step budget per accepted step (when requested).
    pub scal_identity: Vec<ScalIdentity>,
    pub label: String,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let v = [r.t, r.l2_k, r.l4_k, r.linf_k, r.w12_k, r.v_c0, r.ric_c0, r.scal_min, r.scal_max, r.eps, r.residual];
            s.push_str(&v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-9 * t.max(1.0))
    }

    /// Samples `(t, column(row))` with `t` in `[lo, hi]`.
    pub fn series(&self, lo: f64, hi: f64, column: impl Fn(&TrajectoryRow) -> f64) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.t >= lo && r.t <= hi && r.t > 0.0).map(|r| (r.t, column(r))).collect()
    }
}

/// Options shared by the flow drivers.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub policy: DtPolicy,
    /// Times at which full snapshots are kept (the time grid lands on them exactly).
    pub snapshot_times: Vec<f64>,
    /// Check the scalar-curvature evolution identity at every step.
    pub scal_identity: bool,
}

impl RunOptions {
    pub fn new(policy: DtPolicy) -> Self {
        RunOptions { policy, snapshot_times: Vec::new(), scal_identity: false }
    }
}

/// Residual of `∂_t scal = Δ scal + 2|Ric|² + V(scal)` over one step, and its error budget.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalIdentity {
    pub t: f64,
    pub residual: f64,
    pub budget: f64,
    /// Spatial part of the budget: mismatch of the identity at the new time level.
    pub consistency: f64,
}

/// `Δ_g s + 2|Ric_g|² + V^u ∂_u s` for `s = scal_g − background`.
fn scal_evolution_rhs(g: &CohomMetric, h: &CohomMetric, background: &[f64]) -> Result<Vec<f64>> {
    let fr = Frame::new(g);
    let scal: Vec<f64> = scalar_curvature(g).iter().zip(background).map(|(a, b)| a - b).collect();
    let s = InvariantTensor::from_fn(g, |i, _| [scal[i]; 4]);
    let lap = rough_laplacian_op(g, &fr).apply(&s);
    let ric = ricci_tensor(g);
    let v = deturck_field(g, h)?;
    let ds = g.grid().d1(&scal, Parity::Even);
    Ok((0..g.len())
        .map(|i| {
            let r2: f64 = (0..4).map(|a| ric.comps[a][i].powi(2)).sum();
            -lap.comps[0][i] + 2.0 * r2 + v.comp[i] * ds[i]
        })
        .collect())
}

fn scal_directional(h: &CohomMetric, k: &InvariantTensor, w: &InvariantTensor) -> Result<Vec<f64>> {
    let scale = w.max_abs();
    if scale == 0.0 {
        return Ok(vec![0.0; h.len()]);
    }
    let s = f64::EPSILON.cbrt() / scale;
    let p = scalar_curvature(&h.perturbed(&k.axpy(s, w)?)?);
    let m = scalar_curvature(&h.perturbed(&k.axpy(-s, w)?)?);
    Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * s)).collect())
}

fn interior_sup(v: &[f64]) -> f64 {
    let n = v.len();
    v[2..n - 4].iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Super-heat residual for the step `g0 → g1` with reference `h`, and its budget.
pub fn scal_identity_check(g0: &CohomMetric, g1: &CohomMetric, h: &CohomMetric, dt: f64, t: f64) -> Result<ScalIdentity> {
    let bg = scalar_curvature(h);
    let s0: Vec<f64> = scalar_curvature(g0).iter().zip(&bg).map(|(a, b)| a - b).collect();
    let s1: Vec<f64> = scalar_curvature(g1).iter().zip(&bg).map(|(a, b)| a - b).collect();
    let r0 = scal_evolution_rhs(g0, h, &bg)?;
    let r1 = scal_evolution_rhs(g1, h, &bg)?;
    let res: Vec<f64> = (0..h.len()).map(|i| (s1[i] - s0[i]) / dt - 0.5 * (r0[i] + r1[i])).collect();
    // time part: scal along the discrete step minus scal along the exact right-hand side
    let k0 = h.difference(g0)?;
    let k1 = h.difference(g1)?;
    let d0 = rhs_direct(g0, h)?;
    let d1 = rhs_direct(g1, h)?;
    let step = k1.sub(&k0)?.scaled(1.0 / dt);
    let rho = step.sub(&d0.axpy(1.0, &d1)?.scaled(0.5))?;
    let time_part = scal_directional(h, &k1, &rho)?;
    let cons0 = scal_directional(h, &k0, &d0)?;
    let cons1 = scal_directional(h, &k1, &d1)?;
    let consistency: Vec<f64> =
        (0..h.len()).map(|i| 0.5 * ((cons0[i] - r0[i]) + (cons1[i] - r1[i]))).collect();
    let c = interior_sup(&consistency);
    let budget = interior_sup(&time_part) + c + dt * dt * interior_sup(&r1.iter().zip(&r0).map(|(a, b)| (a - b) / dt).collect::<Vec<_>>());
    Ok(ScalIdentity { t, residual: interior_sup(&res), budget, consistency: c })
}

/// Diagnostics row for `g` against reference `h`.
pub fn diagnostics_row(g: &CohomMetric, h: &CohomMetric, t: f64, eps: f64, residual: f64) -> Result<TrajectoryRow> {
    let k = h.difference(g)?;
    let v = deturck_field(g, h)?;
    let rg = ricci_tensor(g);
    let rh = ricci_tensor(h);
    let ric = (0..g.len())
        .map(|i| (0..4).map(|a| (rg.comps[a][i] - rh.comps[a][i]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let sg = scalar_curvature(g);
    let sh = scalar_curvature(h);
    let s: Vec<f64> = sg.iter().zip(&sh).map(|(a, b)| a - b).collect();
    Ok(TrajectoryRow {
        t,
        l2_k: norm(&k, &NormSpec::lp(2.0), h)?,
        l4_k: norm(&k, &NormSpec::lp(4.0), h)?,
        linf_k: k.max_abs(),
        w12_k: norm(&k, &NormSpec::wkp(1, 2.0), h)?,
        v_c0: v.c0_norm(g),
        ric_c0: ric,
        scal_min: s.iter().copied().fold(f64::INFINITY, f64::min),
        scal_max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        eps,
        residual,
    })
}

/// `‖(k1 − k0)/dt − rhs_direct(g1)‖_{L²(h)}`: backward-Euler defect of the step, with the
/// discrete Ricci residual of the background removed.
pub fn step_residual(g0: &CohomMetric, g1: &CohomMetric, h: &CohomMetric, dt: f64) -> Result<f64> {
    let k0 = h.difference(g0)?;
    let k1 = h.difference(g1)?;
    let rhs = rhs_direct(g1, h)?.sub(&rhs_direct(h, h)?)?;
    let r = k1.sub(&k0)?.scaled(1.0 / dt).sub(&rhs)?;
    norm(&r, &NormSpec::lp(2.0), h)
}

/// Flow with the fixed reference `h_hat` on `[0, t_end]`.
pub fn run_fixed_gauge(g0: &CohomMetric, h_hat: &CohomMetric, t_end: f64, opts: &RunOptions) -> Result<Trajectory> {
    opts.policy.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("t_end = {t_end} must be positive")));
    }
    let mut traj = Trajectory { label: format!("fixed gauge, {}", g0.label), ..Default::default() };
    let marks = opts.policy.steps(0.0, t_end, &opts.snapshot_times);
    let mut g = g0.clone();
    push(&mut traj, &g, h_hat, 0.0, h_hat.eps, 0.0, 0.0, opts)?;
    for w in marks.windows(2) {
        let dt = w[1] - w[0];
        let next = rdt_step_at(&g, h_hat, dt, w[0])?;
        if opts.scal_identity {
            traj.scal_identity.push(scal_identity_check(&g, &next, h_hat, dt, w[1])?);
        }
        let res = step_residual(&g, &next, h_hat, dt)?;
        g = next;
        push(&mut traj, &g, h_hat, w[1], h_hat.eps, 0.0, res, opts)?;
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn push(
    traj: &mut Trajectory,
    g: &CohomMetric,
    h: &CohomMetric,
    t: f64,
    eps: f64,
    deps: f64,
    res: f64,
    opts: &RunOptions,
) -> Result<()> {
    traj.rows.push(diagnostics_row(g, h, t, eps, res)?);
    let keep = t == 0.0 || opts.snapshot_times.iter().any(|&s| (s - t).abs() <= 1e-9 * s.max(1.0));
    if keep {
        traj.snapshots.push(Snapshot { t, g: g.clone(), h: h.clone(), k: h.difference(g)?, eps, deps_dt: deps });
    }
    Ok(())
}

/// Modified flow: reference `ĥ` (the family reference) on `[0, 1]`, then `Φ(g_t)` recomputed every step.
pub fn run_moving_gauge(g0: &CohomMetric, family: &ModuliFamily, t_end: f64, opts: &RunOptions) -> Result<Trajectory> {
    run_moving_gauge_from(g0, 0.0, family, t_end, opts)
}

/// As [`run_moving_gauge`] but starting at time `t0`.
pub fn run_moving_gauge_from(
    g0: &CohomMetric,
    t0: f64,
    family: &ModuliFamily,
    t_end: f64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    opts.policy.validate()?;
    if !(t_end > t0) {
        return Err(Error::Domain(format!("t_end = {t_end} must exceed t0 = {t0}")));
    }
    let h_hat = family.reference().clone();
    let mut cps = opts.snapshot_times.clone();
    cps.push(1.0);
    let marks = opts.policy.steps(t0, t_end, &cps);
    let mut traj = Trajectory { label: format!("moving gauge, {}", g0.label), ..Default::default() };
    let mut g = g0.clone();
    let mut point: Option<ModuliPoint> = None;
    if t0 >= 1.0 {
        let (p, _) = family.project(&g, h_hat.eps)?;
        point = Some(p);
    }
    let reference = |p: &Option<ModuliPoint>| p.as_ref().map_or(h_hat.clone(), |p| p.h.clone());
    let eps_of = |p: &Option<ModuliPoint>| p.as_ref().map_or(h_hat.eps, |p| p.eps);
    push(&mut traj, &g, &reference(&point), t0, eps_of(&point), 0.0, 0.0, opts)?;
    for w in marks.windows(2) {
        let dt = w[1] - w[0];
        let h = reference(&point);
        let next = rdt_step_at(&g, &h, dt, w[0])?;
        if opts.scal_identity {
            traj.scal_identity.push(scal_identity_check(&g, &next, &h, dt, w[1])?);
        }
        let res = step_residual(&g, &next, &h, dt)?;
        g = next;
        let mut deps = 0.0;
        if w[1] >= 1.0 - 1e-12 {
            let (p, _) = match &point {
                Some(p) => family.track(&g, p.eps)?,
                None => family.project(&g, h_hat.eps)?,
            };
            if let Some(old) = &point {
                deps = (p.eps - old.eps) / dt;
            }
            point = Some(p);
        }
        push(&mut traj, &g, &reference(&point), w[1], eps_of(&point), deps, res, opts)?;
    }
    Ok(traj)
}

/// A rate fit of one trajectory column over a time window.
#[derive(Debug, Clone, Serialize)]
pub struct ColumnFit {
    pub column: String,
    pub window: [f64; 2],
    pub fit: RateFit,
}

/// Rate fits of the named columns over `[lo, hi]`.
pub fn flow_diagnostics(traj: &Trajectory, columns: &[&str], window: [f64; 2]) -> Result<Vec<ColumnFit>> {
    columns
        .iter()
        .map(|&c| {
            let f = column_accessor(c)?;
            let s = traj.series(window[0], window[1], f);
            let fit = if s.iter().all(|p| p.1.abs() <= 1e-8) {
                RateFit::degenerate(window)
            } else {
                fit_rate(&s, false)?
            };
            Ok(ColumnFit { column: c.to_string(), window, fit })
        })
        .collect()
}

pub fn column_accessor(name: &str) -> Result<fn(&TrajectoryRow) -> f64> {
    Ok(match name {
        "L2_k" => |r| r.l2_k,
        "L4_k" => |r| r.l4_k,
        "Linf_k" => |r| r.linf_k,
        "W12_k" => |r| r.w12_k,
        "V_C0" => |r| r.v_c0,
        "Ric_C0" => |r| r.ric_c0,
        "scal_max" => |r| r.scal_max,
        "residual" => |r| r.residual,
        _ => return Err(Error::Config(format!("unknown trajectory column {name}"))),
    })
}

/// `∂_t h` in the frame of `h` for a family path with parameter velocity `deps`.
pub fn family_velocity(h: &CohomMetric, deps: f64) -> InvariantTensor {
    eh_family_tangent(h).scaled(deps)
}

#[cfg(test)]
mod tests;
