//! Picard iteration for the moving-gauge flow on `[1, t_end]`.
//!
//! An iterate is a path `(h_t, k_t)` on a geometric time mesh, with `h_t = h(ε(t))` a family
//! member and `k_t ⊥ ker Δ_{L,h_t}`. One application of the map `ψ`:
//!
//! * `ε'(t) = ε(1) + ∫_1^t D_gΦ(∂_s g) ds` with `∂_s g` the Ricci-de Turck velocity of the iterate
//!   (taken in the non-divergence form, which vanishes on the background exactly),
//! * `K_t = P_{1→t} K_1 + ∫_1^t P_{s→t} I_s ds` in the frame of a fixed `h∞`, where `P` runs
//!   `Δ_{L,h∞}` up to `max{t−1, 1}` and `Δ_{L,g,h}` on the last unit interval; the source is
//!   `I^B_s = F_1(k_s) − ∂_s h_s` on the last leg and `I^A_s = I^B_s + (Δ_{L,h∞} − Δ_{L,g_s,h_s})K_s`
//!   before it,
//! * `k'_t = (Π⊥_{h'_t,h∞})^{-1} Π⊥_{h∞} K_t`.
//!
//! The first iterate is `h ≡ h_1`, `k_t = e^{−(t−1)Δ_{L,h_1}} k_1`.

use std::sync::Arc;

use serde::Serialize;

use super::{diagnostics_row, family_velocity, quadratic_terms, rhs_rdt1, Snapshot, Trajectory};
use crate::error::{Error, Result};
use crate::gauge::{project, transfer_inverse, KernelBasis, ModuliFamily, ModuliPoint, Projection};
use crate::geometry::{CohomMetric, Frame, InvariantTensor};
use crate::norms::{trajectory_norms, NormSnapshot};
use crate::operators::{
    coupled_operator_in, duhamel, heat_trajectory, lichnerowicz_op, BandOp, DtPolicy, EvolutionSchedule, SnapshotPath,
    Stepper,
};

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub t_end: f64,
    /// Ratio of the geometric output mesh starting at `t = 1`.
    pub mesh_ratio: f64,
    pub max_iters: usize,
    /// Stop once the `Y`-distance between iterates is below `tol` times the `Y`-size of the iterate.
    pub tol: f64,
    pub policy: DtPolicy,
    /// Exponents `(q, r)` of the `Y` norm.
    pub q: f64,
    pub r: f64,
}

impl PicardConfig {
    pub fn new(t_end: f64, policy: DtPolicy) -> Self {
        PicardConfig { t_end, mesh_ratio: 1.1, max_iters: 8, tol: 1e-8, policy, q: 2.0, r: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.t_end > 1.0) || !(self.mesh_ratio > 1.0) || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Config(format!("invalid Picard configuration {self:?}")));
        }
        Ok(())
    }
}

/// `1, ρ, ρ², …` up to and including `t_end`.
pub fn picard_mesh(t_end: f64, ratio: f64) -> Vec<f64> {
    let mut m = vec![1.0];
    let mut t: f64 = 1.0;
    while t * ratio < t_end * (1.0 - 1e-9) {
        t *= ratio;
        m.push(t);
    }
    m.push(t_end);
    m
}

#[derive(Debug, Clone)]
pub struct PicardState {
    /// Number of applications of `ψ` performed.
    pub index: usize,
    pub mesh: Vec<f64>,
    pub eps: Vec<f64>,
    pub h: Vec<Arc<ModuliPoint>>,
    /// `k_t` in the frame of `h_t`.
    pub k: Vec<InvariantTensor>,
    /// `dε/dt` of the iterate.
    pub deps: Vec<f64>,
    /// `Y`-distance to the previous iterate.
    pub distance: f64,
    /// Contraction record: all `Y`-distances so far.
    pub record: Vec<f64>,
    pub eps_inf: f64,
    pub converged: bool,
}

/// Summary of a run, for reports.
#[derive(Debug, Clone, Serialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub eps_final: f64,
}

impl PicardState {
    pub fn ratios(&self) -> Vec<f64> {
        self.record.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }

    pub fn metric(&self, m: usize) -> Result<CohomMetric> {
        self.h[m].h.perturbed(&self.k[m])
    }

    /// `K_t = (g_t − h_t)` in the frame of `h∞`.
    fn in_limit_frame(&self, h_inf: &CohomMetric) -> Result<Vec<InvariantTensor>> {
        self.k.iter().zip(&self.h).map(|(k, p)| k.reframe(&p.h, h_inf)).collect()
    }
}

fn interp(mesh: &[f64], vals: &[InvariantTensor], t: f64) -> Result<InvariantTensor> {
    let n = mesh.len();
    if t <= mesh[0] {
        return Ok(vals[0].clone());
    }
    if t >= mesh[n - 1] {
        return Ok(vals[n - 1].clone());
    }
    let j = mesh.partition_point(|&x| x <= t).clamp(1, n - 1);
    let w = (t - mesh[j - 1]) / (mesh[j] - mesh[j - 1]);
    vals[j - 1].scaled(1.0 - w).axpy(w, &vals[j])
}

struct Limit {
    h: Arc<ModuliPoint>,
    basis: Arc<KernelBasis>,
    op: BandOp,
}

/// Per-mesh-time data of an iterate needed by `ψ`.
struct Coefficients {
    ops: Vec<BandOp>,
    src_a: Vec<InvariantTensor>,
    src_b: Vec<InvariantTensor>,
    deps: Vec<f64>,
}

fn coefficients(family: &ModuliFamily, x: &PicardState, lim: &Limit) -> Result<Coefficients> {
    let h_inf = &lim.h.h;
    let kk = x.in_limit_frame(h_inf)?;
    let mut out = Coefficients { ops: Vec::new(), src_a: Vec::new(), src_b: Vec::new(), deps: Vec::new() };
    for (m, p) in x.h.iter().enumerate() {
        let h = &p.h;
        let g = x.metric(m)?;
        let fr = Frame::new(h);
        let (f1, _, _) = quadratic_terms(h, &fr, &x.k[m])?;
        let w = rhs_rdt1(&g, h)?;
        let deps = family.d_phi(&g, x.eps[m], &w)?;
        let dh = family_velocity(h, deps).reframe(h, h_inf)?;
        let op = coupled_operator_in(&g, h, h_inf)?;
        let b = f1.reframe(h, h_inf)?.sub(&dh)?;
        let a = b.axpy(1.0, &lim.op.apply(&kk[m]))?.sub(&op.apply(&kk[m]))?;
        out.ops.push(op);
        out.src_a.push(a);
        out.src_b.push(b);
        out.deps.push(deps);
    }
    Ok(out)
}

/// One application of `ψ`.
fn psi(family: &ModuliFamily, x: &PicardState, lim: &Limit, k1: &InvariantTensor, cfg: &PicardConfig) -> Result<PicardState> {
    let mesh = &x.mesh;
    let h_inf = &lim.h.h;
    let c = coefficients(family, x, lim)?;

    let mut eps = vec![x.eps[0]];
    for m in 1..mesh.len() {
        let dt = mesh[m] - mesh[m - 1];
        eps.push(eps[m - 1] + 0.5 * dt * (c.deps[m - 1] + c.deps[m]));
    }

    // shared Δ_{L,h∞} leg, stopped at every t_m − 1 > 1
    let starts: Vec<f64> = mesh.iter().map(|&t| (t - 1.0).max(1.0)).collect();
    let k1_inf = k1.reframe(&x.h[0].h, h_inf)?;
    let mut at_start = vec![k1_inf.clone(); mesh.len()];
    let last = starts.iter().copied().fold(1.0, f64::max);
    if last > 1.0 {
        let marks = cfg.policy.steps(1.0, last, &starts);
        let mut stepper = Stepper::new(&lim.op);
        let mut k = k1_inf.clone();
        for w in marks.windows(2) {
            let dt = w[1] - w[0];
            k = stepper.step(&k.axpy(dt, &interp(mesh, &c.src_a, w[1])?)?, dt)?;
            for (m, &s) in starts.iter().enumerate() {
                if (s - w[1]).abs() <= 1e-12 * s {
                    at_start[m] = k.clone();
                }
            }
        }
    }

    let path = SnapshotPath::from_ops(mesh.clone(), c.ops)?;
    let src = |t: f64| interp(mesh, &c.src_b, t);
    let mut h = Vec::with_capacity(mesh.len());
    let mut k = Vec::with_capacity(mesh.len());
    for m in 0..mesh.len() {
        let (p, b) = family.member(eps[m])?;
        let kt = if m == 0 {
            k1_inf.clone()
        } else {
            let sched = EvolutionSchedule::new(starts[m], mesh[m], cfg.policy)?;
            duhamel(&sched, &path, h_inf, &at_start[m], Some(&src))?
        };
        let kbar = project(h_inf, &lim.basis, &kt, Projection::Perp)?;
        k.push(transfer_inverse(&p.h, h_inf, (&b, &lim.basis), &kbar)?);
        h.push(p);
    }
    Ok(PicardState {
        index: x.index + 1,
        mesh: mesh.clone(),
        eps,
        h,
        k,
        deps: c.deps,
        distance: f64::NAN,
        record: x.record.clone(),
        eps_inf: x.eps_inf,
        converged: false,
    })
}

fn norm_snapshots(x: &PicardState, lim: &Limit, base: Option<&PicardState>) -> Result<Vec<NormSnapshot>> {
    let h_inf = &lim.h.h;
    let mut out = Vec::with_capacity(x.mesh.len());
    for m in 0..x.mesh.len() {
        let mut k = x.k[m].reframe(&x.h[m].h, h_inf)?;
        let mut dev = h_inf.difference(&x.h[m].h)?;
        let mut dh = family_velocity(&x.h[m].h, x.deps[m]).reframe(&x.h[m].h, h_inf)?;
        if let Some(b) = base {
            k = k.sub(&b.k[m].reframe(&b.h[m].h, h_inf)?)?;
            dev = dev.sub(&h_inf.difference(&b.h[m].h)?)?;
            dh = dh.sub(&family_velocity(&b.h[m].h, b.deps[m]).reframe(&b.h[m].h, h_inf)?)?;
        }
        out.push(NormSnapshot { t: x.mesh[m], h: h_inf.clone(), k, h_dev: dev, dh_dt: dh });
    }
    Ok(out)
}

fn y_norm(x: &PicardState, lim: &Limit, base: Option<&PicardState>, cfg: &PicardConfig) -> Result<f64> {
    Ok(trajectory_norms(&norm_snapshots(x, lim, base)?, &lim.h.h, cfg.q, cfg.r)?.y)
}

/// Fixed point of `ψ` from `(h(ε_1), k_1)` at `t = 1`, with `h∞ = h(ε∞ guess)`.
///
/// Fails with [`Error::NonContraction`] when three successive distance ratios are all `≥ 1`.
pub fn picard_solve(
    family: &ModuliFamily,
    eps1: f64,
    k1: &InvariantTensor,
    eps_inf_guess: f64,
    cfg: &PicardConfig,
) -> Result<(PicardState, Trajectory)> {
    cfg.validate()?;
    let (p1, b1) = family.member(eps1)?;
    k1.check_reference(&p1.h)?;
    let (pinf, binf) = family.member(eps_inf_guess)?;
    let fr = Frame::new(&pinf.h);
    let lim = Limit { op: lichnerowicz_op(&pinf.h, &fr), h: pinf, basis: binf };
    let off = project(&p1.h, &b1, k1, Projection::Parallel)?.max_abs();
    if off > 1e-8 * k1.max_abs().max(1e-300) {
        return Err(Error::Contract(format!("k1 is not kernel-orthogonal (parallel part {off:.3e})")));
    }

    let mesh = picard_mesh(cfg.t_end, cfg.mesh_ratio);
    let shifted: Vec<f64> = mesh.iter().map(|t| t - 1.0).collect();
    let heat = heat_trajectory(&p1.h, k1, &shifted, &cfg.policy)?;
    let mut x = PicardState {
        index: 1,
        eps: vec![eps1; mesh.len()],
        h: vec![p1.clone(); mesh.len()],
        k: heat,
        deps: vec![0.0; mesh.len()],
        mesh,
        distance: f64::INFINITY,
        record: Vec::new(),
        eps_inf: eps_inf_guess,
        converged: false,
    };
    loop {
        let mut next = psi(family, &x, &lim, k1, cfg)?;
        let d = y_norm(&next, &lim, Some(&x), cfg)?;
        let size = y_norm(&next, &lim, None, cfg)?;
        next.distance = d;
        next.record.push(d);
        x = next;
        if d <= cfg.tol * size {
            x.converged = true;
            break;
        }
        let r = x.ratios();
        if r.len() >= 3 && r[r.len() - 3..].iter().all(|&q| q >= 1.0) {
            return Err(Error::NonContraction(x.record.clone()));
        }
        if x.index > cfg.max_iters {
            break;
        }
    }
    let traj = trajectory_of(&x)?;
    Ok((x, traj))
}

impl PicardState {
    pub fn summary(&self) -> PicardSummary {
        PicardSummary {
            iterations: self.index - 1,
            distances: self.record.clone(),
            ratios: self.ratios(),
            converged: self.converged,
            eps_final: *self.eps.last().expect("nonempty mesh"),
        }
    }
}

fn trajectory_of(x: &PicardState) -> Result<Trajectory> {
    let mut traj = Trajectory { label: "picard fixed point".into(), ..Default::default() };
    for m in 0..x.mesh.len() {
        let h = &x.h[m].h;
        let g = x.metric(m)?;
        traj.rows.push(diagnostics_row(&g, h, x.mesh[m], x.eps[m], 0.0)?);
        traj.snapshots.push(Snapshot { t: x.mesh[m], g, h: h.clone(), k: x.k[m].clone(), eps: x.eps[m], deps_dt: x.deps[m] });
    }
    Ok(traj)
}
