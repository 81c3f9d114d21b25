//! Linear operators on diagonal invariant tensors.
//!
//! Sign convention: `Δ_L = ∇*∇ − 2Rm` is nonnegative, heat flow is `∂_t k + Δ_L k = 0`.
//!
//! Second-order operators are assembled as block-banded matrices over the nodes:
//! a finite-volume radial part (scalar per component) plus a 4×4 zero-order block
//! per node. Node 0 is closed by even extrapolation folded into row 1 and the
//! outer node is homogeneous Dirichlet.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{ricci_tensor, CohomMetric, Frame, InvariantTensor};
use crate::grid::{Parity, RadialGrid};

/// Coordinate component `V^u` of a radial vector field `V^u ∂_u`. Odd in `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialVector {
    pub comp: Vec<f64>,
}

impl RadialVector {
    pub fn zeros(n: usize) -> Self {
        RadialVector { comp: vec![0.0; n] }
    }

    pub fn from_fn(grid: &RadialGrid, f: impl Fn(f64) -> f64) -> Self {
        RadialVector { comp: grid.nodes().iter().map(|&u| f(u)).collect() }
    }

    /// Pointwise length `√f |V^u|` measured in `metric`.
    pub fn frame_norm(&self, metric: &CohomMetric) -> Vec<f64> {
        let phi0 = &metric.log_parts()[0];
        self.comp.iter().zip(phi0).map(|(v, p)| (0.5 * p).exp() * v.abs()).collect()
    }

    pub fn c0_norm(&self, metric: &CohomMetric) -> f64 {
        self.frame_norm(metric).into_iter().fold(0.0, f64::max)
    }
}

/// `ℓ_a = ∂_u ln comp_a` split as `φ_a' + 2m_a/u`; returns `φ'` and `m/u` (with `m/u → 0` at `u = 0`).
fn log_slopes(g: &CohomMetric) -> ([Vec<f64>; 4], [Vec<f64>; 4]) {
    let grid = g.grid();
    let u = grid.nodes();
    let m = g.collapse();
    let dphi = std::array::from_fn(|a| grid.d1(&g.log_parts()[a], Parity::Even));
    let mu = std::array::from_fn(|a| {
        u.iter().map(|&x| if x > 0.0 && m[a] == 1 { 1.0 / x } else { 0.0 }).collect()
    });
    (dphi, mu)
}

/// `L_X g` for radial `X`, in the frame of `g`.
pub fn lie_derivative(x: &RadialVector, g: &CohomMetric) -> Result<InvariantTensor> {
    if x.comp.len() != g.len() {
        return Err(Error::Contract("vector field length does not match grid".into()));
    }
    let grid = g.grid();
    let u = grid.nodes();
    let m = g.collapse();
    let dx = grid.d1(&x.comp, Parity::Odd);
    let (dphi, _) = log_slopes(g);
    let mut out = InvariantTensor::zeros(g);
    for i in 0..g.len() {
        let xu = if i == 0 { dx[0] } else { x.comp[i] / u[i] };
        out.comps[0][i] = x.comp[i] * dphi[0][i] + 2.0 * dx[i];
        for a in 1..4 {
            out.comps[a][i] = x.comp[i] * dphi[a][i] + 2.0 * m[a] as f64 * xu;
        }
    }
    Ok(out)
}

/// Radial component of `V(g,h)^k = g^{ij}(Γ(g)^k_ij − Γ(h)^k_ij)`.
pub fn deturck_field(g: &CohomMetric, h: &CohomMetric) -> Result<RadialVector> {
    g.same_grid(h)?;
    if g.collapse() != h.collapse() {
        return Err(Error::Contract("metrics have different collapse patterns".into()));
    }
    let (dg, mu) = log_slopes(g);
    let (dh, _) = log_slopes(h);
    let pg = g.log_parts();
    let ph = h.log_parts();
    let mut v = vec![0.0; g.len()];
    for i in 1..g.len() {
        let inv_g = (-pg[0][i]).exp();
        let inv_h = (-ph[0][i]).exp();
        let mut first = dg[0][i] - dh[0][i];
        let mut second = 0.0;
        for c in 1..4 {
            let two_m = 2.0 * mu[c][i];
            first -= dg[c][i] + two_m;
            second += (dh[c][i] + two_m) * (ph[c][i] - pg[c][i]).exp();
        }
        v[i] = 0.5 * inv_g * first + 0.5 * inv_h * second;
    }
    Ok(RadialVector { comp: v })
}

/// Exact linearization `DV(k) = d/ds V(h(1+sk), h)` at `s = 0`.
pub fn deturck_linear(h: &CohomMetric, k: &InvariantTensor) -> Result<RadialVector> {
    k.check_reference(h)?;
    let grid = h.grid();
    let (dphi, mu) = log_slopes(h);
    let dk: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d1(&k.comps[a], Parity::Even));
    let p0 = &h.log_parts()[0];
    let mut v = vec![0.0; h.len()];
    for i in 1..h.len() {
        let ell: [f64; 4] = std::array::from_fn(|c| dphi[c][i] + 2.0 * mu[c][i]);
        let mut s = dk[0][i] + k.comps[0][i] * (ell[1] + ell[2] + ell[3]);
        for c in 1..4 {
            s -= dk[c][i] + ell[c] * k.comps[c][i];
        }
        v[i] = 0.5 * (-p0[i]).exp() * s;
    }
    Ok(RadialVector { comp: v })
}

fn fd_step(k: &InvariantTensor) -> Option<f64> {
    let scale = k.max_abs();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    Some(f64::EPSILON.cbrt() / scale)
}

/// `DRic_h(k)` by a central difference of the full Ricci tensor, in the frame of `h`.
pub fn linearized_ricci(h: &CohomMetric, k: &InvariantTensor) -> Result<InvariantTensor> {
    k.check_reference(h)?;
    let Some(s) = fd_step(k) else {
        return Ok(InvariantTensor::zeros(h));
    };
    let plus = h.perturbed(&k.scaled(s))?;
    let minus = h.perturbed(&k.scaled(-s))?;
    let rp = ricci_tensor(&plus);
    let rm = ricci_tensor(&minus);
    let mut out = InvariantTensor::zeros(h);
    for a in 0..4 {
        for i in 0..h.len() {
            let kp = 1.0 + s * k.comps[a][i];
            let km = 1.0 - s * k.comps[a][i];
            out.comps[a][i] = (rp.comps[a][i] * kp - rm.comps[a][i] * km) / (2.0 * s);
        }
    }
    Ok(out)
}

/// `DV_h(k)` by a central difference of [`deturck_field`].
pub fn deturck_linearized(h: &CohomMetric, k: &InvariantTensor) -> Result<RadialVector> {
    k.check_reference(h)?;
    let Some(s) = fd_step(k) else {
        return Ok(RadialVector::zeros(h.len()));
    };
    let vp = deturck_field(&h.perturbed(&k.scaled(s))?, h)?;
    let vm = deturck_field(&h.perturbed(&k.scaled(-s))?, h)?;
    let comp = vp.comp.iter().zip(&vm.comp).map(|(a, b)| (a - b) / (2.0 * s)).collect();
    Ok(RadialVector { comp })
}

/// Block-banded operator: `(A k)_i = lower_i∘k_{i−1} + diag_i k_i + upper_i∘k_{i+1}` on rows `1..n−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandOp {
    lower: Vec<[f64; 4]>,
    diag: Vec<Matrix4<f64>>,
    upper: Vec<[f64; 4]>,
    extrap: (f64, f64),
}

/// Ingredients of a radial second-order operator before banding.
pub(crate) struct BandSpec<'a> {
    pub grid: &'a RadialGrid,
    pub cell: &'a [f64],
    /// Flux coefficients at half nodes (length `n−1`).
    pub half: Vec<f64>,
    pub node_scale: Option<Vec<f64>>,
    /// Coefficient of `−∂_u k` per node.
    pub adv: Option<Vec<f64>>,
    pub local: Vec<[[f64; 4]; 4]>,
}

impl BandSpec<'_> {
    pub fn assemble(self) -> BandOp {
        let n = self.grid.len();
        let jac = self.grid.jacobian();
        let mut lower = vec![[0.0; 4]; n];
        let mut upper = vec![[0.0; 4]; n];
        let mut diag = vec![Matrix4::zeros(); n];
        for i in 1..n - 1 {
            let s = self.node_scale.as_ref().map_or(1.0, |v| v[i]) / self.cell[i];
            let a = self.adv.as_ref().map_or(0.0, |v| v[i]) / (2.0 * jac[i]);
            let lo = -s * self.half[i - 1] + a;
            let up = -s * self.half[i] - a;
            let mid = s * (self.half[i] + self.half[i - 1]);
            lower[i] = [lo; 4];
            upper[i] = [up; 4];
            let mut d = Matrix4::from_fn(|r, c| self.local[i][r][c]);
            for c in 0..4 {
                d[(c, c)] += mid;
            }
            diag[i] = d;
        }
        let extrap = self.grid.even_extrapolation();
        let mut op = BandOp { lower, diag, upper, extrap };
        op.fold_origin();
        op
    }
}

impl BandOp {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    fn fold_origin(&mut self) {
        let (c1, c2) = self.extrap;
        for c in 0..4 {
            let l = self.lower[1][c];
            self.diag[1][(c, c)] += c1 * l;
            self.upper[1][c] += c2 * l;
            self.lower[1][c] = 0.0;
        }
    }

    pub fn apply(&self, k: &InvariantTensor) -> InvariantTensor {
        let n = self.len();
        let mut out = k.scaled(0.0);
        for i in 1..n - 1 {
            let x = Vector4::from_fn(|a, _| k.comps[a][i]);
            let y = self.diag[i] * x;
            for a in 0..4 {
                out.comps[a][i] =
                    y[a] + self.lower[i][a] * k.comps[a][i - 1] + self.upper[i][a] * k.comps[a][i + 1];
            }
        }
        let (c1, c2) = self.extrap;
        for a in 0..4 {
            out.comps[a][0] = c1 * out.comps[a][1] + c2 * out.comps[a][2];
            out.comps[a][n - 1] = 0.0;
        }
        out
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &BandOp, beta: f64) -> BandOp {
        let n = self.len();
        BandOp {
            lower: (0..n).map(|i| std::array::from_fn(|a| alpha * self.lower[i][a] + beta * other.lower[i][a])).collect(),
            diag: (0..n).map(|i| self.diag[i] * alpha + other.diag[i] * beta).collect(),
            upper: (0..n).map(|i| std::array::from_fn(|a| alpha * self.upper[i][a] + beta * other.upper[i][a])).collect(),
            extrap: self.extrap,
        }
    }

    /// Adds a node-local 4×4 block.
    pub fn add_local(&mut self, local: &[[[f64; 4]; 4]]) {
        for i in 1..self.len() - 1 {
            self.diag[i] += Matrix4::from_fn(|r, c| local[i][r][c]);
        }
    }

    /// `S A S^{-1}` with `S = diag(s)`: the same operator acting on components rescaled by `s`.
    pub fn conjugate(&self, s: &[Vec<f64>; 4]) -> BandOp {
        let n = self.len();
        let mut out = self.clone();
        for i in 1..n - 1 {
            for a in 0..4 {
                out.lower[i][a] *= s[a][i] / s[a][i - 1];
                out.upper[i][a] *= s[a][i] / s[a][i + 1];
                for b in 0..4 {
                    out.diag[i][(a, b)] *= s[a][i] / s[b][i];
                }
            }
        }
        out
    }

    /// LU factors of `α I + β A` on the active rows.
    pub fn factor(&self, alpha: f64, beta: f64) -> Result<BandLu> {
        let n = self.len();
        let mut inv = vec![Matrix4::zeros(); n];
        let mut mult = vec![Matrix4::zeros(); n];
        let up: Vec<[f64; 4]> = self.upper.iter().map(|u| std::array::from_fn(|a| beta * u[a])).collect();
        for i in 1..n - 1 {
            let mut d = self.diag[i] * beta + Matrix4::identity() * alpha;
            if i > 1 {
                let mut w = inv[i - 1];
                for r in 0..4 {
                    let l = beta * self.lower[i][r];
                    for c in 0..4 {
                        w[(r, c)] *= l;
                    }
                }
                for r in 0..4 {
                    for c in 0..4 {
                        d[(r, c)] -= w[(r, c)] * up[i - 1][c];
                    }
                }
                mult[i] = w;
            }
            inv[i] = d.try_inverse().ok_or_else(|| Error::Numeric(format!("singular pivot block at node {i}")))?;
        }
        Ok(BandLu { inv, mult, up, extrap: self.extrap })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    inv: Vec<Matrix4<f64>>,
    mult: Vec<Matrix4<f64>>,
    up: Vec<[f64; 4]>,
    extrap: (f64, f64),
}

impl BandLu {
    /// Solves with homogeneous Dirichlet data at the outer node; node 0 follows by extrapolation.
    pub fn solve(&self, rhs: &InvariantTensor) -> Result<InvariantTensor> {
        let n = self.inv.len();
        let mut b: Vec<Vector4<f64>> = (0..n).map(|i| Vector4::from_fn(|a, _| rhs.comps[a][i])).collect();
        for i in 2..n - 1 {
            let prev = b[i - 1];
            b[i] -= self.mult[i] * prev;
        }
        let mut x = vec![Vector4::zeros(); n];
        for i in (1..n - 1).rev() {
            let mut r = b[i];
            if i + 1 < n - 1 {
                for a in 0..4 {
                    r[a] -= self.up[i][a] * x[i + 1][a];
                }
            }
            x[i] = self.inv[i] * r;
        }
        let mut out = rhs.scaled(0.0);
        let (c1, c2) = self.extrap;
        for a in 0..4 {
            for i in 1..n - 1 {
                out.comps[a][i] = x[i][a];
            }
            out.comps[a][0] = c1 * x[1][a] + c2 * x[2][a];
            out.comps[a][n - 1] = 0.0;
        }
        if out.comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite implicit solve".into()));
        }
        Ok(out)
    }
}

/// `W_id = 2 Σ_c w_c ω(c,i,d)²`: zero-order coupling of the weighted rough Laplacian.
pub(crate) fn rough_coupling(fr: &Frame, i: usize, w: &[f64; 4]) -> [[f64; 4]; 4] {
    let om = fr.connection(i);
    let mut out = [[0.0; 4]; 4];
    for a in 0..4 {
        for d in 0..4 {
            if d == a {
                continue;
            }
            let s: f64 = (0..4).map(|c| w[c] * om[c][a][d] * om[c][a][d]).sum();
            out[a][d] -= 2.0 * s;
            out[a][a] += 2.0 * s;
        }
    }
    out
}

/// Rough Laplacian `∇*∇` of `h` on diagonal tensors.
pub fn rough_laplacian_op(h: &CohomMetric, fr: &Frame) -> BandOp {
    let local = (0..h.len())
        .map(|i| if i == 0 { [[0.0; 4]; 4] } else { rough_coupling(fr, i, &[1.0; 4]) })
        .collect();
    BandSpec { grid: h.grid(), cell: &fr.cell, half: fr.flux.clone(), node_scale: None, adv: None, local }
        .assemble()
}

/// `Δ_L = ∇*∇ − 2Rm` of `h` as a banded operator in the frame of `h`.
pub fn lichnerowicz_op(h: &CohomMetric, fr: &Frame) -> BandOp {
    let mut op = rough_laplacian_op(h, fr);
    let rm: Vec<[[f64; 4]; 4]> = fr
        .ksec
        .iter()
        .map(|k| std::array::from_fn(|a| std::array::from_fn(|b| -2.0 * k[a][b])))
        .collect();
    op.add_local(&rm);
    op
}

/// `Δ_{L,h} k`.
pub fn lichnerowicz(h: &CohomMetric, k: &InvariantTensor) -> Result<InvariantTensor> {
    k.check_reference(h)?;
    let fr = Frame::new(h);
    Ok(lichnerowicz_op(h, &fr).apply(k))
}

/// Inverse frame components `y_a = 1/(1+k_a)` of `g = h(1+k)`.
pub(crate) fn inverse_components(kg: &InvariantTensor) -> Result<Vec<[f64; 4]>> {
    (0..kg.len())
        .map(|i| {
            let mut y = [0.0; 4];
            for a in 0..4 {
                let g = 1.0 + kg.comps[a][i];
                if !(g > 0.0) {
                    return Err(Error::Domain(format!("metric component 1+k = {g} not positive at node {i}")));
                }
                y[a] = 1.0 / g;
            }
            Ok(y)
        })
        .collect()
}

/// `Δ_{L,g,h} k = −g^{ab}∇²_{ab}k − (curvature terms)`, `g = h(1+kg)`, in the frame of `h`.
pub fn mixed_lichnerowicz_op(h: &CohomMetric, fr: &Frame, kg: &InvariantTensor) -> Result<BandOp> {
    kg.check_reference(h)?;
    let n = h.len();
    let y = inverse_components(kg)?;
    let mut adv = vec![0.0; n];
    let mut local = vec![[[0.0; 4]; 4]; n];
    for i in 1..n {
        let sf = fr.f[i].sqrt();
        adv[i] = (1..4).map(|c| (y[i][c] - y[i][0]) * fr.h[i][c]).sum::<f64>() / sf;
        let mut l = rough_coupling(fr, i, &y[i]);
        for a in 0..4 {
            let ga = 1.0 + kg.comps[a][i];
            for b in 0..4 {
                l[a][b] -= 2.0 * ga * y[i][b] * fr.ksec[i][a][b];
            }
        }
        local[i] = l;
    }
    let scale = y.iter().map(|v| v[0]).collect();
    Ok(BandSpec {
        grid: h.grid(),
        cell: &fr.cell,
        half: fr.flux.clone(),
        node_scale: Some(scale),
        adv: Some(adv),
        local,
    }
    .assemble())
}

pub fn mixed_lichnerowicz(g: &CohomMetric, h: &CohomMetric, k: &InvariantTensor) -> Result<InvariantTensor> {
    k.check_reference(h)?;
    let fr = Frame::new(h);
    let kg = h.difference(g)?;
    Ok(mixed_lichnerowicz_op(h, &fr, &kg)?.apply(k))
}

/// Step-size policy for implicit time stepping: `dt = clamp(rel·t, dt_min, dt_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtPolicy {
    pub dt_min: f64,
    pub dt_max: f64,
    pub rel: f64,
}

impl DtPolicy {
    pub fn fixed(dt: f64) -> Self {
        DtPolicy { dt_min: dt, dt_max: dt, rel: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min && self.rel >= 0.0) {
            return Err(Error::Config(format!("invalid step policy {self:?}")));
        }
        Ok(())
    }

    pub fn step_at(&self, t: f64) -> f64 {
        (self.rel * t).clamp(self.dt_min, self.dt_max)
    }

    /// Step boundaries from `t0` to `t1`, landing exactly on every checkpoint in between.
    pub fn steps(&self, t0: f64, t1: f64, checkpoints: &[f64]) -> Vec<f64> {
        let mut out = vec![t0];
        let mut t = t0;
        let mut cps: Vec<f64> = checkpoints.iter().copied().filter(|&c| c > t0 && c < t1).collect();
        cps.push(t1);
        cps.sort_by(f64::total_cmp);
        for c in cps {
            while t < c - 1e-12 * c.abs().max(1.0) {
                let dt = self.step_at(t);
                let next = if t + dt > c - 1e-9 * dt { c } else { t + dt };
                out.push(next);
                t = next;
            }
        }
        out
    }
}

/// Backward-Euler propagator for a constant operator, reusing factors per step size.
pub(crate) struct Stepper<'a> {
    op: &'a BandOp,
    cache: Option<(f64, BandLu)>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(op: &'a BandOp) -> Self {
        Stepper { op, cache: None }
    }

    pub(crate) fn step(&mut self, k: &InvariantTensor, dt: f64) -> Result<InvariantTensor> {
        let hit = matches!(&self.cache, Some((d, _)) if (d - dt).abs() <= 1e-14 * dt);
        if !hit {
            self.cache = Some((dt, self.op.factor(1.0, dt)?));
        }
        self.cache.as_ref().expect("factor cached").1.solve(k)
    }
}

/// `e^{−tΔ_{L,h}} k0` by backward Euler.
pub fn heat_semigroup(h: &CohomMetric, k0: &InvariantTensor, t: f64, policy: &DtPolicy) -> Result<InvariantTensor> {
    Ok(heat_trajectory(h, k0, &[t], policy)?.pop().expect("one snapshot"))
}

/// Heat flow snapshots at increasing `times` (each `≥ 0`).
pub fn heat_trajectory(
    h: &CohomMetric,
    k0: &InvariantTensor,
    times: &[f64],
    policy: &DtPolicy,
) -> Result<Vec<InvariantTensor>> {
    k0.check_reference(h)?;
    policy.validate()?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::Domain("snapshot times must be nonnegative and increasing".into()));
    }
    let fr = Frame::new(h);
    let op = lichnerowicz_op(h, &fr);
    let mut stepper = Stepper::new(&op);
    let mut out = Vec::with_capacity(times.len());
    let mut k = k0.clone();
    let mut t = 0.0;
    for &target in times {
        if target > t {
            let marks = policy.steps(t, target, &[]);
            for w in marks.windows(2) {
                k = stepper.step(&k, w[1] - w[0])?;
            }
            t = target;
        }
        out.push(k.clone());
    }
    Ok(out)
}

/// Which generator drives a leg of the mixed evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    /// `Δ_{L,h∞}`.
    Limit,
    /// `Δ_{L,g,h}` along the path.
    Coupled,
}

/// Partition of `[s, t]` into a `Δ_{L,h∞}` leg and a final `Δ_{L,g,h}` leg starting at `max{t−1, s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionSchedule {
    pub s: f64,
    pub t: f64,
    pub policy: DtPolicy,
}

impl EvolutionSchedule {
    pub fn new(s: f64, t: f64, policy: DtPolicy) -> Result<Self> {
        if !(t >= s) {
            return Err(Error::Domain(format!("evolution from s = {s} to earlier t = {t}")));
        }
        policy.validate()?;
        Ok(EvolutionSchedule { s, t, policy })
    }

    pub fn switch_time(&self) -> f64 {
        (self.t - 1.0).max(self.s)
    }

    pub fn legs(&self) -> Vec<(Generator, f64, f64)> {
        let sw = self.switch_time();
        let mut legs = Vec::new();
        if sw > self.s {
            legs.push((Generator::Limit, self.s, sw));
        }
        if self.t > sw {
            legs.push((Generator::Coupled, sw, self.t));
        }
        legs
    }
}

/// Time-dependent `Δ_{L,g_r,h_r}` written in the frame of `h∞`.
pub trait CoupledPath {
    fn operator_at(&self, r: f64) -> Result<BandOp>;
}

/// Operators sampled at snapshot times and interpolated linearly in between.
#[derive(Debug, Clone)]
pub struct SnapshotPath {
    times: Vec<f64>,
    ops: Vec<BandOp>,
}

impl SnapshotPath {
    /// `snapshots[j] = (g_j, h_j)` at `times[j]`; operators are re-expressed in the frame of `h_inf`.
    pub fn new(times: Vec<f64>, snapshots: &[(CohomMetric, CohomMetric)], h_inf: &CohomMetric) -> Result<Self> {
        if times.len() != snapshots.len() || times.is_empty() {
            return Err(Error::Contract("snapshot path needs one metric pair per time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Contract("snapshot times must increase".into()));
        }
        let ops = snapshots
            .iter()
            .map(|(g, h)| coupled_operator_in(g, h, h_inf))
            .collect::<Result<Vec<_>>>()?;
        Ok(SnapshotPath { times, ops })
    }

    /// Stationary path `g ≡ h ≡ h∞`.
    pub fn stationary(h_inf: &CohomMetric) -> Self {
        let fr = Frame::new(h_inf);
        SnapshotPath { times: vec![0.0], ops: vec![lichnerowicz_op(h_inf, &fr)] }
    }

    pub fn from_ops(times: Vec<f64>, ops: Vec<BandOp>) -> Result<Self> {
        if times.len() != ops.len() || times.is_empty() {
            return Err(Error::Contract("snapshot path needs one operator per time".into()));
        }
        Ok(SnapshotPath { times, ops })
    }
}

impl CoupledPath for SnapshotPath {
    fn operator_at(&self, r: f64) -> Result<BandOp> {
        let n = self.times.len();
        if n == 1 || r <= self.times[0] {
            return Ok(self.ops[0].clone());
        }
        if r >= self.times[n - 1] {
            return Ok(self.ops[n - 1].clone());
        }
        let j = self.times.partition_point(|&x| x <= r).clamp(1, n - 1);
        let w = (r - self.times[j - 1]) / (self.times[j] - self.times[j - 1]);
        Ok(self.ops[j - 1].combine(1.0 - w, &self.ops[j], w))
    }
}

/// `Δ_{L,g,h}` conjugated into the frame of `h_inf`.
pub fn coupled_operator_in(g: &CohomMetric, h: &CohomMetric, h_inf: &CohomMetric) -> Result<BandOp> {
    h.same_grid(h_inf)?;
    let fr = Frame::new(h);
    let kg = h.difference(g)?;
    let op = mixed_lichnerowicz_op(h, &fr, &kg)?;
    if h.id() == h_inf.id() {
        return Ok(op);
    }
    // k^∞_a = k^h_a · comp_h / comp_∞
    let s = std::array::from_fn(|a| {
        h.log_parts()[a].iter().zip(&h_inf.log_parts()[a]).map(|(x, y)| (x - y).exp()).collect()
    });
    Ok(op.conjugate(&s))
}

/// `P(g,h,h∞)_{s→t}`: `Δ_{L,h∞}` up to `max{t−1,s}`, then `Δ_{L,g,h}`.
pub fn mixed_evolution(
    schedule: &EvolutionSchedule,
    path: &dyn CoupledPath,
    h_inf: &CohomMetric,
    k_s: &InvariantTensor,
) -> Result<InvariantTensor> {
    duhamel(schedule, path, h_inf, k_s, None)
}

pub type Source<'a> = &'a dyn Fn(f64) -> Result<InvariantTensor>;

/// `Q_{s→t}(k', F) = P_{s→t}k' + ∫_s^t P_{r→t}F_r dr`, with the integral taken by the
/// right-endpoint rule on the implicit step grid, so that it is the exact discrete Duhamel
/// sum of the backward-Euler propagators.
pub fn duhamel(
    schedule: &EvolutionSchedule,
    path: &dyn CoupledPath,
    h_inf: &CohomMetric,
    k_s: &InvariantTensor,
    source: Option<Source<'_>>,
) -> Result<InvariantTensor> {
    k_s.check_reference(h_inf)?;
    let mut k = k_s.clone();
    let fr = Frame::new(h_inf);
    let limit = lichnerowicz_op(h_inf, &fr);
    let mut stepper = Stepper::new(&limit);
    for (gen, a, b) in schedule.legs() {
        let marks = schedule.policy.steps(a, b, &[]);
        for w in marks.windows(2) {
            let dt = w[1] - w[0];
            if let Some(f) = source {
                let fv = f(w[1])?;
                fv.check_reference(h_inf)?;
                k = k.axpy(dt, &fv)?;
            }
            k = match gen {
                Generator::Limit => stepper.step(&k, dt)?,
                Generator::Coupled => path.operator_at(w[1])?.factor(1.0, dt)?.solve(&k)?,
            };
        }
    }
    Ok(k)
}

/// Scalar tridiagonal solve `a_i x_{i−1} + b_i x_i + c_i x_{i+1} = d_i`.
pub(crate) fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut piv = b[0];
    if piv == 0.0 {
        return Err(Error::Numeric("zero pivot in tridiagonal solve".into()));
    }
    cp[0] = c[0] / piv;
    dp[0] = d[0] / piv;
    for i in 1..n {
        piv = b[i] - a[i] * cp[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Numeric("zero pivot in tridiagonal solve".into()));
        }
        cp[i] = c[i] / piv;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / piv;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// `⟨a, b⟩_{L²(h)} = Σ_i μ_i Σ_a a_a b_a`.
pub fn l2_inner(h: &CohomMetric, a: &InvariantTensor, b: &InvariantTensor) -> Result<f64> {
    a.check_reference(h)?;
    b.check_reference(h)?;
    let mu = h.volume_weights();
    Ok((0..h.len()).map(|i| mu[i] * (0..4).map(|c| a.comps[c][i] * b.comps[c][i]).sum::<f64>()).sum())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::{eguchi_hanson, flat_metric};

    fn grid(r: f64, n: usize, s: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::build(r, n, s, 2).unwrap())
    }

    #[test]
    fn euler_field_doubles_flat() {
        let g = grid(10.0, 200, 1.0);
        let h = flat_metric(&g);
        let x = RadialVector::from_fn(&g, |u| u);
        let l = lie_derivative(&x, &h).unwrap();
        assert!(l.comps.iter().flatten().all(|v| (v - 2.0).abs() < 1e-10));
        let z = lie_derivative(&RadialVector::zeros(g.len()), &h).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn deturck_vanishes_on_diagonal() {
        let g = grid(40.0, 400, 1.01);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let v = deturck_field(&eh, &eh).unwrap();
        assert!(v.comp.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn deturck_linear_matches_difference() {
        let g = grid(40.0, 400, 1.01);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let k = InvariantTensor::from_fn(&eh, |_, u| {
            let b = (-(u - 3.0).powi(2)).exp();
            [b, 0.5 * b, -b, 0.3 * b]
        });
        let a = deturck_linear(&eh, &k).unwrap();
        let b = deturck_linearized(&eh, &k).unwrap();
        let err = a.comp.iter().zip(&b.comp).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = a.comp.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(err < 1e-6 * scale, "{err} {scale}");
    }

    #[test]
    fn thomas_solves() {
        let a = [0.0, -1.0, -1.0, -1.0];
        let b = [2.0, 2.0, 2.0, 2.0];
        let c = [-1.0, -1.0, -1.0, 0.0];
        let d = [1.0, 0.0, 0.0, 1.0];
        let x = thomas(&a, &b, &c, &d).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn band_solve_inverts_apply() {
        let g = grid(40.0, 300, 1.01);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let fr = Frame::new(&eh);
        let op = lichnerowicz_op(&eh, &fr);
        let k = InvariantTensor::from_fn(&eh, |_, u| {
            let b = (-(u - 5.0).powi(2) / 4.0).exp();
            [b, 2.0 * b, -b, 0.5 * b]
        });
        let lu = op.factor(1.0, 0.3).unwrap();
        let rhs = k.axpy(0.3, &op.apply(&k)).unwrap();
        let x = lu.solve(&rhs).unwrap();
        let err = (0..4)
            .flat_map(|a| (1..g.len()).map(move |i| (a, i)))
            .map(|(a, i)| (x.comps[a][i] - k.comps[a][i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn schedule_legs() {
        let p = DtPolicy::fixed(0.1);
        let s = EvolutionSchedule::new(1.0, 5.0, p).unwrap();
        assert_eq!(s.switch_time(), 4.0);
        assert_eq!(s.legs(), vec![(Generator::Limit, 1.0, 4.0), (Generator::Coupled, 4.0, 5.0)]);
        let s = EvolutionSchedule::new(2.0, 2.5, p).unwrap();
        assert_eq!(s.legs(), vec![(Generator::Coupled, 2.0, 2.5)]);
        assert!(matches!(EvolutionSchedule::new(3.0, 2.0, p), Err(Error::Domain(_))));
    }

    #[test]
    fn policy_hits_checkpoints() {
        let p = DtPolicy { dt_min: 0.01, dt_max: 1.0, rel: 0.1 };
        let s = p.steps(0.0, 10.0, &[1.0, 2.5]);
        assert_eq!(s[0], 0.0);
        assert_eq!(*s.last().unwrap(), 10.0);
        assert!(s.contains(&1.0) && s.contains(&2.5));
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn heat_at_zero_time_is_identity() {
        let g = grid(20.0, 200, 1.0);
        let h = flat_metric(&g);
        let k = InvariantTensor::from_fn(&h, |_, u| [(-u * u).exp(); 4]);
        let out = heat_semigroup(&h, &k, 0.0, &DtPolicy::fixed(0.1)).unwrap();
        assert_eq!(out, k);
    }
}

#[cfg(test)]
mod identity_tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::{eguchi_hanson, flat_metric};

    fn grid(r: f64, n: usize, s: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::build(r, n, s, 2).unwrap())
    }

    fn l2(h: &CohomMetric, k: &InvariantTensor) -> f64 {
        l2_inner(h, k, k).unwrap().sqrt()
    }

    fn bump(h: &CohomMetric, c: f64, w: f64, amp: [f64; 4]) -> InvariantTensor {
        InvariantTensor::from_fn(h, |_, u| {
            let b = (-((u - c) / w).powi(2)).exp() + (-((u + c) / w).powi(2)).exp();
            std::array::from_fn(|a| amp[a] * b)
        })
    }

    // k0 = k1 and k2 = k3 at the bolt, differences O(u²)
    fn regular_bump(h: &CohomMetric, c: f64, w: f64) -> InvariantTensor {
        InvariantTensor::from_fn(h, |_, u| {
            let b = (-((u - c) / w).powi(2)).exp() + (-((u + c) / w).powi(2)).exp();
            let q = u * u / (1.0 + u * u);
            [0.3 * b, (0.3 - 0.5 * q) * b, 0.5 * b, (0.5 - 0.4 * q) * b]
        })
    }

    #[test]
    fn linearization_identity_on_eh() {
        let g = grid(60.0, 1500, 1.004);
        let h = eguchi_hanson(1.0, &g).unwrap();
        for (c, w) in [(2.0, 1.0), (4.0, 1.5), (1.0, 0.8)] {
            let k = regular_bump(&h, c, w);
            let dric = linearized_ricci(&h, &k).unwrap();
            let lap = lichnerowicz(&h, &k).unwrap();
            let dv = deturck_linear(&h, &k).unwrap();
            let lie = lie_derivative(&dv, &h).unwrap();
            let rhs = lap.axpy(1.0, &lie).unwrap();
            let err = dric.scaled(2.0).sub(&rhs).unwrap();
            let rel = l2(&h, &err) / l2(&h, &rhs);
            assert!(rel < 1e-3, "{rel}");
        }
    }

    #[test]
    fn metric_is_harmonic() {
        let g = grid(60.0, 1500, 1.004);
        let h = eguchi_hanson(1.0, &g).unwrap();
        let id = InvariantTensor::identity(&h);
        let lap = lichnerowicz(&h, &id).unwrap();
        let inner: Vec<f64> = (0..4).flat_map(|a| lap.comps[a][1..g.len() - 1].to_vec()).collect();
        let m = inner.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(m < 1e-3);
    }

    #[test]
    fn flat_scalar_laplacian_second_order() {
        // −Δ e^{−u²} in R⁴ = (8 − 4u²) e^{−u²}
        let err = |n: usize| {
            let g = grid(20.0, n, 1.0);
            let h = flat_metric(&g);
            let k = InvariantTensor::from_fn(&h, |_, u| [(-u * u).exp(); 4]);
            let lap = lichnerowicz(&h, &k).unwrap();
            (1..g.len() - 1)
                .map(|i| {
                    let u = g.nodes()[i];
                    (lap.comps[0][i] - (8.0 - 4.0 * u * u) * (-u * u).exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(401), err(801));
        assert!(e2 < 1e-2, "{e2}");
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn self_adjoint_on_eh() {
        let g = grid(60.0, 1500, 1.004);
        let h = eguchi_hanson(1.0, &g).unwrap();
        let a = bump(&h, 3.0, 1.0, [0.3, -0.2, 0.5, 0.1]);
        let b = bump(&h, 4.0, 2.0, [-0.1, 0.4, 0.2, 0.7]);
        let lab = l2_inner(&h, &lichnerowicz(&h, &a).unwrap(), &b).unwrap();
        let alb = l2_inner(&h, &a, &lichnerowicz(&h, &b).unwrap()).unwrap();
        assert!((lab - alb).abs() <= 1e-6 * lab.abs(), "{lab} {alb}");
    }
}
