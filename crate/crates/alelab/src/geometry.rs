//! Diagonal Bianchi IX metrics `f du² + a σ1² + b σ2² + c σ3²` on `(0, r_max] × S³/Γ`.
//!
//! Coefficients are stored through their log-regular parts
//! `φ_a = ln(comp_a) − 2 m_a ln u`, where `m_a ∈ {0, 1}` marks the directions that
//! collapse at `u = 0`. The `φ_a` are smooth even functions, so all finite differences
//! act on bounded data even where `a ~ 4u²` at the bolt.
//!
//! Coframe normalization: `dσ_i = 2 σ_j ∧ σ_k`, so the unit round `S³` is `σ1²+σ2²+σ3²`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Parity, RadialGrid};
use crate::rates::{fit_rate, RateFit};

/// Structure constant of the coframe.
pub const LAMBDA: f64 = 2.0;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Collapse pattern of the Eguchi-Hanson bolt: only the σ1 circle closes.
pub const BOLT: [u8; 4] = [0, 1, 0, 0];
/// Collapse pattern of the flat cone tip: the whole `S³/Γ` shrinks.
pub const NUT: [u8; 4] = [0, 1, 1, 1];

#[derive(Debug, Clone)]
pub struct CohomMetric {
    id: u64,
    grid: Arc<RadialGrid>,
    pub eps: f64,
    phi: [Vec<f64>; 4],
    collapse: [u8; 4],
    r: Vec<f64>,
    dr_du: Vec<f64>,
    pub group_order: u32,
    pub label: String,
}

impl CohomMetric {
    #[allow(clippy::too_many_arguments)]
    pub fn from_log_parts(
        grid: Arc<RadialGrid>,
        phi: [Vec<f64>; 4],
        collapse: [u8; 4],
        r: Vec<f64>,
        dr_du: Vec<f64>,
        eps: f64,
        group_order: u32,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = grid.len();
        if phi.iter().any(|p| p.len() != n) || r.len() != n || dr_du.len() != n {
            return Err(Error::Contract("metric samples do not match grid".into()));
        }
        if phi.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-positive or non-finite metric component".into()));
        }
        Ok(CohomMetric {
            id: fresh_id(),
            grid,
            eps,
            phi,
            collapse,
            r,
            dr_du,
            group_order,
            label: label.into(),
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn log_parts(&self) -> &[Vec<f64>; 4] {
        &self.phi
    }

    pub fn collapse(&self) -> [u8; 4] {
        self.collapse
    }

    /// Paper coordinate `r` of the asymptotic chart at each node.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn dr_du(&self) -> &[f64] {
        &self.dr_du
    }

    #[inline]
    pub fn comp(&self, a: usize, i: usize) -> f64 {
        let u = self.grid.nodes()[i];
        let e = self.phi[a][i].exp();
        if self.collapse[a] == 1 {
            u * u * e
        } else {
            e
        }
    }

    /// Coefficients of `du², σ1², σ2², σ3²`.
    pub fn comps(&self) -> [Vec<f64>; 4] {
        std::array::from_fn(|a| (0..self.len()).map(|i| self.comp(a, i)).collect())
    }

    pub fn same_grid(&self, other: &CohomMetric) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::Contract("metrics live on different grids".into()))
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `g = self·(1 + k)` componentwise in this metric's frame.
    pub fn perturbed(&self, k: &InvariantTensor) -> Result<CohomMetric> {
        k.check_reference(self)?;
        let mut phi = self.phi.clone();
        for a in 0..4 {
            for (p, kv) in phi[a].iter_mut().zip(&k.comps[a]) {
                let g = 1.0 + kv;
                if !(g > 0.0) {
                    return Err(Error::Domain(format!("perturbed component 1 + k = {g} not positive")));
                }
                *p += g.ln();
            }
        }
        CohomMetric::from_log_parts(
            self.grid.clone(),
            phi,
            self.collapse,
            self.r.clone(),
            self.dr_du.clone(),
            self.eps,
            self.group_order,
            format!("{}+k", self.label),
        )
    }

    /// `g − self` expressed in the frame of `self`: `comp_g / comp_self − 1`.
    pub fn difference(&self, g: &CohomMetric) -> Result<InvariantTensor> {
        self.same_grid(g)?;
        if g.collapse != self.collapse {
            return Err(Error::Contract("metrics have different collapse patterns".into()));
        }
        let comps = std::array::from_fn(|a| {
            g.phi[a].iter().zip(&self.phi[a]).map(|(x, y)| (x - y).exp_m1()).collect()
        });
        Ok(InvariantTensor { comps, reference: self.id })
    }

    /// Volume measure `w_i dV/du` including the `S³/Γ` volume `2π²/|Γ|`.
    pub fn volume_weights(&self) -> Vec<f64> {
        let vol = 2.0 * PI * PI / self.group_order as f64;
        let w = self.grid.quad_weights();
        (0..self.len()).map(|i| w[i] * self.density(i) * vol).collect()
    }

    /// `√(f a b c)` per unit `du` and unit coframe volume.
    pub fn density(&self, i: usize) -> f64 {
        let u = self.grid.nodes()[i];
        let m: u8 = self.collapse[1..].iter().sum();
        let e = 0.5 * (self.phi[0][i] + self.phi[1][i] + self.phi[2][i] + self.phi[3][i]);
        u.powi(m as i32) * e.exp()
    }

    pub fn volume_element(&self) -> Vec<f64> {
        let vol = 2.0 * PI * PI / self.group_order as f64;
        (0..self.len()).map(|i| self.density(i) * vol).collect()
    }

    /// Snapshot rows `u, r, comp_rr, comp_11, comp_22, comp_33`.
    pub fn to_csv(&self) -> String {
        let c = self.comps();
        let mut s = String::from("u,r,comp_rr,comp_11,comp_22,comp_33\n");
        for i in 0..self.len() {
            s.push_str(&format!(
                "{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}\n",
                self.grid.nodes()[i],
                self.r[i],
                c[0][i],
                c[1][i],
                c[2][i],
                c[3][i]
            ));
        }
        s
    }
}

/// Diagonal symmetric 2-tensor by its components in the orthonormal frame of `reference`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantTensor {
    pub comps: [Vec<f64>; 4],
    pub reference: u64,
}

impl InvariantTensor {
    pub fn zeros(metric: &CohomMetric) -> Self {
        InvariantTensor { comps: std::array::from_fn(|_| vec![0.0; metric.len()]), reference: metric.id }
    }

    /// The metric itself: identity frame components.
    pub fn identity(metric: &CohomMetric) -> Self {
        InvariantTensor { comps: std::array::from_fn(|_| vec![1.0; metric.len()]), reference: metric.id }
    }

    pub fn from_fn(metric: &CohomMetric, f: impl Fn(usize, f64) -> [f64; 4]) -> Self {
        let mut t = InvariantTensor::zeros(metric);
        for (i, &u) in metric.grid().nodes().iter().enumerate() {
            let v = f(i, u);
            for a in 0..4 {
                t.comps[a][i] = v[a];
            }
        }
        t
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    pub fn check_reference(&self, metric: &CohomMetric) -> Result<()> {
        if self.reference != metric.id {
            return Err(Error::Contract(format!(
                "tensor is framed by metric #{}, operator expects #{} ({})",
                self.reference, metric.id, metric.label
            )));
        }
        if self.len() != metric.len() {
            return Err(Error::Contract("tensor length does not match grid".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        InvariantTensor {
            comps: std::array::from_fn(|a| self.comps[a].iter().map(|v| v * s).collect()),
            reference: self.reference,
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &InvariantTensor) -> Result<Self> {
        if self.reference != other.reference {
            return Err(Error::Contract("adding tensors framed by different metrics".into()));
        }
        Ok(InvariantTensor {
            comps: std::array::from_fn(|a| {
                self.comps[a].iter().zip(&other.comps[a]).map(|(x, y)| x + s * y).collect()
            }),
            reference: self.reference,
        })
    }

    pub fn sub(&self, other: &InvariantTensor) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// Re-express in the frame of `to`; `from` must be the current reference.
    pub fn reframe(&self, from: &CohomMetric, to: &CohomMetric) -> Result<Self> {
        self.check_reference(from)?;
        from.same_grid(to)?;
        if from.id == to.id {
            return Ok(self.clone());
        }
        Ok(InvariantTensor {
            comps: std::array::from_fn(|a| {
                self.comps[a]
                    .iter()
                    .zip(from.phi[a].iter().zip(&to.phi[a]))
                    .map(|(k, (pf, pt))| k * (pf - pt).exp())
                    .collect()
            }),
            reference: to.id,
        })
    }

    /// Relabel to another metric that shares the same coefficients.
    pub fn rebase(mut self, metric: &CohomMetric) -> Self {
        self.reference = metric.id;
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise frame norm `(Σ_a k_a²)^{1/2}`.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| (0..4).map(|a| self.comps[a][i].powi(2)).sum::<f64>().sqrt())
            .collect()
    }
}

/// Per-node frame geometry: connection data, sectional curvatures and flux coefficients.
#[derive(Debug, Clone)]
pub struct Frame {
    pub f: Vec<f64>,
    /// Radial mean curvatures `H_i = e_0(ln A_i)`, `i = 1..3` (index 0 unused).
    pub h: Vec<[f64; 4]>,
    /// `p_i = A_i / (A_j A_k)`.
    pub p: Vec<[f64; 4]>,
    /// Sectional curvatures `K_ab = R(e_a, e_b, e_b, e_a)`.
    pub ksec: Vec<[[f64; 4]; 4]>,
    /// Volume density per `du` (without the `S³/Γ` factor).
    pub dens: Vec<f64>,
    /// `(A_1A_2A_3/√f)(u_{i+1/2}) / J_{i+1/2}`: flux coefficient in the index coordinate.
    pub flux: Vec<f64>,
    /// Cell measure in the index coordinate: `∫ dens du` over `[u_{i−1/2}, u_{i+1/2}]`.
    pub cell: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Frame {
    pub fn new(g: &CohomMetric) -> Frame {
        let grid = g.grid();
        let n = g.len();
        let u = grid.nodes();
        let m = g.collapse;
        let d1: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d1(&g.phi[a], Parity::Even));
        let d2: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d2(&g.phi[a], Parity::Even));
        let singular = m.iter().any(|&x| x == 1);
        let mut f = vec![0.0; n];
        let mut h = vec![[0.0; 4]; n];
        let mut p = vec![[0.0; 4]; n];
        let mut ksec = vec![[[0.0; 4]; 4]; n];
        let mut dens = vec![0.0; n];
        let start = if singular { 1 } else { 0 };
        for i in 0..n {
            f[i] = g.phi[0][i].exp();
            dens[i] = g.density(i);
        }
        for i in start..n {
            let ui = u[i];
            let inv_u = if ui > 0.0 { 1.0 / ui } else { 0.0 };
            let sf = f[i].sqrt();
            let comps: [f64; 4] = std::array::from_fn(|a| g.comp(a, i));
            let amp: [f64; 4] = std::array::from_fn(|a| comps[a].sqrt());
            let mut hh = [0.0; 4];
            for a in 1..4 {
                hh[a] = (0.5 * d1[a][i] + m[a] as f64 * inv_u) / sf;
            }
            let mut pp = [0.0; 4];
            for a in 1..4 {
                let (b, c) = others(a);
                pp[a] = amp[a] / (amp[b] * amp[c]);
            }
            let mut k = [[0.0; 4]; 4];
            let half0 = 0.5 * d1[0][i];
            for a in 1..4 {
                let ma = m[a] as f64;
                let s = 0.5 * d2[a][i] + 0.25 * d1[a][i] * d1[a][i] + ma * d1[a][i] * inv_u
                    - half0 * (0.5 * d1[a][i] + ma * inv_u);
                k[0][a] = -s / f[i];
                k[a][0] = k[0][a];
            }
            let rg = bianchi_ricci(comps[1], comps[2], comps[3]);
            for a in 1..4 {
                for b in (a + 1)..4 {
                    let c = 6 - a - b;
                    let kg = 0.5 * (rg[a] + rg[b] - rg[c]);
                    k[a][b] = kg - hh[a] * hh[b];
                    k[b][a] = k[a][b];
                }
            }
            h[i] = hh;
            p[i] = pp;
            ksec[i] = k;
        }
        if singular {
            let (c1, c2) = grid.even_extrapolation();
            for a in 0..4 {
                for b in 0..4 {
                    ksec[0][a][b] = c1 * ksec[1][a][b] + c2 * ksec[2][a][b];
                }
            }
        }
        let hu = grid.half_nodes();
        let hj = grid.half_jacobian();
        let mcount: i32 = m[1..].iter().map(|&x| x as i32).sum();
        let flux = (0..n - 1)
            .map(|i| {
                let ph: [f64; 4] = std::array::from_fn(|a| 0.5 * (g.phi[a][i] + g.phi[a][i + 1]));
                let e = 0.5 * (ph[1] + ph[2] + ph[3] - ph[0]);
                hu[i].powi(mcount) * e.exp() / hj[i]
            })
            .collect();
        let jac = grid.jacobian();
        let p1 = mcount + 1;
        let cell = (0..n)
            .map(|i| {
                if i == 0 || i == n - 1 {
                    return dens[i] * jac[i];
                }
                // exact volume of the singular factor u^m over the cell
                let e = 0.5 * (g.phi[0][i] + g.phi[1][i] + g.phi[2][i] + g.phi[3][i]);
                e.exp() * (hu[i].powi(p1) - hu[i - 1].powi(p1)) / p1 as f64
            })
            .collect();
        let mu = g.volume_weights();
        Frame { f, h, p, ksec, dens, flux, cell, mu }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Connection coefficients `ω[c][a][b] = <∇_{e_c} e_a, e_b>`.
    pub fn connection(&self, i: usize) -> [[[f64; 4]; 4]; 4] {
        let mut w = [[[0.0; 4]; 4]; 4];
        let h = self.h[i];
        let p = self.p[i];
        for a in 1..4 {
            w[a][a][0] = -h[a];
            w[a][0][a] = h[a];
        }
        for c in 1..4 {
            for a in 1..4 {
                for b in 1..4 {
                    let s = levi(c, a, b);
                    if s != 0.0 {
                        w[c][a][b] = 0.5 * LAMBDA * s * (p[c] - p[a] - p[b]);
                    }
                }
            }
        }
        w
    }

    /// Ricci components `Σ_{b≠a} K_ab`.
    pub fn ricci(&self, i: usize) -> [f64; 4] {
        let k = &self.ksec[i];
        std::array::from_fn(|a| (0..4).filter(|&b| b != a).map(|b| k[a][b]).sum())
    }
}

#[inline]
pub(crate) fn others(a: usize) -> (usize, usize) {
    match a {
        1 => (2, 3),
        2 => (3, 1),
        _ => (1, 2),
    }
}

#[inline]
pub(crate) fn levi(a: usize, b: usize, c: usize) -> f64 {
    match (a, b, c) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (1, 3, 2) | (3, 2, 1) | (2, 1, 3) => -1.0,
        _ => 0.0,
    }
}

/// Ricci of the left-invariant metric `a σ1² + b σ2² + c σ3²` on `S³`, orthonormal frame.
#[inline]
fn bianchi_ricci(a: f64, b: f64, c: f64) -> [f64; 4] {
    let q = b + c - a;
    let d = (b - c) / a;
    [
        0.0,
        2.0 * a / (b * c) - 2.0 * (b - c) * (b - c) / (a * b * c),
        2.0 * q / (b * c) * (1.0 + d),
        2.0 * q / (b * c) * (1.0 - d),
    ]
}

/// Paper-coordinate coefficients of `dr², σ1², σ2², σ3²` for Eguchi-Hanson.
pub fn eh_r_coefficients(eps: f64, r: f64) -> [f64; 4] {
    let q = (r.powi(4) + eps.powi(4)).sqrt();
    [r * r / q, r.powi(4) / q, q, q]
}

/// `x = r²` along the geodesic coordinate: `dx/du = 2 (x² + ε⁴)^{1/4}`, `x(0) = 0`.
pub fn eh_geodesic_x(eps: f64, us: &[f64]) -> Vec<f64> {
    let e4 = eps.powi(4);
    let rhs = |x: f64| 2.0 * (x * x + e4).sqrt().sqrt();
    let mut out = Vec::with_capacity(us.len());
    let mut x: f64 = 0.0;
    let mut u0 = 0.0;
    for &u in us {
        let span = u - u0;
        if span > 0.0 {
            let scale = 0.01 * (eps + x.sqrt());
            let steps = ((span / scale).ceil() as usize).max(2);
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1 = rhs(x);
                let k2 = rhs(x + 0.5 * h * k1);
                let k3 = rhs(x + 0.5 * h * k2);
                let k4 = rhs(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        out.push(x);
        u0 = u;
    }
    out
}

/// Eguchi-Hanson sampled in its own geodesic coordinate.
pub fn eguchi_hanson(eps: f64, grid: &Arc<RadialGrid>) -> Result<CohomMetric> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if grid.r_max() < 20.0 * eps {
        return Err(Error::Domain(format!("r_max {} below 20·eps", grid.r_max())));
    }
    let u = grid.nodes();
    let x = eh_geodesic_x(eps, u);
    let e4 = eps.powi(4);
    let n = u.len();
    let mut phi: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut r = vec![0.0; n];
    let mut dr = vec![0.0; n];
    for i in 0..n {
        let q = (x[i] * x[i] + e4).sqrt();
        phi[1][i] = if i == 0 { (4.0f64).ln() } else { 2.0 * (x[i] / u[i]).ln() - q.ln() };
        phi[2][i] = q.ln();
        phi[3][i] = q.ln();
        r[i] = x[i].sqrt();
        dr[i] = if i == 0 { f64::INFINITY } else { q.sqrt() / r[i] };
    }
    CohomMetric::from_log_parts(grid.clone(), phi, BOLT, r, dr, eps, 2, format!("eh(eps={eps})"))
}

/// Member `ε` of the Eguchi-Hanson family written in the paper coordinate of `reference`
/// (itself Eguchi-Hanson), i.e. `r_ε(u) = r_ref(u)`. These metrics are in `reference`-gauge.
pub fn eh_family_member(reference: &CohomMetric, eps: f64) -> Result<CohomMetric> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let e0 = reference.eps;
    let u = reference.grid().nodes();
    let n = u.len();
    let mut phi: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let x = reference.r[i] * reference.r[i];
        let q = (x * x + eps.powi(4)).sqrt();
        let q0 = (x * x + e0.powi(4)).sqrt();
        phi[0][i] = (q0 / q).ln();
        phi[1][i] = if i == 0 {
            (4.0 * e0 * e0 / (eps * eps)).ln()
        } else {
            2.0 * (x / u[i]).ln() - q.ln()
        };
        phi[2][i] = q.ln();
        phi[3][i] = q.ln();
    }
    CohomMetric::from_log_parts(
        reference.grid.clone(),
        phi,
        BOLT,
        reference.r.clone(),
        reference.dr_du.clone(),
        eps,
        2,
        format!("eh(eps={eps}) in gauge of {}", reference.label),
    )
}

/// `∂_ε` of [`eh_family_member`] in the frame of that member: `(2ε³/Q²)(−1, −1, 1, 1)`.
pub fn eh_family_tangent(member: &CohomMetric) -> InvariantTensor {
    let e = member.eps;
    InvariantTensor::from_fn(member, |i, _| {
        let x = member.r[i] * member.r[i];
        let s = 2.0 * e.powi(3) / (x * x + e.powi(4));
        [-s, -s, s, s]
    })
}

/// `∂_ε` of the geodesic-coordinate Eguchi-Hanson metric at fixed `u`, in its own frame.
pub fn eh_geodesic_tangent(metric: &CohomMetric) -> InvariantTensor {
    let e = metric.eps;
    let e4 = e.powi(4);
    InvariantTensor::from_fn(metric, |i, u| {
        let x = metric.r[i] * metric.r[i];
        let q2 = x * x + e4;
        if i == 0 {
            return [0.0, 0.0, 2.0 / e, 2.0 / e];
        }
        let xu = 2.0 * q2.sqrt().sqrt();
        let dx = (2.0 * x - u * xu) / e;
        let db = (x * dx + 2.0 * e.powi(3)) / q2;
        [0.0, 2.0 * dx / x - db, db, db]
    })
}

/// Flat cone `du² + u²(σ1²+σ2²+σ3²)` on `R⁴/Z₂`.
pub fn flat_metric(grid: &Arc<RadialGrid>) -> CohomMetric {
    let n = grid.len();
    CohomMetric::from_log_parts(
        grid.clone(),
        std::array::from_fn(|_| vec![0.0; n]),
        NUT,
        grid.nodes().to_vec(),
        vec![1.0; n],
        0.0,
        2,
        "flat",
    )
    .expect("flat metric samples are finite")
}

/// Ricci tensor in the orthonormal frame of `metric`.
pub fn ricci_tensor(metric: &CohomMetric) -> InvariantTensor {
    let fr = Frame::new(metric);
    ricci_from_frame(metric, &fr)
}

pub(crate) fn ricci_from_frame(metric: &CohomMetric, fr: &Frame) -> InvariantTensor {
    let mut t = InvariantTensor::zeros(metric);
    for i in 0..metric.len() {
        let r = fr.ricci(i);
        for a in 0..4 {
            t.comps[a][i] = r[a];
        }
    }
    t
}

pub fn scalar_curvature(metric: &CohomMetric) -> Vec<f64> {
    let ric = ricci_tensor(metric);
    (0..metric.len()).map(|i| (0..4).map(|a| ric.comps[a][i]).sum()).collect()
}

/// `Rm(k)_aa = Σ_b K_ab k_b`.
pub fn riemann_action(metric: &CohomMetric, k: &InvariantTensor) -> Result<InvariantTensor> {
    k.check_reference(metric)?;
    let fr = Frame::new(metric);
    Ok(riemann_action_frame(&fr, k))
}

pub(crate) fn riemann_action_frame(fr: &Frame, k: &InvariantTensor) -> InvariantTensor {
    let mut out = k.scaled(0.0);
    for i in 0..fr.len() {
        for a in 0..4 {
            out.comps[a][i] = (0..4).map(|b| fr.ksec[i][a][b] * k.comps[b][i]).sum();
        }
    }
    out
}

/// Deviation from the flat cone in the asymptotic chart, flat-frame norm.
pub fn ale_deviation(metric: &CohomMetric) -> Vec<f64> {
    let c = metric.comps();
    (0..metric.len())
        .map(|i| {
            let r = metric.r[i];
            if r <= 0.0 {
                return f64::NAN;
            }
            let alpha = c[0][i] / (metric.dr_du[i] * metric.dr_du[i]) - 1.0;
            let b: f64 = (1..4).map(|a| (c[a][i] / (r * r) - 1.0).powi(2)).sum();
            (alpha * alpha + b).sqrt()
        })
        .collect()
}

pub fn ale_order_fit(metric: &CohomMetric, window: [f64; 2]) -> Result<RateFit> {
    let [lo, hi] = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!("bad window [{lo}, {hi}]")));
    }
    if hi > metric.r[metric.len() - 1] {
        return Err(Error::Domain("window exceeds grid".into()));
    }
    let dev = ale_deviation(metric);
    let samples: Vec<(f64, f64)> = (0..metric.len())
        .filter(|&i| metric.r[i] >= lo && metric.r[i] <= hi)
        .map(|i| (metric.r[i], dev[i]))
        .collect();
    let mut fit = fit_rate(&samples, false)?;
    fit.exponent = -fit.exponent;
    Ok(fit)
}

/// ADM flux `∫_{S³(R)/Γ} (∂_j g_ij − ∂_i g_jj) ν^i dA` in the asymptotic chart.
///
/// With `g = (1+α)dr² + r²Σ(1+β_i)σ_i²` the flux density is `3α/R − Σβ_i/R − Σ∂_rβ_i`.
pub fn adm_mass(metric: &CohomMetric, radius: f64) -> Result<f64> {
    let n = metric.len();
    if !(radius > 0.0) || radius > metric.r[n - 2] {
        return Err(Error::Domain(format!("radius {radius} outside grid")));
    }
    let c = metric.comps();
    let r = &metric.r;
    let beta: Vec<f64> = (0..n)
        .map(|i| if r[i] > 0.0 { (1..4).map(|a| c[a][i] / (r[i] * r[i]) - 1.0).sum() } else { 0.0 })
        .collect();
    let dbeta = metric.grid().d1(&beta, Parity::Even);
    let density: Vec<f64> = (0..n)
        .map(|i| {
            if r[i] <= 0.0 {
                return 0.0;
            }
            let alpha = c[0][i] / (metric.dr_du[i] * metric.dr_du[i]) - 1.0;
            3.0 * alpha / r[i] - beta[i] / r[i] - dbeta[i] / metric.dr_du[i]
        })
        .collect();
    let j = r.partition_point(|&x| x < radius).clamp(1, n - 2);
    let t = (radius - r[j - 1]) / (r[j] - r[j - 1]);
    let d = density[j - 1] * (1.0 - t) + density[j] * t;
    let area = 2.0 * PI * PI / metric.group_order as f64 * radius.powi(3);
    Ok(area * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(r: f64, n: usize, s: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::build(r, n, s, 2).unwrap())
    }

    #[test]
    fn eh_paper_values() {
        let c = eh_r_coefficients(1.0, 1.0);
        assert!((c[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((c[2] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn eh_geodesic_matches_r_form() {
        let g = grid(40.0, 400, 1.01);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let c = eh.comps();
        for i in (10..400).step_by(37) {
            let r = eh.r()[i];
            let rc = eh_r_coefficients(1.0, r);
            assert!((c[1][i] / rc[1] - 1.0).abs() < 1e-9);
            assert!((c[2][i] / rc[2] - 1.0).abs() < 1e-9);
            // f du² = g_rr dr²
            let dr = eh.dr_du()[i];
            assert!((rc[0] * dr * dr - 1.0).abs() < 1e-9);
        }
        // smooth Z₂ closing: a ≈ 4u²
        let u1 = g.nodes()[1];
        let rel = c[1][1] / (4.0 * u1 * u1) - 1.0;
        // next term is -(4/3) u²/ε²
        assert!((rel / (u1 * u1) + 4.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn small_eps_is_flat() {
        let g = grid(20.0, 800, 1.005);
        let eh = eguchi_hanson(1e-3, &g).unwrap();
        let fl = flat_metric(&g);
        let (a, b) = (eh.comps(), fl.comps());
        for i in 0..g.len() {
            if eh.r()[i] < 1.0 {
                continue;
            }
            // compare at equal paper radius
            let r = eh.r()[i];
            let rc = eh_r_coefficients(1e-3, r);
            for k in 1..4 {
                assert!((rc[k] / (r * r) - 1.0).abs() < 1e-8);
            }
            assert!(a[0][i] == b[0][i]);
        }
    }

    #[test]
    fn flat_is_ricci_flat() {
        let g = grid(20.0, 400, 1.01);
        let fl = flat_metric(&g);
        let ric = ricci_tensor(&fl);
        assert!(ric.max_abs() < 1e-9, "{}", ric.max_abs());
        assert!(scalar_curvature(&fl).iter().all(|s| s.abs() < 1e-9));
        assert!(ale_deviation(&fl).iter().skip(1).all(|&d| d == 0.0));
    }

    #[test]
    fn eh_ricci_second_order() {
        let g = grid(60.0, 600, 1.008);
        let r1 = ricci_tensor(&eguchi_hanson(1.0, &g).unwrap()).max_abs();
        let g2 = Arc::new(g.refined().unwrap());
        let r2 = ricci_tensor(&eguchi_hanson(1.0, &g2).unwrap()).max_abs();
        assert!(r1 < 1e-3, "{r1}");
        assert!(r1 / r2 > 3.5, "{r1} {r2}");
    }

    #[test]
    fn scaling_covariance() {
        let g = grid(60.0, 600, 1.008);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let mut phi = eh.log_parts().clone();
        for p in phi.iter_mut() {
            for v in p.iter_mut() {
                *v += (4.0f64).ln();
            }
        }
        // λ²g with λ=2 is written with u unchanged: f scales too, so Ric in the frame scales by 1/4.
        let scaled = CohomMetric::from_log_parts(
            eh.grid_arc().clone(),
            phi,
            BOLT,
            eh.r().to_vec(),
            eh.dr_du().to_vec(),
            1.0,
            2,
            "scaled",
        )
        .unwrap();
        let a = ricci_tensor(&eh);
        let b = ricci_tensor(&scaled);
        for c in 0..4 {
            for i in 0..g.len() {
                assert!((b.comps[c][i] * 4.0 - a.comps[c][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eh_scaling_family() {
        let g = grid(60.0, 600, 1.008);
        let e2 = eguchi_hanson(2.0, &g).unwrap();
        let us: Vec<f64> = g.nodes().iter().map(|u| u / 2.0).collect();
        let x1 = eh_geodesic_x(1.0, &us);
        for i in 1..g.len() {
            let x2 = e2.r()[i].powi(2);
            assert!((x2 / (4.0 * x1[i]) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ale_order() {
        let g = grid(400.0, 2000, 1.004);
        let f1 = ale_order_fit(&eguchi_hanson(1.0, &g).unwrap(), [10.0, 100.0]).unwrap();
        assert!((f1.exponent - 4.0).abs() < 0.3, "{}", f1.exponent);
        let f2 = ale_order_fit(&eguchi_hanson(2.0, &g).unwrap(), [10.0, 100.0]).unwrap();
        assert!((f2.exponent - 4.0).abs() < 0.3);
        assert!((f2.amplitude / f1.amplitude / 16.0 - 1.0).abs() < 0.05);
        let fl = ale_order_fit(&flat_metric(&g), [10.0, 100.0]).unwrap();
        assert!(fl.degenerate);
    }

    #[test]
    fn riemann_trace_is_ricci() {
        let g = grid(60.0, 600, 1.008);
        let eh = eguchi_hanson(1.0, &g).unwrap();
        let rm = riemann_action(&eh, &InvariantTensor::identity(&eh)).unwrap();
        let ric = ricci_tensor(&eh);
        assert!(rm.sub(&ric).unwrap().max_abs() < 1e-14);
        assert!(rm.max_abs() < 1e-3);
        let fl = flat_metric(&g);
        let k = InvariantTensor::from_fn(&fl, |_, u| [u.cos(), 1.0, u, 2.0]);
        assert!(riemann_action(&fl, &k).unwrap().max_abs() < 1e-9);
        assert!(matches!(riemann_action(&eh, &k), Err(Error::Contract(_))));
    }

    #[test]
    fn flat_mass_zero() {
        let g = grid(100.0, 600, 1.005);
        assert_eq!(adm_mass(&flat_metric(&g), 50.0).unwrap(), 0.0);
    }
}
