//! Kernel of `Δ_L` on the Eguchi-Hanson family, the kernel projections and their
//! transfer maps, and the moduli projection `Φ`.
//!
//! The kernel element at `h_ε` is `e ∝ ∂_ε h − L_X h` where the radial field `X` solves
//! `DV_h(L_X h) = DV_h(∂_ε h)`, `X(0) = X(R) = 0`. Then `DV(e) = 0` and `DRic(e) = 0`, so
//! `Δ_L e = 2DRic(e) − L_{DV(e)}h = 0`. In the frame of `h` the left side reads
//!
//! `f·DV(L_X h) = X'' + ½(φ_0' + S)X' + ½(φ_0'' + Sφ_0' − Σ_c(ℓ_c' + ℓ_c²))X`,
//!
//! with `ℓ_c = φ_c' + 2m_c/u` and `S = Σ_c ℓ_c`.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{eh_family_member, eh_family_tangent, CohomMetric, InvariantTensor, BOLT};
use crate::grid::Parity;
use crate::norms::{norm, NormSpec};
use crate::operators::{deturck_field, deturck_linear, l2_inner, lichnerowicz, lie_derivative, thomas, RadialVector};
use crate::rates::{fit_rate, RateFit};

/// Bound on `‖Δ_L e‖_{L²} / ‖e‖_{W^{2,2}}` for an accepted kernel element.
pub const KERNEL_TOL: f64 = 1e-3;

/// Smallest admissible `|det A|` of the transfer matrix.
pub const TRANSFER_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub elements: Vec<InvariantTensor>,
    pub base_eps: f64,
    /// `‖Δ_L e‖_{L²} / ‖e‖_{W^{2,2}}` per element.
    pub residuals: Vec<f64>,
    /// Gauge correction `X` used for each element.
    pub gauge_fields: Vec<RadialVector>,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn check_reference(&self, h: &CohomMetric) -> Result<()> {
        for e in &self.elements {
            e.check_reference(h)?;
        }
        Ok(())
    }

    /// Gram matrix `⟨e_i, e_j⟩_{L²(h)}`.
    pub fn gram(&self, h: &CohomMetric) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] = l2_inner(h, &self.elements[i], &self.elements[j])?;
            }
        }
        Ok(g)
    }

    /// Pointwise decay exponent of `|e_1|` against `r` over `[lo, hi]`.
    pub fn decay_fit(&self, h: &CohomMetric, lo: f64, hi: f64) -> Result<RateFit> {
        let e = &self.elements[0];
        let mag = e.pointwise_norm();
        let samples: Vec<(f64, f64)> =
            (0..h.len()).filter(|&i| h.r()[i] >= lo && h.r()[i] <= hi).map(|i| (h.r()[i], mag[i])).collect();
        fit_rate(&samples, false)
    }
}

/// A point of the gauged Ricci-flat family together with its parameter.
#[derive(Debug, Clone)]
pub struct ModuliPoint {
    pub h: CohomMetric,
    pub eps: f64,
}

/// Solve `f·DV_h(L_X h) = rhs` for radial `X` with `X(0) = X(R) = 0`.
pub fn gauge_solve(h: &CohomMetric, rhs: &[f64]) -> Result<RadialVector> {
    let grid = h.grid();
    let n = h.len();
    let u = grid.nodes();
    let m = h.collapse();
    let phi = h.log_parts();
    let d1: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d1(&phi[a], Parity::Even));
    let d2: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d2(&phi[a], Parity::Even));
    let k = n - 2;
    let (mut a, mut b, mut c, mut d) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for i in 1..n - 1 {
        let inv = 1.0 / u[i];
        let mut s = 0.0;
        let mut curv = 0.0;
        for cc in 1..4 {
            let mc = m[cc] as f64;
            let ell = d1[cc][i] + 2.0 * mc * inv;
            let dell = d2[cc][i] - 2.0 * mc * inv * inv;
            s += ell;
            curv += dell + ell * ell;
        }
        let p = 0.5 * (d1[0][i] + s);
        let q = 0.5 * (d2[0][i] + s * d1[0][i] - curv);
        let hm = u[i] - u[i - 1];
        let hp = u[i + 1] - u[i];
        let sum = hm + hp;
        let lo = 2.0 / (hm * sum) - p * hp / (hm * sum);
        let mid = -2.0 / (hm * hp) + p * (hp - hm) / (hm * hp) + q;
        let up = 2.0 / (hp * sum) + p * hm / (hp * sum);
        let r = i - 1;
        a[r] = lo;
        b[r] = mid;
        c[r] = up;
        d[r] = rhs[i];
    }
    let x = thomas(&a, &b, &c, &d)?;
    let mut comp = vec![0.0; n];
    comp[1..n - 1].copy_from_slice(&x);
    Ok(RadialVector { comp })
}

fn require_family(h: &CohomMetric) -> Result<()> {
    if !(h.eps > 0.0) || h.collapse() != BOLT {
        return Err(Error::Domain(format!("{} is not an Eguchi-Hanson family member", h.label)));
    }
    Ok(())
}

/// Gauge-corrected family tangent `∂_ε h − L_X h`, unnormalized, and its gauge field.
pub fn gauge_corrected_tangent(h: &CohomMetric) -> Result<(InvariantTensor, RadialVector)> {
    require_family(h)?;
    let t = eh_family_tangent(h);
    let dv = deturck_linear(h, &t)?;
    let rhs: Vec<f64> = dv.comp.iter().zip(&h.log_parts()[0]).map(|(v, p)| v * p.exp()).collect();
    let x = gauge_solve(h, &rhs)?;
    let e = t.sub(&lie_derivative(&x, h)?)?;
    Ok((e, x))
}

/// Orthonormal kernel basis of `Δ_L` at the family member `h` (dimension 1 in the ansatz).
pub fn kernel_basis(h: &CohomMetric) -> Result<KernelBasis> {
    let (e, x) = gauge_corrected_tangent(h)?;
    let t = eh_family_tangent(h);
    let nrm = l2_inner(h, &e, &e)?.sqrt();
    if !(nrm > 0.0) {
        return Err(Error::KernelConstruction { residual: f64::NAN, tol: KERNEL_TOL });
    }
    let sign = if l2_inner(h, &e, &t)? >= 0.0 { 1.0 } else { -1.0 };
    let e = e.scaled(sign / nrm);
    let lap = lichnerowicz(h, &e)?;
    let residual = l2_inner(h, &lap, &lap)?.sqrt() / norm(&e, &NormSpec::wkp(2, 2.0), h)?;
    if !(residual <= KERNEL_TOL) {
        return Err(Error::KernelConstruction { residual, tol: KERNEL_TOL });
    }
    Ok(KernelBasis { elements: vec![e], base_eps: h.eps, residuals: vec![residual], gauge_fields: vec![x] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Parallel,
    Perp,
}

fn coefficients(h: &CohomMetric, basis: &KernelBasis, k: &InvariantTensor) -> Result<Vec<f64>> {
    basis.elements.iter().map(|e| l2_inner(h, k, e)).collect()
}

/// `Π∥_h k = Σ ⟨k, e_i⟩ e_i` or `Π⊥_h k = k − Π∥_h k`.
pub fn project(h: &CohomMetric, basis: &KernelBasis, k: &InvariantTensor, mode: Projection) -> Result<InvariantTensor> {
    basis.check_reference(h)?;
    let c = coefficients(h, basis, k)?;
    let mut par = InvariantTensor::zeros(h);
    for (ci, e) in c.iter().zip(&basis.elements) {
        par = par.axpy(*ci, e)?;
    }
    match mode {
        Projection::Parallel => Ok(par),
        Projection::Perp => k.sub(&par),
    }
}

/// Transfer matrix `A_ij = ⟨e_i(h), e_j(h̄)⟩_{L²(h)}` with both sides in the frame of `h`.
fn transfer_matrix(h: &CohomMetric, hb: &CohomMetric, b: &KernelBasis, bb: &KernelBasis) -> Result<DMatrix<f64>> {
    let m = b.dim();
    if bb.dim() != m {
        return Err(Error::Contract("kernel bases have different dimensions".into()));
    }
    let ebar: Vec<InvariantTensor> = bb.elements.iter().map(|e| e.reframe(hb, h)).collect::<Result<_>>()?;
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = l2_inner(h, &b.elements[i], &ebar[j])?;
        }
    }
    let det = a.determinant();
    if det.abs() < TRANSFER_FLOOR {
        return Err(Error::GaugeDistance(det));
    }
    Ok(a)
}

/// `(Π⊥_{h,h̄})^{-1} k̄`: the unique `k ⊥_h ker(h)` with `Π⊥_{h̄} k = k̄`, in the frame of `h`.
///
/// Solved as `k = k̄ + Σ c_j ē_j` with `⟨k, e_i⟩_h = 0`.
pub fn transfer_inverse(
    h: &CohomMetric,
    hb: &CohomMetric,
    bases: (&KernelBasis, &KernelBasis),
    kb: &InvariantTensor,
) -> Result<InvariantTensor> {
    let (b, bb) = bases;
    b.check_reference(h)?;
    bb.check_reference(hb)?;
    let a = transfer_matrix(h, hb, b, bb)?;
    let k_h = kb.reframe(hb, h)?;
    let rhs = DVector::from_vec(coefficients(h, b, &k_h)?.into_iter().map(|v| -v).collect());
    let c = a.lu().solve(&rhs).ok_or(Error::GaugeDistance(0.0))?;
    let mut out = k_h;
    for (j, e) in bb.elements.iter().enumerate() {
        out = out.axpy(c[j], &e.reframe(hb, h)?)?;
    }
    Ok(out)
}

/// The same map through the composition `id − (Π∥_{h̄,h})^{-1} ∘ Π∥_h`.
pub fn transfer_inverse_composed(
    h: &CohomMetric,
    hb: &CohomMetric,
    bases: (&KernelBasis, &KernelBasis),
    kb: &InvariantTensor,
) -> Result<InvariantTensor> {
    let (b, bb) = bases;
    b.check_reference(h)?;
    bb.check_reference(hb)?;
    let k_h = kb.reframe(hb, h)?;
    // Π∥_h k̄ in coordinates of the basis e(h)
    let y = DVector::from_vec(coefficients(h, b, &k_h)?);
    // Π∥_{h̄,h} sends ē_j to Σ_i A_ij e_i
    let a = transfer_matrix(h, hb, b, bb)?;
    let inv = a.try_inverse().ok_or(Error::GaugeDistance(0.0))?;
    let z = inv * y;
    let mut out = k_h;
    for (j, e) in bb.elements.iter().enumerate() {
        out = out.axpy(-z[j], &e.reframe(hb, h)?)?;
    }
    Ok(out)
}

/// `Π⊥_{h,h̄} k = Π⊥_{h̄} k` for `k` given in the frame of `h`; result in the frame of `h̄`.
pub fn transfer_perp(h: &CohomMetric, hb: &CohomMetric, bb: &KernelBasis, k: &InvariantTensor) -> Result<InvariantTensor> {
    project(hb, bb, &k.reframe(h, hb)?, Projection::Perp)
}

/// Family members over a fixed reference, with cached kernel bases.
#[derive(Debug)]
pub struct ModuliFamily {
    reference: CohomMetric,
    cache: Mutex<Vec<(u64, Arc<ModuliPoint>, Arc<KernelBasis>)>>,
}

const CACHE_SIZE: usize = 256;

/// Sample count of the sign scan over the bracket.
pub const SCAN_POINTS: usize = 24;

impl ModuliFamily {
    pub fn new(reference: CohomMetric) -> Result<Self> {
        require_family(&reference)?;
        Ok(ModuliFamily { reference, cache: Mutex::new(Vec::new()) })
    }

    pub fn reference(&self) -> &CohomMetric {
        &self.reference
    }

    /// Family member `ε` in the gauge of the reference and its kernel basis.
    pub fn member(&self, eps: f64) -> Result<(Arc<ModuliPoint>, Arc<KernelBasis>)> {
        let key = eps.to_bits();
        if let Some((_, p, b)) = self.cache.lock().unwrap().iter().find(|(k, _, _)| *k == key) {
            return Ok((p.clone(), b.clone()));
        }
        let h = if eps == self.reference.eps { self.reference.clone() } else { eh_family_member(&self.reference, eps)? };
        let basis = kernel_basis(&h)?;
        let p = Arc::new(ModuliPoint { h, eps });
        let b = Arc::new(basis);
        let mut c = self.cache.lock().unwrap();
        if c.len() >= CACHE_SIZE {
            c.remove(0);
        }
        c.push((key, p.clone(), b.clone()));
        Ok((p, b))
    }

    /// `F(ε) = ⟨g − h(ε), e(ε)⟩_{L²(h(ε))}`.
    pub fn orthogonality(&self, g: &CohomMetric, eps: f64) -> Result<f64> {
        let (p, b) = self.member(eps)?;
        let k = p.h.difference(g)?;
        l2_inner(&p.h, &k, &b.elements[0])
    }

    fn refine(&self, g: &CohomMetric, mut lo: (f64, f64), mut hi: (f64, f64)) -> Result<f64> {
        for _ in 0..20 {
            if (hi.0 - lo.0) < 1e-6 * hi.0 {
                break;
            }
            let mid = 0.5 * (lo.0 + hi.0);
            let fm = self.orthogonality(g, mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if fm.signum() == lo.1.signum() {
                lo = (mid, fm);
            } else {
                hi = (mid, fm);
            }
        }
        self.secant(g, lo, hi)
    }

    fn secant(&self, g: &CohomMetric, a: (f64, f64), b: (f64, f64)) -> Result<f64> {
        let (mut x0, mut f0) = a;
        let (mut x1, mut f1) = b;
        for _ in 0..30 {
            if f1 == 0.0 || f1 == f0 {
                return Ok(x1);
            }
            let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
            if !(x2 > 0.0) {
                return Err(Error::Numeric(format!("secant left the family at ε = {x2}")));
            }
            if (x2 - x1).abs() <= 1e-14 * x1.abs() {
                return Ok(x2);
            }
            (x0, f0) = (x1, f1);
            x1 = x2;
            f1 = self.orthogonality(g, x1)?;
        }
        Ok(x1)
    }

    fn check_domain(&self, g: &CohomMetric, xs: &[f64]) -> Result<()> {
        let mut d = f64::INFINITY;
        for &x in xs {
            let (p, _) = self.member(x)?;
            d = d.min(p.h.difference(g)?.max_abs());
        }
        if !(d <= 0.2) {
            return Err(Error::Domain(format!("metric is {d:.3} from the family in the frame norm (limit 0.2)")));
        }
        Ok(())
    }

    /// `Φ(g)` by a sign scan of `F` over `[ε₀/2, 2ε₀]` followed by bisection and secant steps.
    pub fn project(&self, g: &CohomMetric, eps0: f64) -> Result<(ModuliPoint, InvariantTensor)> {
        let (lo, hi) = (0.5 * eps0, 2.0 * eps0);
        let mut xs: Vec<f64> =
            (0..SCAN_POINTS).map(|j| lo * (hi / lo).powf(j as f64 / (SCAN_POINTS - 1) as f64)).collect();
        xs.push(eps0);
        xs.sort_by(f64::total_cmp);
        self.check_domain(g, &xs)?;
        let fs: Vec<f64> = xs.iter().map(|&x| self.orthogonality(g, x)).collect::<Result<_>>()?;
        let mut roots = Vec::new();
        for j in 0..xs.len() {
            if fs[j] == 0.0 {
                roots.push(xs[j]);
            } else if j + 1 < xs.len() && fs[j + 1] != 0.0 && fs[j].signum() != fs[j + 1].signum() {
                roots.push(self.refine(g, (xs[j], fs[j]), (xs[j + 1], fs[j + 1]))?);
            }
        }
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        match roots.len() {
            0 => Err(Error::ProjectionDomain { lo, hi }),
            1 => self.finish(g, roots[0]),
            _ => Err(Error::Ambiguity(roots)),
        }
    }

    /// Local version of [`ModuliFamily::project`] for continuation along a flow: secant from `guess`.
    pub fn track(&self, g: &CohomMetric, guess: f64) -> Result<(ModuliPoint, InvariantTensor)> {
        let d = 1e-4 * guess;
        let a = (guess, self.orthogonality(g, guess)?);
        if a.1 == 0.0 {
            return self.finish(g, guess);
        }
        let b = (guess + d, self.orthogonality(g, guess + d)?);
        match self.secant(g, a, b) {
            Ok(eps) if (eps / guess - 1.0).abs() < 0.1 => self.finish(g, eps),
            _ => self.project(g, guess),
        }
    }

    fn finish(&self, g: &CohomMetric, eps: f64) -> Result<(ModuliPoint, InvariantTensor)> {
        let (p, _) = self.member(eps)?;
        let k = p.h.difference(g)?;
        Ok(((*p).clone(), k))
    }

    /// `|⟨k, e⟩| / (‖k‖‖e‖)` at a projected point.
    pub fn orthogonality_certificate(&self, point: &ModuliPoint, k: &InvariantTensor) -> Result<f64> {
        let (p, b) = self.member(point.eps)?;
        let k = k.clone().rebase(&p.h);
        let kk = l2_inner(&p.h, &k, &k)?.sqrt();
        if kk == 0.0 {
            return Ok(0.0);
        }
        Ok(l2_inner(&p.h, &k, &b.elements[0])?.abs() / kk)
    }

    /// `∂_ε F` at fixed `g` by a central difference.
    pub fn orthogonality_slope(&self, g: &CohomMetric, eps: f64) -> Result<f64> {
        let d = 1e-4 * eps;
        Ok((self.orthogonality(g, eps + d)? - self.orthogonality(g, eps - d)?) / (2.0 * d))
    }

    /// `D_gΦ(w)` as the parameter velocity `dε*/ds` for `g_s = g + s·w`, `w` in the frame of `h(ε*)`.
    pub fn d_phi(&self, g: &CohomMetric, eps: f64, w: &InvariantTensor) -> Result<f64> {
        let (p, b) = self.member(eps)?;
        let w = w.clone().rebase(&p.h);
        let slope = self.orthogonality_slope(g, eps)?;
        if slope == 0.0 {
            return Err(Error::Numeric("orthogonality function is flat in ε".into()));
        }
        Ok(-l2_inner(&p.h, &w, &b.elements[0])? / slope)
    }

    /// `C⁰` frame size of `V(h(ε), ĥ)`: zero only for a truly gauged family.
    pub fn gauge_residual(&self, eps: f64) -> Result<f64> {
        let (p, _) = self.member(eps)?;
        Ok(deturck_field(&p.h, &self.reference)?.c0_norm(&p.h))
    }
}

/// `‖Δ_L e‖_{L²}/‖e‖_{W^{2,2}}` and the decay exponent of `|e|` on `[10ε, r_max/2]`.
pub fn kernel_certificate(h: &CohomMetric, basis: &KernelBasis) -> Result<(f64, RateFit)> {
    let r_max = h.r()[h.len() - 1];
    let fit = basis.decay_fit(h, 10.0 * h.eps, 0.5 * r_max)?;
    Ok((basis.residuals[0], fit))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::eguchi_hanson;
    use crate::grid::RadialGrid;
    use crate::operators::{deturck_linear, lie_derivative};

    fn eh(r: f64, n: usize, eps: f64) -> CohomMetric {
        eguchi_hanson(eps, &Arc::new(RadialGrid::build(r, n, 1.004, 2).unwrap())).unwrap()
    }

    #[test]
    fn gauge_solve_matches_composition() {
        let h = eh(60.0, 1500, 1.0);
        let x = RadialVector::from_fn(h.grid(), |u| u * (-u * u / 4.0).exp());
        let lhs = deturck_linear(&h, &lie_derivative(&x, &h).unwrap()).unwrap();
        let rhs: Vec<f64> = lhs.comp.iter().zip(&h.log_parts()[0]).map(|(v, p)| v * p.exp()).collect();
        let y = gauge_solve(&h, &rhs).unwrap();
        let err = x.comp.iter().zip(&y.comp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn kernel_is_certified() {
        let h = eh(200.0, 2500, 1.0);
        let b = kernel_basis(&h).unwrap();
        let g = b.gram(&h).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-8);
        let (res, fit) = kernel_certificate(&h, &b).unwrap();
        assert!(res <= KERNEL_TOL);
        assert!((fit.exponent + 4.0).abs() < 0.3, "{}", fit.exponent);
    }

    #[test]
    fn projectors() {
        let h = eh(60.0, 1200, 1.0);
        let b = kernel_basis(&h).unwrap();
        let e = &b.elements[0];
        let par = project(&h, &b, e, Projection::Parallel).unwrap();
        assert!(par.sub(e).unwrap().max_abs() < 1e-8);
        assert!(project(&h, &b, e, Projection::Perp).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn family_member_projects_to_itself() {
        let h = eh(60.0, 1200, 1.0);
        let fam = ModuliFamily::new(h.clone()).unwrap();
        let g = eh_family_member(&h, 1.1).unwrap();
        let (p, k) = fam.project(&g, 1.0).unwrap();
        assert!((p.eps - 1.1).abs() < 1e-8, "{}", p.eps);
        assert!(k.max_abs() < 1e-8);
    }
}
