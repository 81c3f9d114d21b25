//! Lebesgue, Sobolev and weighted norms of invariant tensors, and the trajectory
//! norms `X`, `Z`, `Y` used by the iteration.
//!
//! Covariant derivatives are frame components of `∇k` and `∇²k` computed from the
//! connection of the reference metric. For a diagonal `k`,
//! `(∇_c k)_ab = δ_ab δ_c0 e_0(k_a) + ω_cab (k_a − k_b)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{CohomMetric, Frame, InvariantTensor};
use crate::grid::Parity;

/// Spatial dimension.
pub const DIM: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Lp,
    Wkp,
    WeightedWkp,
    X,
    Z,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub k: usize,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub delta: f64,
}

impl NormSpec {
    pub fn lp(p: f64) -> Self {
        NormSpec { kind: NormKind::Lp, k: 0, p, q: p, r: p, delta: 0.0 }
    }

    pub fn wkp(k: usize, p: f64) -> Self {
        NormSpec { kind: NormKind::Wkp, k, p, q: p, r: p, delta: 0.0 }
    }

    pub fn weighted(k: usize, p: f64, delta: f64) -> Self {
        NormSpec { kind: NormKind::WeightedWkp, k, p, q: p, r: p, delta }
    }

    pub fn trajectory(kind: NormKind, q: f64, r: f64) -> Self {
        NormSpec { kind, k: 2, p: q, q, r, delta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 1.0 && !x.is_nan();
        for (name, v) in [("p", self.p), ("q", self.q), ("r", self.r)] {
            if !open(v) {
                return Err(Error::Config(format!("{name} = {v} outside (1, ∞]")));
            }
        }
        if self.k > 2 {
            return Err(Error::Config(format!("derivative order {} above 2", self.k)));
        }
        if matches!(self.kind, NormKind::X | NormKind::Z | NormKind::Y) {
            if !(self.q < DIM) {
                return Err(Error::Config(format!("q = {} must lie in (1, {DIM})", self.q)));
            }
            if !(self.r > DIM && self.r.is_finite()) {
                return Err(Error::Config(format!("r = {} must lie in ({DIM}, ∞)", self.r)));
            }
            if !(0.5 * DIM * (1.0 / self.q - 1.0 / self.r) > 0.5) {
                return Err(Error::Config("n/2 (1/q − 1/r) must exceed 1/2".into()));
            }
        }
        Ok(())
    }
}

/// Frame components `T[c][a][b]` of `∇k` at every node.
pub fn covariant_derivative(h: &CohomMetric, fr: &Frame, k: &InvariantTensor) -> Result<Vec<[[[f64; 4]; 4]; 4]>> {
    k.check_reference(h)?;
    let grid = h.grid();
    let n = h.len();
    let dk: [Vec<f64>; 4] = std::array::from_fn(|a| grid.d1(&k.comps[a], Parity::Even));
    let mut t = vec![[[[0.0; 4]; 4]; 4]; n];
    for i in 1..n {
        let w = fr.connection(i);
        let sf = fr.f[i].sqrt();
        for c in 0..4 {
            for a in 0..4 {
                for b in 0..4 {
                    let mut v = w[c][a][b] * (k.comps[a][i] - k.comps[b][i]);
                    if c == 0 && a == b {
                        v += dk[a][i] / sf;
                    }
                    t[i][c][a][b] = v;
                }
            }
        }
    }
    if n > 2 {
        t[0] = extrapolate(&t[1], &t[2]);
    }
    Ok(t)
}

fn extrapolate<const N: usize>(a: &[[[f64; 4]; 4]; N], b: &[[[f64; 4]; 4]; N]) -> [[[f64; 4]; 4]; N] {
    let mut out = *a;
    for x in 0..N {
        for y in 0..4 {
            for z in 0..4 {
                out[x][y][z] = 2.0 * a[x][y][z] - b[x][y][z];
            }
        }
    }
    out
}

/// Pointwise norms `|k|`, `|∇k|`, `|∇²k|` up to order `order`.
pub fn derivative_magnitudes(h: &CohomMetric, k: &InvariantTensor, order: usize) -> Result<Vec<Vec<f64>>> {
    k.check_reference(h)?;
    let mut out = vec![k.pointwise_norm()];
    if order == 0 {
        return Ok(out);
    }
    let fr = Frame::new(h);
    let t = covariant_derivative(h, &fr, k)?;
    out.push(t.iter().map(|x| x.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt()).collect());
    if order == 1 {
        return Ok(out);
    }
    let n = h.len();
    let grid = h.grid();
    // radial derivative of every component of T, then the connection terms on all three slots
    let mut dt = vec![[[[0.0; 4]; 4]; 4]; n];
    for c in 0..4 {
        for a in 0..4 {
            for b in 0..4 {
                let s: Vec<f64> = t.iter().map(|x| x[c][a][b]).collect();
                let ds = grid.d1(&s, Parity::Odd);
                for i in 0..n {
                    dt[i][c][a][b] = ds[i];
                }
            }
        }
    }
    let mut mag = vec![0.0; n];
    for i in 1..n {
        let w = fr.connection(i);
        let sf = fr.f[i].sqrt();
        let ti = &t[i];
        let mut s = 0.0;
        for d in 0..4 {
            for c in 0..4 {
                for a in 0..4 {
                    for b in 0..4 {
                        let mut v = if d == 0 { dt[i][c][a][b] / sf } else { 0.0 };
                        for x in 0..4 {
                            v -= w[d][c][x] * ti[x][a][b] + w[d][a][x] * ti[c][x][b] + w[d][b][x] * ti[c][a][x];
                        }
                        s += v * v;
                    }
                }
            }
        }
        mag[i] = s.sqrt();
    }
    if n > 2 {
        mag[0] = (2.0 * mag[1] - mag[2]).max(0.0);
    }
    out.push(mag);
    Ok(out)
}

/// `(∫ |v|^p w dμ)^{1/p}`; `p = ∞` is the weighted sup over nodes.
pub fn field_lp(metric: &CohomMetric, values: &[f64], weight: Option<&[f64]>, p: f64) -> Result<f64> {
    if values.len() != metric.len() {
        return Err(Error::Contract("field length does not match grid".into()));
    }
    let wt = |i: usize| weight.map_or(1.0, |w| w[i]);
    if p.is_infinite() {
        return Ok((0..values.len()).map(|i| values[i].abs() * wt(i)).fold(0.0, f64::max));
    }
    let mu = metric.volume_weights();
    let s: f64 = (0..values.len()).map(|i| mu[i] * (values[i].abs() * wt(i)).powf(p)).sum();
    if s.is_nan() {
        return Err(Error::Numeric("NaN in norm quadrature".into()));
    }
    Ok(s.powf(1.0 / p))
}

/// `ρ = √(1 + u²)` with `u` the geodesic coordinate of the grid.
pub fn rho(metric: &CohomMetric) -> Vec<f64> {
    metric.grid().nodes().iter().map(|u| (1.0 + u * u).sqrt()).collect()
}

/// Norm of a tensor measured with `metric`, which must be its reference.
pub fn norm(k: &InvariantTensor, spec: &NormSpec, metric: &CohomMetric) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        NormKind::Lp => field_lp(metric, &k.pointwise_norm(), None, spec.p),
        NormKind::Wkp => {
            let mags = derivative_magnitudes(metric, k, spec.k)?;
            mags.iter().map(|m| field_lp(metric, m, None, spec.p)).sum()
        }
        NormKind::WeightedWkp => {
            let mags = derivative_magnitudes(metric, k, spec.k)?;
            let rho = rho(metric);
            let tail = if spec.p.is_infinite() { 0.0 } else { DIM / spec.p };
            let mut total = 0.0;
            for (j, m) in mags.iter().enumerate() {
                let w: Vec<f64> = rho.iter().map(|r| r.powf(j as f64 - spec.delta - tail)).collect();
                total += field_lp(metric, m, Some(&w), spec.p)?;
            }
            Ok(total)
        }
        _ => Err(Error::Config("trajectory norms need a trajectory, use trajectory_norms".into())),
    }
}

/// Norm of a scalar field (e.g. scalar curvature) with the given spec.
pub fn scalar_norm(values: &[f64], spec: &NormSpec, metric: &CohomMetric) -> Result<f64> {
    spec.validate()?;
    match spec.kind {
        NormKind::Lp => field_lp(metric, values, None, spec.p),
        _ => Err(Error::Config("only L^p norms are defined for scalar fields".into())),
    }
}

/// `(exponent, capped)` of the heat-kernel rate `‖∇^i e^{−tΔ}k‖_{L^q} ≲ t^γ ‖k‖_{L^p}`.
pub fn predicted_exponent(n: f64, p: f64, q: f64, i: usize) -> Result<(f64, bool)> {
    if !(p > 1.0 && q >= p) {
        return Err(Error::Domain(format!("need 1 < p ≤ q, got p = {p}, q = {q}")));
    }
    let a = 0.5 * n * (1.0 / p - 1.0 / q) + 0.5 * i as f64;
    let cap = 0.5 * n / p;
    if a < cap {
        Ok((-a, false))
    } else {
        Ok((-cap, true))
    }
}

/// One stored time of a trajectory as seen by the trajectory norms.
#[derive(Debug, Clone)]
pub struct NormSnapshot {
    pub t: f64,
    /// Reference metric `h_t`; `k` is expressed in its frame.
    pub h: CohomMetric,
    pub k: InvariantTensor,
    /// `h_t − ĥ` in the frame of `ĥ`.
    pub h_dev: InvariantTensor,
    /// `∂_t h_t` in the frame of `ĥ`.
    pub dh_dt: InvariantTensor,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormTerm {
    pub name: String,
    pub value: f64,
    pub argmax_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub spec: NormSpec,
    pub value: f64,
    pub argmax_time: f64,
    pub terms: Vec<NormTerm>,
    pub x: f64,
    pub z: f64,
    pub y: f64,
    pub snapshots: usize,
}

fn sup_term(name: &str, rows: &[(f64, f64)]) -> NormTerm {
    let (t, v) = rows.iter().copied().fold((f64::NAN, 0.0), |acc, (t, v)| if v > acc.1 || acc.0.is_nan() { (t, v) } else { acc });
    NormTerm { name: name.into(), value: v, argmax_time: t }
}

/// Per-snapshot values of the `X` bracket and the `Z` bracket.
pub fn snapshot_brackets(s: &NormSnapshot, h_hat: &CohomMetric, q: f64, r: f64) -> Result<[f64; 6]> {
    let mags = derivative_magnitudes(&s.h, &s.k, 2)?;
    let lq: Vec<f64> = mags.iter().map(|m| field_lp(&s.h, m, None, q)).collect::<Result<_>>()?;
    let w2r: f64 = mags.iter().map(|m| field_lp(&s.h, m, None, r)).sum::<Result<f64>>()?;
    let beta = (0.5 * DIM * (1.0 / q - 1.0 / r)).min(1.0);
    let gamma = DIM * (1.0 / q - 1.0 / r);
    let t = s.t;
    let zq = field_lp(h_hat, &s.h_dev.pointwise_norm(), None, q)?;
    let zd = field_lp(h_hat, &s.dh_dt.pointwise_norm(), None, q)?;
    Ok([lq[0], t.sqrt() * lq[1], t.powf(beta) * (lq[2] + w2r), zq, t.powf(gamma) * zd, 0.0])
}

/// `‖k‖_X`, `‖h‖_Z` and `Y = X + Z` as sups over stored snapshots.
pub fn trajectory_norms(snaps: &[NormSnapshot], h_hat: &CohomMetric, q: f64, r: f64) -> Result<NormReport> {
    let spec = NormSpec::trajectory(NormKind::Y, q, r);
    spec.validate()?;
    if snaps.iter().any(|s| !(s.t >= 1.0)) {
        return Err(Error::Domain("trajectory norms are defined for t ≥ 1".into()));
    }
    let rows: Vec<[f64; 6]> = snaps.iter().map(|s| snapshot_brackets(s, h_hat, q, r)).collect::<Result<_>>()?;
    let col = |j: usize| -> Vec<(f64, f64)> { snaps.iter().zip(&rows).map(|(s, v)| (s.t, v[j])).collect() };
    let xs: Vec<(f64, f64)> = snaps.iter().zip(&rows).map(|(s, v)| (s.t, v[0] + v[1] + v[2])).collect();
    let zs: Vec<(f64, f64)> = snaps.iter().zip(&rows).map(|(s, v)| (s.t, v[3] + v[4])).collect();
    let terms = vec![
        sup_term("k_Lq", &col(0)),
        sup_term("t^1/2 grad_k_Lq", &col(1)),
        sup_term("t^beta (hess_k_Lq + k_W2r)", &col(2)),
        sup_term("h_Lq", &col(3)),
        sup_term("t^gamma dh_dt_Lq", &col(4)),
        sup_term("X", &xs),
        sup_term("Z", &zs),
    ];
    let x = terms[5].value;
    let z = terms[6].value;
    let argmax_time = if x >= z { terms[5].argmax_time } else { terms[6].argmax_time };
    Ok(NormReport { spec, value: x + z, argmax_time, terms, x, z, y: x + z, snapshots: snaps.len() })
}

/// Measured constant `C` in `‖g − ĥ‖_{L^q} + ‖g − ĥ‖_{W^{1,∞}} ≤ C·Y`.
pub fn norm_control_constant(gs: &[(f64, CohomMetric)], h_hat: &CohomMetric, q: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain("Y norm must be positive".into()));
    }
    let mut lhs: f64 = 0.0;
    for (_, g) in gs {
        let d = h_hat.difference(g)?;
        let v = norm(&d, &NormSpec::lp(q), h_hat)? + norm(&d, &NormSpec::wkp(1, f64::INFINITY), h_hat)?;
        lhs = lhs.max(v);
    }
    Ok(lhs / y)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::geometry::flat_metric;
    use crate::grid::RadialGrid;

    fn flat(r: f64, n: usize) -> CohomMetric {
        flat_metric(&Arc::new(RadialGrid::build(r, n, 1.0, 2).unwrap()))
    }

    #[test]
    fn indicator_volume() {
        let h = flat(10.0, 2001);
        let k = InvariantTensor::from_fn(&h, |_, u| if u < 3.0 { [1.0, 0.0, 0.0, 0.0] } else { [0.0; 4] });
        // ball of radius 3 in R⁴/Z₂
        let vol = 0.5 * PI * PI / 2.0 * 81.0;
        for p in [2.0, 3.0, 4.0] {
            let v = norm(&k, &NormSpec::lp(p), &h).unwrap();
            assert!((v / vol.powf(1.0 / p) - 1.0).abs() < 0.02, "{p} {v}");
        }
        assert_eq!(norm(&k, &NormSpec::lp(f64::INFINITY), &h).unwrap(), 1.0);
    }

    #[test]
    fn predicted_exponents() {
        assert_eq!(predicted_exponent(4.0, 2.0, 4.0, 0).unwrap(), (-0.5, false));
        assert_eq!(predicted_exponent(4.0, 2.0, 2.0, 2).unwrap(), (-1.0, true));
        assert_eq!(predicted_exponent(4.0, 3.0, 3.0, 0).unwrap(), (0.0, false));
        assert_eq!(predicted_exponent(4.0, 2.0, f64::INFINITY, 0).unwrap(), (-1.0, true));
    }

    #[test]
    fn spec_validation() {
        assert!(NormSpec::lp(1.0).validate().is_err());
        assert!(NormSpec::trajectory(NormKind::X, 2.0, 8.0).validate().is_ok());
        assert!(NormSpec::trajectory(NormKind::X, 3.0, 5.0).validate().is_err());
        assert!(NormSpec::trajectory(NormKind::X, 2.0, f64::INFINITY).validate().is_err());
    }

    #[test]
    fn gradient_of_radial_scalar_type() {
        let h = flat(20.0, 1601);
        let k = InvariantTensor::from_fn(&h, |_, u| [(-u * u).exp(); 4]);
        let m = derivative_magnitudes(&h, &k, 2).unwrap();
        let i = h.grid().index_at(1.0);
        let u = h.grid().nodes()[i];
        // |∇(φ g)| = 2|φ'| for a pure trace tensor in 4 dimensions
        let exact = 2.0 * 2.0 * u * (-u * u).exp();
        assert!((m[1][i] - exact).abs() < 1e-3, "{} {exact}", m[1][i]);
        // |∇²(φ g)|² = 4 |Hess φ|² = 4(φ''² + 3 (φ'/u)²)
        let d1 = -2.0 * u * (-u * u).exp();
        let d2 = (4.0 * u * u - 2.0) * (-u * u).exp();
        let exact2 = 2.0 * (d2 * d2 + 3.0 * (d1 / u).powi(2)).sqrt();
        assert!((m[2][i] - exact2).abs() < 2e-3, "{} {exact2}", m[2][i]);
    }

    #[test]
    fn weighted_borderline_diverges() {
        let norm_at = |r: f64, delta: f64| {
            let h = flat(r, (r * 20.0) as usize);
            let k = InvariantTensor::from_fn(&h, |_, u| [(1.0 + u * u).powi(-2), 0.0, 0.0, 0.0]);
            norm(&k, &NormSpec::weighted(0, 2.0, delta), &h).unwrap()
        };
        let (a, b) = (norm_at(50.0, -4.0), norm_at(400.0, -4.0));
        assert!(b > 1.1 * a, "{a} {b}");
        let (a, b) = (norm_at(50.0, -2.0), norm_at(400.0, -2.0));
        assert!((b / a - 1.0).abs() < 1e-3, "{a} {b}");
    }
}
