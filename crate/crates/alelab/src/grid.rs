//! Radial grid in the geodesic coordinate `u` with parity ghosts at the bolt.
//!
//! Nodes follow the odd map `u(ξ) = r_max sinh(βξ)/sinh(β(n-1))`, `β = ln(stretch)`,
//! so mirrored ghosts `u_{-i} = -u_i` lie on the same smooth map and centered
//! differences in the index coordinate stay second order across `u = 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    /// Paper coordinate under the flat identification `r = u`; metrics carry their own chart.
    r_of_u: Vec<f64>,
    quad_weights: Vec<f64>,
    jac: Vec<f64>,
    jac2: Vec<f64>,
    half_nodes: Vec<f64>,
    half_jac: Vec<f64>,
    ghost_count: usize,
    stretch: f64,
    r_max: f64,
}

pub const MIN_NODES: usize = 64;

impl RadialGrid {
    pub fn build(r_max: f64, n: usize, stretch: f64, ghost: usize) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::Config(format!("r_max must be positive, got {r_max}")));
        }
        if n < MIN_NODES {
            return Err(Error::Config(format!("n must be at least {MIN_NODES}, got {n}")));
        }
        if !(stretch >= 1.0) || !stretch.is_finite() {
            return Err(Error::Config(format!("stretch must be >= 1, got {stretch}")));
        }
        let beta = stretch.ln();
        let last = (n - 1) as f64;
        let map = |xi: f64| -> (f64, f64, f64) {
            if beta < 1e-12 {
                (r_max * xi / last, r_max / last, 0.0)
            } else {
                let s = r_max / (beta * last).sinh();
                (
                    s * (beta * xi).sinh(),
                    s * beta * (beta * xi).cosh(),
                    s * beta * beta * (beta * xi).sinh(),
                )
            }
        };
        let mut nodes = Vec::with_capacity(n);
        let mut jac = Vec::with_capacity(n);
        let mut jac2 = Vec::with_capacity(n);
        for i in 0..n {
            let (u, j, j2) = map(i as f64);
            nodes.push(u);
            jac.push(j);
            jac2.push(j2);
        }
        nodes[n - 1] = r_max;
        let mut half_nodes = Vec::with_capacity(n - 1);
        let mut half_jac = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let (u, j, _) = map(i as f64 + 0.5);
            half_nodes.push(u);
            half_jac.push(j);
        }
        let mut quad_weights = jac.clone();
        quad_weights[0] *= 0.5;
        quad_weights[n - 1] *= 0.5;
        Ok(RadialGrid {
            r_of_u: nodes.clone(),
            nodes,
            quad_weights,
            jac,
            jac2,
            half_nodes,
            half_jac,
            ghost_count: ghost,
            stretch,
            r_max,
        })
    }

    /// Same node map with every index gap halved: `n -> 2n-1`, `stretch -> sqrt(stretch)`.
    pub fn refined(&self) -> Result<Self> {
        RadialGrid::build(self.r_max, 2 * self.len() - 1, self.stretch.sqrt(), self.ghost_count)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn r_of_u(&self) -> &[f64] {
        &self.r_of_u
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// `du/dξ` at the nodes.
    pub fn jacobian(&self) -> &[f64] {
        &self.jac
    }

    /// Node positions at `ξ = i + 1/2`, `i = 0..n-2`.
    pub fn half_nodes(&self) -> &[f64] {
        &self.half_nodes
    }

    pub fn half_jacobian(&self) -> &[f64] {
        &self.half_jac
    }

    pub fn ghost_count(&self) -> usize {
        self.ghost_count
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn max_gap(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of the first node with `u >= x`.
    pub fn index_at(&self, x: f64) -> usize {
        self.nodes.partition_point(|&u| u < x).min(self.len() - 1)
    }

    /// Centered finite-difference derivative with parity ghosts at the bolt and a
    /// one-sided second-order stencil at the outer boundary.
    pub fn derivative(&self, field: &[f64], order: usize, parity: Option<Parity>) -> Result<Vec<f64>> {
        if field.len() != self.len() {
            return Err(Error::Contract(format!(
                "field has {} samples, grid has {}",
                field.len(),
                self.len()
            )));
        }
        let parity = parity.ok_or_else(|| {
            Error::Contract("derivative stencil reaches the bolt ghosts without a declared parity".into())
        })?;
        if field.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN in derivative input".into()));
        }
        match order {
            1 => Ok(self.d1(field, parity)),
            2 => Ok(self.d2(field, parity)),
            _ => Err(Error::Contract(format!("derivative order {order} not supported"))),
        }
    }

    #[inline]
    fn neighbours(&self, f: &[f64], i: usize, parity: Parity) -> (f64, f64) {
        let lo = if i == 0 { parity.sign() * f[1] } else { f[i - 1] };
        (lo, f[i + 1])
    }

    pub(crate) fn d1(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let (lo, hi) = self.neighbours(f, i, parity);
            out[i] = 0.5 * (hi - lo) / self.jac[i];
        }
        let fx = 0.5 * (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]);
        out[n - 1] = fx / self.jac[n - 1];
        if parity == Parity::Even {
            out[0] = 0.0;
        }
        out
    }

    pub(crate) fn d2(&self, f: &[f64], parity: Parity) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let (lo, hi) = self.neighbours(f, i, parity);
            let fx = 0.5 * (hi - lo);
            let fxx = hi - 2.0 * f[i] + lo;
            let j = self.jac[i];
            out[i] = (fxx - self.jac2[i] / j * fx) / (j * j);
        }
        let fx = 0.5 * (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]);
        let fxx = 2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4];
        let j = self.jac[n - 1];
        out[n - 1] = (fxx - self.jac2[n - 1] / j * fx) / (j * j);
        if parity == Parity::Odd {
            out[0] = 0.0;
        }
        out
    }

    /// `Σ w_i field_i weight_i`.
    pub fn integrate(&self, field: &[f64], weight: &[f64]) -> Result<f64> {
        if field.len() != self.len() || weight.len() != self.len() {
            return Err(Error::Contract("integrand length does not match grid".into()));
        }
        let s: f64 = self
            .quad_weights
            .iter()
            .zip(field)
            .zip(weight)
            .map(|((w, f), v)| w * f * v)
            .sum();
        if s.is_nan() {
            return Err(Error::Numeric("NaN in quadrature".into()));
        }
        Ok(s)
    }

    /// Value at `u = 0` of the even function through nodes 1 and 2 (linear in `u²`).
    #[inline]
    pub(crate) fn even_extrapolation(&self) -> (f64, f64) {
        let a = self.nodes[1] * self.nodes[1];
        let b = self.nodes[2] * self.nodes[2];
        (b / (b - a), -a / (b - a))
    }

    pub(crate) fn extrapolate_origin(&self, f: &mut [f64]) {
        let (c1, c2) = self.even_extrapolation();
        f[0] = c1 * f[1] + c2 * f[2];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_gap() {
        let g = RadialGrid::build(10.0, 64, 1.0, 2).unwrap();
        for w in g.nodes().windows(2) {
            assert!((w[1] - w[0] - 10.0 / 63.0).abs() < 1e-12);
        }
        assert_eq!(g.nodes()[0], 0.0);
    }

    #[test]
    fn graded_monotone() {
        let g = RadialGrid::build(400.0, 4000, 1.002, 2).unwrap();
        let u = g.nodes();
        assert!(u[1] - u[0] < u[3999] - u[3998]);
        assert!(u.windows(2).all(|w| w[1] > w[0]));
        assert!(g.quad_weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(RadialGrid::build(0.0, 64, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(RadialGrid::build(1.0, 10, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(RadialGrid::build(1.0, 64, 0.5, 2), Err(Error::Config(_))));
    }

    #[test]
    fn gaussian_quadrature() {
        let g = RadialGrid::build(10.0, 64, 1.0, 2).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| (-u * u).exp()).collect();
        let one = vec![1.0; g.len()];
        let v = g.integrate(&f, &one).unwrap();
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-6, "{v}");
        let g = RadialGrid::build(10.0, 400, 1.01, 2).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| (-u * u).exp()).collect();
        let v = g.integrate(&f, &vec![1.0; g.len()]).unwrap();
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn constant_and_zero() {
        let g = RadialGrid::build(1.0, 100, 1.0, 2).unwrap();
        let one = vec![1.0; g.len()];
        assert!((g.integrate(&one, &one).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(g.integrate(&vec![0.0; g.len()], &one).unwrap(), 0.0);
    }

    #[test]
    fn ball_volume() {
        let g = RadialGrid::build(3.0, 200, 1.01, 2).unwrap();
        let vol_s3 = 2.0 * std::f64::consts::PI.powi(2);
        let w: Vec<f64> = g.nodes().iter().map(|u| u.powi(3) * vol_s3 / 2.0).collect();
        let v = g.integrate(&vec![1.0; g.len()], &w).unwrap();
        let exact = std::f64::consts::PI.powi(2) * 81.0 / 4.0;
        assert!((v / exact - 1.0).abs() < 5e-3);
    }

    #[test]
    fn first_derivative() {
        let g = RadialGrid::build(2.0, 101, 1.0, 2).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| u * u).collect();
        let d = g.derivative(&f, 1, Some(Parity::Even)).unwrap();
        let i = g.index_at(1.0);
        assert!((d[i] - 2.0).abs() < 1e-10);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn odd_cube_at_bolt() {
        let g = RadialGrid::build(2.0, 101, 1.02, 2).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| u.powi(3)).collect();
        let d = g.derivative(&f, 1, Some(Parity::Odd)).unwrap();
        let u1 = g.nodes()[1];
        assert!(d[0].is_finite() && d[0].abs() <= 1.01 * u1 * u1);
        for (u, v) in g.nodes().iter().zip(&d).take(50) {
            assert!((v - 3.0 * u * u).abs() < 5e-3);
        }
    }

    #[test]
    fn missing_parity() {
        let g = RadialGrid::build(2.0, 64, 1.0, 2).unwrap();
        let f = vec![1.0; 64];
        assert!(matches!(g.derivative(&f, 1, None), Err(Error::Contract(_))));
    }

    #[test]
    fn second_derivative_refinement() {
        let err = |n: usize, s: f64| {
            let g = RadialGrid::build(3.0, n, s, 2).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|u| u.sin()).collect();
            let d = g.derivative(&f, 2, Some(Parity::Odd)).unwrap();
            g.nodes()
                .iter()
                .zip(&d)
                .map(|(u, v)| (v + u.sin()).abs())
                .fold(0.0, f64::max)
        };
        let g = RadialGrid::build(3.0, 101, 1.01, 2).unwrap();
        let e1 = err(101, 1.01);
        let g2 = g.refined().unwrap();
        let e2 = err(g2.len(), g2.stretch());
        assert!(e1 / e2 > 3.6, "{e1} {e2}");
    }

    #[test]
    fn even_derivative_vanishes_at_bolt() {
        let g = RadialGrid::build(5.0, 128, 1.01, 2).unwrap();
        let f: Vec<f64> = g.nodes().iter().map(|u| (u * u).cos()).collect();
        let d = g.derivative(&f, 1, Some(Parity::Even)).unwrap();
        assert!(d[0].abs() <= 1e-12);
    }
}
