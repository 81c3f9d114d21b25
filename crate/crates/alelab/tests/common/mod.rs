//! Test-only oracles shared by the integration targets.
#![allow(dead_code)]

pub mod chart;

use std::sync::Arc;

use alelab::geometry::{CohomMetric, BOLT};
use alelab::grid::RadialGrid;

pub fn grid(r_max: f64, n: usize, stretch: f64) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::build(r_max, n, stretch, 2).unwrap())
}

/// Bolt-type metric from closed-form log-regular parts `φ_a(u)` (even functions).
pub fn metric_from(grid: &Arc<RadialGrid>, phi: impl Fn(f64) -> [f64; 4]) -> CohomMetric {
    let n = grid.len();
    let mut parts: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for (i, &u) in grid.nodes().iter().enumerate() {
        let p = phi(u);
        for a in 0..4 {
            parts[a][i] = p[a];
        }
    }
    let u = grid.nodes().to_vec();
    CohomMetric::from_log_parts(grid.clone(), parts, BOLT, u, vec![1.0; n], 1.0, 2, "closed-form").unwrap()
}

/// Coefficients `[f, a, b, c]` of the same closed-form bolt metric.
pub fn comps_from(phi: impl Fn(f64) -> [f64; 4]) -> impl Fn(f64) -> [f64; 4] {
    move |u| {
        let p = phi(u);
        [p[0].exp(), u * u * p[1].exp(), p[2].exp(), p[3].exp()]
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
