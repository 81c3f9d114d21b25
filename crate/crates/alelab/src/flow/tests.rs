use std::sync::Arc;

use super::*;
use crate::geometry::eguchi_hanson;
use crate::grid::RadialGrid;

fn eh(r: f64, n: usize) -> CohomMetric {
    eguchi_hanson(1.0, &Arc::new(RadialGrid::build(r, n, 1.004, 2).unwrap())).unwrap()
}

fn bumped(h: &CohomMetric, amp: f64) -> CohomMetric {
    let k = InvariantTensor::from_fn(h, |_, u| {
        let b = (-(u - 3.0).powi(2)).exp() + (-(u + 3.0).powi(2)).exp();
        let q = u * u / (1.0 + u * u);
        [0.3 * amp * b, (0.3 - 0.5 * q) * amp * b, 0.5 * amp * b, (0.5 - 0.4 * q) * amp * b]
    });
    h.perturbed(&k).unwrap()
}

fn rel_l2(h: &CohomMetric, a: &InvariantTensor, b: &InvariantTensor) -> f64 {
    let d = a.sub(b).unwrap();
    norm(&d, &NormSpec::lp(2.0), h).unwrap() / norm(b, &NormSpec::lp(2.0), h).unwrap()
}

#[test]
fn forms_agree_nodewise() {
    let h = eh(60.0, 1200);
    let g = bumped(&h, 0.2);
    let a = rhs_rdt1(&g, &h).unwrap();
    let b = rhs_rdt3(&g, &h).unwrap();
    let scale = a.max_abs();
    let d = a.sub(&b).unwrap().max_abs();
    assert!(d <= 1e-9 * scale, "{d} {scale}");
}

#[test]
fn rdt1_matches_direct() {
    let h = eh(60.0, 1200);
    let g = bumped(&h, 0.2);
    let a = rhs_rdt1(&g, &h).unwrap();
    let c = rhs_direct(&g, &h).unwrap();
    let r = rel_l2(&h, &a, &c);
    assert!(r < 2e-3, "{r}");
}

#[test]
fn f1_is_diagonal() {
    let h = eh(60.0, 1200);
    let g = bumped(&h, 0.2);
    let k = h.difference(&g).unwrap();
    let fr = Frame::new(&h);
    let (f1, _, off) = quadratic_terms(&h, &fr, &k).unwrap();
    assert!(off <= 1e-12 * f1.max_abs().max(1e-300), "{off}");
}

#[test]
fn step_fixes_background() {
    let h = eh(60.0, 600);
    let g = rdt_step(&h, &h, 0.1).unwrap();
    assert_eq!(h.difference(&g).unwrap().max_abs(), 0.0);
}

#[test]
fn step_is_consistent_with_direct_form() {
    let h = eh(60.0, 1200);
    let g = bumped(&h, 0.05);
    let k0 = h.difference(&g).unwrap();
    let c = rhs_direct(&g, &h).unwrap();
    let mut errs = Vec::new();
    for dt in [1e-3, 5e-4] {
        let g1 = rdt_step(&g, &h, dt).unwrap();
        let k1 = h.difference(&g1).unwrap();
        let q = k1.sub(&k0).unwrap().scaled(1.0 / dt);
        errs.push(rel_l2(&h, &q, &c));
    }
    assert!(errs[1] < 0.05, "{errs:?}");
    assert!(errs[1] < 0.7 * errs[0], "{errs:?}");
}

#[test]
fn background_is_stationary() {
    let h = eh(60.0, 600);
    let traj = run_fixed_gauge(&h, &h, 2.0, &RunOptions::new(DtPolicy::fixed(0.1))).unwrap();
    let last = traj.rows.last().unwrap();
    assert!(last.linf_k <= 1e-10 * 2.0, "{}", last.linf_k);
    let fits = flow_diagnostics(&traj, &["L2_k", "Linf_k"], [0.5, 2.0]).unwrap();
    assert!(fits.iter().all(|f| f.fit.degenerate));
}

#[test]
fn family_member_is_a_fixed_point_of_the_moving_flow() {
    let h = eh(60.0, 1200);
    let fam = ModuliFamily::new(h.clone()).unwrap();
    let traj = run_moving_gauge(&h, &fam, 2.0, &RunOptions::new(DtPolicy::fixed(0.1))).unwrap();
    for r in &traj.rows {
        assert_eq!(r.eps, 1.0);
        assert!(r.linf_k <= 1e-8);
    }
}

#[test]
fn first_order_in_time() {
    let h = eh(60.0, 600);
    let g0 = bumped(&h, 0.05);
    let end = |dt: f64| {
        let mut o = RunOptions::new(DtPolicy::fixed(dt));
        o.snapshot_times = vec![0.4];
        let t = run_fixed_gauge(&g0, &h, 0.4, &o).unwrap();
        h.difference(&t.snapshot_at(0.4).unwrap().g).unwrap()
    };
    let (a, b, c) = (end(0.02), end(0.01), end(0.005));
    let e1 = a.sub(&b).unwrap().max_abs();
    let e2 = b.sub(&c).unwrap().max_abs();
    assert!(e1 / e2 > 1.6 && e1 / e2 < 2.5, "{e1} {e2}");
}

#[test]
fn moving_gauge_keeps_orthogonality() {
    let h = eh(60.0, 1200);
    let fam = ModuliFamily::new(h.clone()).unwrap();
    let g0 = bumped(&h, 0.02);
    let mut opts = RunOptions::new(DtPolicy::fixed(0.05));
    opts.snapshot_times = vec![1.0, 1.5, 2.0, 3.0];
    let traj = run_moving_gauge(&g0, &fam, 3.0, &opts).unwrap();
    for s in traj.snapshots.iter().filter(|s| s.t >= 1.0) {
        let (p, _) = fam.member(s.eps).unwrap();
        let c = fam.orthogonality_certificate(&p, &s.k).unwrap();
        assert!(c <= 1e-6, "t = {} certificate {c}", s.t);
    }
    let times = traj.times();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn shi_smoothing_constant_is_bounded() {
    let h = eh(60.0, 1200);
    let g0 = bumped(&h, 0.01);
    let k0 = h.difference(&g0).unwrap().max_abs();
    let mut opts = RunOptions::new(DtPolicy::fixed(0.01));
    opts.snapshot_times = (1..=10).map(|j| j as f64 * 0.1).collect();
    let traj = run_fixed_gauge(&g0, &h, 1.0, &opts).unwrap();
    let c: Vec<f64> = traj
        .snapshots
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| {
            let d = crate::norms::derivative_magnitudes(&h, &s.k, 1).unwrap();
            d[1].iter().fold(0.0f64, |m, v| m.max(*v)) * s.t.sqrt() / k0
        })
        .collect();
    let max = c.iter().copied().fold(0.0, f64::max);
    assert!(max < 10.0 && c.last().unwrap() <= &max, "{c:?}");
}

#[test]
fn csv_has_the_documented_columns() {
    let h = eh(60.0, 300);
    let traj = run_fixed_gauge(&h, &h, 0.2, &RunOptions::new(DtPolicy::fixed(0.1))).unwrap();
    let csv = traj.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,L2_k,L4_k,Linf_k,W12_k,V_C0,Ric_C0,scal_min,scal_max,eps,residual");
    assert_eq!(lines.count(), 3);
}
