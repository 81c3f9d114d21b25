mod common;

use alelab::flow::picard::{picard_solve, PicardConfig};
use alelab::flow::{run_moving_gauge_from, RunOptions};
use alelab::gauge::{project, ModuliFamily, Projection};
use alelab::geometry::{eguchi_hanson, InvariantTensor};
use alelab::norms::{norm, NormSpec};
use alelab::operators::DtPolicy;

fn family() -> ModuliFamily {
    ModuliFamily::new(eguchi_hanson(1.0, &common::grid(40.0, 1000, 1.004)).unwrap()).unwrap()
}

fn small_data(fam: &ModuliFamily, amp: f64) -> InvariantTensor {
    let (p, b) = fam.member(1.0).unwrap();
    let bump = InvariantTensor::from_fn(&p.h, |_, u| {
        let b = (-(u - 3.0).powi(2)).exp() + (-(u + 3.0).powi(2)).exp();
        let q = u * u / (1.0 + u * u);
        [0.3 * b, (0.3 - 0.5 * q) * b, 0.5 * b, (0.5 - 0.4 * q) * b]
    });
    project(&p.h, &b, &bump, Projection::Perp).unwrap().scaled(amp)
}

#[test]
fn zero_data_is_a_fixed_point() {
    let fam = family();
    let (p, _) = fam.member(1.0).unwrap();
    let k1 = InvariantTensor::zeros(&p.h);
    let (state, _) = picard_solve(&fam, 1.0, &k1, 1.0, &PicardConfig::new(3.0, DtPolicy::fixed(0.05))).unwrap();
    assert!(state.converged);
    assert_eq!(state.record, vec![0.0]);
    assert!(state.k.iter().all(|k| k.max_abs() == 0.0));
    assert!(state.eps.iter().all(|&e| e == 1.0));
}

#[test]
fn fixed_point_matches_moving_gauge_flow() {
    let fam = family();
    let k1 = small_data(&fam, 0.01);
    let policy = DtPolicy::fixed(0.01);
    let (state, traj) = picard_solve(&fam, 1.0, &k1, 1.0, &PicardConfig::new(10.0, policy)).unwrap();
    assert!(state.converged && state.record.len() <= 8, "{:?}", state.record);
    let ratios = state.ratios();
    assert!(ratios.iter().take(2).any(|&r| r <= 0.5), "{ratios:?}");

    let (p, _) = fam.member(1.0).unwrap();
    let mut opts = RunOptions::new(policy);
    opts.snapshot_times = state.mesh.clone();
    let direct = run_moving_gauge_from(&p.h.perturbed(&k1).unwrap(), 1.0, &fam, 10.0, &opts).unwrap();
    let href = fam.reference();
    let l2 = |k: &InvariantTensor| norm(k, &NormSpec::lp(2.0), href).unwrap();
    let mut worst: f64 = 0.0;
    for s in &traj.snapshots {
        let d = direct.snapshot_at(s.t).unwrap();
        let diff = href.difference(&s.g).unwrap().sub(&href.difference(&d.g).unwrap()).unwrap();
        let size = href.difference(&d.g).unwrap().sub(&href.difference(&d.h).unwrap()).unwrap();
        worst = worst.max(l2(&diff) / l2(&size));
    }
    assert!(worst <= 1e-3, "{worst}");
}
