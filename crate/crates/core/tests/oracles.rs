//! Oracle suites: every production path is checked against an independent
//! computation that shares no code with it beyond the field evaluation.

mod common;

use common::*;
use trapload::field_model::TrapGeometry;
use trapload::species::{ev_to_joules, IonSpecies};

#[test]
fn analytic_derivatives_match_finite_differences() {
    let e = derivative_errors(1000, SEED);
    println!("{e:?}");
    assert_eq!(e.points, 1000);
    assert!(e.gradient <= 1e-4, "gradient {e:?}");
    assert!(e.hessian <= 1e-4, "hessian {e:?}");
}

#[test]
fn trajectory_filter_agrees_with_full_dynamics() {
    let ke = IonSpecies::ba138().kinetic_energy(150.0);
    let cases = [
        (TrapGeometry::microfab(), microfab(100.0)),
        (TrapGeometry::microfab(), microfab(120.0)),
        (TrapGeometry::microfab(), microfab(150.0)),
        (TrapGeometry::pcb(), pcb(600.0)),
    ];
    let results: Vec<_> = cases
        .into_iter()
        .map(|(geom, drive)| {
            let a = classification_agreement(geom, drive, ke, 0.3, 300, SEED);
            println!("V = {} V: {a:?} fraction {:.3}", drive.v_rf, a.fraction());
            a
        })
        .collect();
    for a in results {
        assert!(a.total > 0);
        assert!(a.fraction() >= 0.9, "{a:?}");
    }
}

#[test]
fn loading_quadrature_matches_monte_carlo() {
    let cases = [
        (TrapGeometry::microfab(), microfab(70.0)),
        (TrapGeometry::microfab(), microfab(100.0)),
        (TrapGeometry::microfab(), microfab(150.0)),
        (TrapGeometry::pcb(), pcb(540.0)),
        (TrapGeometry::pcb(), pcb(700.0)),
        (TrapGeometry::pcb(), pcb(1000.0)),
    ];
    for (k, (geom, drive)) in cases.into_iter().enumerate() {
        let c = quadrature_vs_monte_carlo(geom, drive, 1_000_000, SEED + k as u64);
        println!("V = {} V: {c:?} rel {:.4}", drive.v_rf, c.relative_difference());
        assert!(c.quadrature > 0.0);
        assert!(c.relative_difference() <= 0.05, "{c:?}");
    }
}

#[test]
fn cascade_nests_and_converges_microfab() {
    let ke = IonSpecies::ba138().kinetic_energy(150.0);
    let c = nesting_and_convergence(TrapGeometry::microfab(), microfab(100.0), ke);
    println!("{c:?} {:?}", c.changes());
    assert!(c.nested);
    assert!(c.worst_change() <= 0.02, "{:?}", c.changes());
}

#[test]
fn cascade_nests_and_converges_pcb() {
    let ke = IonSpecies::ba138().kinetic_energy(150.0);
    let c = nesting_and_convergence(TrapGeometry::pcb(), pcb(600.0), ke);
    println!("{c:?} {:?}", c.changes());
    assert!(c.nested);
    assert!(c.worst_change() <= 0.02, "{:?}", c.changes());
}

#[test]
fn scale_fit_matches_scalar_minimizer() {
    let gap = scale_fit_gap(50, SEED);
    println!("gap {gap:e}");
    assert!(gap <= 1e-8, "{gap}");
}

#[test]
fn depth_bisection_helper_hits_target() {
    let g = TrapGeometry::microfab();
    let v = v_rf_for_true_depth(&g, &microfab(100.0), ev_to_joules(0.1));
    let d = trapload::field_model::true_trap_depth(&g, &microfab(v));
    assert!((d / ev_to_joules(0.1) - 1.0).abs() < 1e-9);
}
