// Copyright 2026 The twinbeam Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;

use num_complex::Complex64;

use twinbeam::atomic::{self, AtomicConfig};
use twinbeam::experiment::{self, PowerRecord, SpectrumTrace, TraceLabel};
use twinbeam::gaussian::CovarianceState;
use twinbeam::lumped::{self, LumpedConfig};
use twinbeam::propagation::{self, Rates, SlabProfile};

#[test]
fn profile_files_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.toml");
    let p = SlabProfile::piecewise(&[
        Rates { g: 0.0, alpha_a: 1.5, alpha_b: 0.0 },
        Rates { g: 1.2, alpha_a: 0.0, alpha_b: 0.3 },
        Rates { g: 0.4, alpha_a: 0.2, alpha_b: 0.2 },
    ])
    .unwrap();
    p.save(&path).unwrap();
    assert_eq!(SlabProfile::load(&path).unwrap(), p);

    fs::write(&path, "[[segment]]\ndz = 0.4\ng = 1.0\nalpha_a = 0.0\nalpha_b = 0.0\n").unwrap();
    assert!(SlabProfile::load(&path).is_err());
}

#[test]
fn slab_results_match_lumped_closed_form() {
    let input = CovarianceState::coherent(Complex64::new(1.0, 0.0));
    let (g, ta, tb) = (3.0f64, 0.5f64, 0.8f64);
    let p = SlabProfile::piecewise(&[
        Rates { g: 2.0 * propagation::amplifier_rate(g).unwrap(), alpha_a: 0.0, alpha_b: 0.0 },
        Rates { g: 0.0, alpha_a: -2.0 * ta.ln(), alpha_b: -2.0 * tb.ln() },
    ])
    .unwrap();
    let slab = propagation::refine_until_converged(&p, &input, 1e-12, 64).unwrap();
    let closed = lumped::cascade(&LumpedConfig::new(g, ta, tb).unwrap()).unwrap();
    assert!((slab.result.gemellity - closed.gemellity).abs() < 1e-10);
    assert!((slab.result.total_transmission() - closed.total_transmission).abs() < 1e-10);
    let csv = propagation::results_csv(&[("two-segment".into(), slab.result)]).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn atomic_config_drives_a_physical_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("atom.toml");
    fs::write(&path, "Delta_MHz = 800\nOmega_MHz = 420\ndepth = 500\ndelta_MHz = -40\n").unwrap();
    let p = AtomicConfig::load(&path).unwrap().to_params().unwrap();
    assert!((atomic::angular_to_mhz(p.two_photon) + 40.0).abs() < 1e-12);

    let grid = atomic::detuning_grid(atomic::mhz_to_angular(-100.0), atomic::mhz_to_angular(50.0), 31);
    let curve = atomic::gain_curves(&p, &grid, atomic::DEFAULT_SLABS).unwrap();
    assert_eq!(curve.deltas(), grid);
    for pt in &curve.points {
        assert!(pt.g_a >= 0.0 && pt.g_b >= 0.0);
        if let Some(nf) = pt.noise {
            assert!(nf.f_a >= 0.0 && nf.f_b >= 0.0 && nf.c_ab.abs() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn trace_files_load_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.csv");
    let freq: Vec<f64> = (1..=50).map(|k| 1e5 * k as f64).collect();
    let t = |label, level: f64| SpectrumTrace::new(label, freq.clone(), vec![level; freq.len()], 1e4).unwrap();
    let traces = [
        t(TraceLabel::Difference, -81.0),
        t(TraceLabel::Probe, -77.0),
        t(TraceLabel::Conjugate, -78.0),
        t(TraceLabel::Sql, -80.0),
    ];
    fs::write(&path, experiment::write_traces_csv(&traces.iter().collect::<Vec<_>>()).unwrap()).unwrap();
    let set = experiment::load_traces(&path).unwrap();
    let report = experiment::analyze(&set, PowerRecord::new(0.65, 0.35).unwrap(), Some(1e6)).unwrap();
    assert!((report.summary.gemellity_db + 1.80).abs() < 0.10);
    assert_eq!(report.traces.len(), 50);
    assert!(experiment::load_traces(&dir.path().join("missing.csv")).is_err());
}
