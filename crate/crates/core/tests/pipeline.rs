//! Cross-module checks on small systems: the estimators agree with each other
//! and with exact results where one is available.

use lindiff_core::diffusion::{closed_form_ballistic, fit_diffusion, msd_ensemble, resolvent_over_configs, MsdSetup};
use lindiff_core::kernel::{build_kernel, presets, spectral_gap, validate};
use lindiff_core::momentum::{mixing_rate, JumpProcessModel};
use lindiff_core::{evolve, DensityState, DisorderField, Distribution, EvolveOptions, GeneratorParams, LatticeBox};
use proptest::prelude::*;

fn grid(t_max: f64, dt: f64) -> Vec<f64> {
    (0..=(t_max / dt).round() as usize).map(|k| k as f64 * dt).collect()
}

#[test]
fn free_msd_fit_matches_closed_form() {
    let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
    let params = GeneratorParams::new(1.0, 0.0, 2.0).unwrap();
    let setup = MsdSetup {
        lattice: LatticeBox::truncated(1, 60).unwrap(),
        coherence: Some(40),
        evolve: EvolveOptions { tol: 1e-9, ..EvolveOptions::default() },
    };
    let msd = msd_ensemble(&params, &kernel, &Distribution::default(), &[0], &grid(20.0, 0.5), &setup).unwrap();
    let fit = fit_diffusion(&msd, [10.0, 20.0]).unwrap().value();
    let exact = closed_form_ballistic(&kernel, 1.0, 2.0, 16).unwrap().value();
    assert!((fit - exact).abs() < 0.05 * exact, "fit {fit} vs {exact}");
}

#[test]
fn resolvent_without_disorder_reproduces_closed_form() {
    let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
    let c = spectral_gap(&kernel, 64).unwrap().value;
    let params = GeneratorParams::new(1.0, 0.0, 1.0).unwrap();
    let etas: Vec<f64> = (0..24).map(|k| 0.5 * c * 0.5f64.powi(k)).collect();
    let (est, _) =
        resolvent_over_configs(LatticeBox::periodic(1, 4).unwrap(), &params, &kernel, &Distribution::default(), &[0], 6, &etas).unwrap();
    let exact = closed_form_ballistic(&kernel, 1.0, 1.0, 16).unwrap().value();
    assert!((est.value() - exact).abs() < 1e-3 * exact, "{} vs {exact}", est.value());
}

#[test]
fn kernel_gap_equals_jump_process_rate() {
    for kernel in [build_kernel(&presets::cosine(1, 16), 2).unwrap(), build_kernel(&presets::uniform(1, 16), 2).unwrap()] {
        assert!(validate(&kernel).all_pass());
        let gap = spectral_gap(&kernel, 64).unwrap().value;
        let rate = mixing_rate(&JumpProcessModel::from_kernel(&kernel, 64).unwrap());
        assert!((gap - rate).abs() < 1e-8, "{gap} vs {rate}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_keeps_trace_and_hermiticity(u in 0.2f64..2.0, lambda in 0.0f64..5.0, g in 0.05f64..3.0, seed in 0u64..1000) {
        let lattice = LatticeBox::truncated(1, 5).unwrap();
        let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
        let field = DisorderField::sample(lattice, &Distribution::default(), seed).unwrap();
        let params = GeneratorParams::new(u, lambda, g).unwrap();
        let opts = EvolveOptions { boundary_tol: f64::INFINITY, coherence_tol: f64::INFINITY, ..EvolveOptions::default() };
        let traj = evolve(&DensityState::new_point_state(lattice), &params, &field, &kernel, &[0.0, 1.0, 3.0], &opts).unwrap();
        for s in &traj.states {
            prop_assert!((s.trace().unwrap() - 1.0).abs() < 1e-8);
            prop_assert!(s.hermiticity_defect() < 1e-8);
        }
    }

    #[test]
    fn scaled_ballistic_constant_is_coupling_independent(g in 0.05f64..20.0, u in 0.1f64..3.0) {
        let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
        let c = closed_form_ballistic(&kernel, u, g, 16).unwrap().value() * g / (u * u);
        prop_assert!((c - 8.0).abs() < 1e-9, "{}", c);
    }
}
