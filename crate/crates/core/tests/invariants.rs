use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jumpphase::linalg::{mat_exp, pauli, ComplexMatrix, C64};
use jumpphase::master::{integrate, lindblad_rhs, trace_distance, DensityMatrix};
use jumpphase::model::{is_unital, LindbladModel};
use jumpphase::phase::{discrete_phase_at_times, no_jump_phase, phase_distance, phase_for_jumps};
use jumpphase::spin::{build_model, dephasing_phase, state_from_angles, SpinHalfConfig};
use jumpphase::trajectory::{
    run_ensemble, run_trajectory, EnsembleOptions, PropagationMode, RunSpec,
};

fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> ComplexMatrix {
    let v = (0..dim * dim)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    ComplexMatrix::new(dim, dim, v).unwrap()
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> ComplexMatrix {
    random_matrix(rng, dim).hermitian_part()
}

fn random_unital(rng: &mut ChaCha8Rng, dim: usize) -> LindbladModel {
    let h = random_hermitian(rng, dim);
    let ops = [0.3, 0.2]
        .iter()
        .map(|s| {
            mat_exp(&random_hermitian(rng, dim), C64::new(0.0, 2.0))
                .unwrap()
                .scale_real(*s)
        })
        .collect();
    LindbladModel::new(h, ops).unwrap()
}

#[test]
fn closed_phase_is_reparametrization_invariant() {
    let t = 2.0 * PI;
    let n = 10_000;
    let psi = state_from_angles(1.0, 0.3);
    let uniform: Vec<f64> = (0..=n).map(|i| t * i as f64 / n as f64).collect();
    let warped: Vec<f64> = (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            t * (s + 0.3 * (2.0 * PI * s).sin() / (2.0 * PI))
        })
        .collect();
    let h = pauli::sigma_z().scale_real(0.5);
    let base = LindbladModel::closed(h.clone()).unwrap();
    let a = discrete_phase_at_times(&base, &psi, t, &uniform, &[]).unwrap();
    let b = discrete_phase_at_times(&base, &psi, t, &warped, &[]).unwrap();
    assert!(phase_distance(a.geometric_phase, b.geometric_phase) <= 1e-8);

    // The same ray path with shifted energy: only the dynamical part moves.
    let shifted = LindbladModel::closed(&h + &ComplexMatrix::identity(2).scale_real(0.7)).unwrap();
    let c = discrete_phase_at_times(&shifted, &psi, t, &warped, &[]).unwrap();
    assert!(phase_distance(a.geometric_phase, c.geometric_phase) <= 1e-8);
    assert!((c.dynamical_phase - a.dynamical_phase + 0.7 * t).abs() < 1e-6);
}

#[test]
fn unital_no_jump_phase_matches_closed_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in [2, 3, 4] {
        for _ in 0..5 {
            let model = random_unital(&mut rng, dim);
            assert!(is_unital(&model, 1e-9).unital);
            let v = (0..dim)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let psi = jumpphase::linalg::StateVector::new(v).unwrap().normalized();
            let t = rng.gen_range(0.2..1.0);
            let open = no_jump_phase(&model, &psi, 0.0, t, 2000).unwrap();
            let closed = no_jump_phase(&model.without_jumps(), &psi, 0.0, t, 2000).unwrap();
            assert!((open.geometric_phase - closed.geometric_phase).abs() <= 1e-10);
        }
    }
}

#[test]
fn dephasing_phase_ignores_jumps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for theta in [0.4, PI / 3.0, 2.0, 2.6] {
        let cfg = SpinHalfConfig {
            theta,
            ..SpinHalfConfig::preset("dephasing").unwrap()
        };
        let model = build_model(&cfg).unwrap();
        let spec = RunSpec::new(2.0 * PI, 10_000, PropagationMode::Exact);
        let expected = -dephasing_phase(theta);
        for k in 0..=8 {
            for _ in 0..3 {
                let mut times: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
                times.sort_by(f64::total_cmp);
                let jumps: Vec<(f64, usize)> = times.into_iter().map(|t| (t, 1)).collect();
                let b = phase_for_jumps(&model, &cfg.initial_state(), &spec, &jumps).unwrap();
                let err = phase_distance(b.geometric_phase, expected);
                assert!(err <= 1e-6, "θ={theta} k={k}: {err:e}");
                assert!(b.decomposition_residual() <= 1e-10);
            }
        }
    }
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let model = build_model(&SpinHalfConfig::preset("dephasing+decay").unwrap()).unwrap();
    let psi = state_from_angles(1.0, 0.5);
    let spec = RunSpec::new(2.0 * PI, 500, PropagationMode::Exact);
    let times = [spec.dt() * 100.0, 2.0 * PI];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_ensemble(
                    &model,
                    &psi,
                    &spec,
                    64,
                    99,
                    &times,
                    EnsembleOptions {
                        compute_phases: true,
                    },
                )
                .unwrap()
            })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.summaries, b.summaries);
    assert_eq!(a.snapshots, b.snapshots);
    for rho in &a.snapshots {
        assert!((rho.trace().re - 1.0).abs() <= 1e-9);
    }
    let s = a.summaries[5].seed;
    assert_eq!(
        run_trajectory(&model, &psi, &spec, s).unwrap(),
        run_trajectory(&model, &psi, &spec, s).unwrap()
    );
}

#[test]
fn rk4_is_fourth_order() {
    let cfg = SpinHalfConfig {
        alpha_decay: 0.5,
        lambda_dephase: 0.3,
        theta: 1.1,
        ..SpinHalfConfig::default()
    };
    let model = build_model(&cfg).unwrap();
    let rho0 = DensityMatrix::from_pure(&cfg.initial_state());
    let t = 3.0;
    let end = |n: usize| {
        integrate(&model, &rho0, t, n, &[t])
            .unwrap()
            .states
            .pop()
            .unwrap()
    };
    let n = 40;
    let reference = end(20 * n);
    let e1 = trace_distance(&end(n), &reference).unwrap();
    let e2 = trace_distance(&end(2 * n), &reference).unwrap();
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn maximally_mixed_is_fixed_for_unital_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for dim in [2, 3, 4] {
        let model = random_unital(&mut rng, dim);
        let d = lindblad_rhs(&model, &DensityMatrix::maximally_mixed(dim)).unwrap();
        assert!(d.max_abs() <= 1e-12);
    }
}

#[test]
fn master_trace_is_conserved() {
    let model = build_model(&SpinHalfConfig::preset("dephasing+decay").unwrap()).unwrap();
    let rho0 = DensityMatrix::from_pure(&state_from_angles(0.7, 0.0));
    let times: Vec<f64> = (1..=50).map(|i| i as f64 * 0.2).collect();
    let sol = integrate(&model, &rho0, 10.0, 1000, &times).unwrap();
    for rho in &sol.states {
        assert!((rho.trace() - C64::new(1.0, 0.0)).norm() <= 1e-9);
    }
}

#[test]
fn discrete_phase_converges_to_continuous() {
    let cfg = SpinHalfConfig::preset("dephasing").unwrap();
    let model = build_model(&cfg).unwrap();
    let spec = RunSpec::new(2.0 * PI, 1000, PropagationMode::Exact);
    let rec = jumpphase::trajectory::run_prescribed(
        &model,
        &cfg.initial_state(),
        &spec,
        &[(1.3, 1), (3.9, 1)],
    )
    .unwrap();
    let rows =
        jumpphase::phase::discrete_vs_continuous(&rec, &model, &[100, 1000, 10_000]).unwrap();
    for w in rows.windows(2) {
        assert!(
            w[1].error * 10.0 <= w[0].error,
            "{} -> {}",
            w[0].error,
            w[1].error
        );
    }
    assert!(rows[2].error < 1e-6);
}
