use spoq::experiment::{problem_for, run_single, SolverKind};
use spoq::solvers::StopReason;
use spoq::*;

fn small(seed: u64) -> Instance {
    Instance::from_preset(DatasetPreset::Small, 0.1, seed).unwrap()
}

#[test]
fn trvmfb_recovers_the_small_preset() {
    let inst = small(3);
    let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(0.75, 2.0).unwrap());
    let out = run_single(&inst, &spec, SolverKind::Trvmfb, &SolverConfig::default()).unwrap();
    assert_eq!(out.output.stop, StopReason::Converged);
    let problem = problem_for(&inst).unwrap();
    assert!(problem.is_feasible(out.output.x.view()));
    assert!(out.report.snr_db > 40.0, "{}", out.report.snr_db);
    assert!(out.report.sparsity_estimate.abs_diff(10) <= 3);
    let objs = out.output.trace.objectives();
    assert!(objs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn every_penalty_runs_on_its_default_solver() {
    let inst = small(1);
    let problem = problem_for(&inst).unwrap();
    let config = SolverConfig::default();
    for spec in [
        PenaltySpec::L1,
        PenaltySpec::L0,
        PenaltySpec::Scad { delta: 3.16, a: 2.5 },
        PenaltySpec::Cauchy { delta: 100.0 },
        PenaltySpec::Welsch { delta: 0.1 },
        PenaltySpec::Cel0 { delta: 1.0 },
    ] {
        let kind = SolverKind::default_for(&spec);
        let out = run_single(&inst, &spec, kind, &config).unwrap();
        assert!(problem.in_box(out.output.x.view()), "{}", spec.id());
        if kind == SolverKind::Hq {
            assert!(problem.is_feasible(out.output.x.view()), "{}", spec.id());
        }
        if spec == PenaltySpec::L1 || out.output.stop == StopReason::Converged {
            let ratio = problem.residual_norm(out.output.x.view()) / problem.xi();
            assert!(ratio <= 1.0 + spoq::solvers::PD_FEAS_TOL, "{} {ratio}", spec.id());
        }
        assert!(out.report.snr_db.is_finite() && out.report.snr_db > 10.0, "{} {}", spec.id(), out.report.snr_db);
    }
}

#[test]
fn solves_are_deterministic() {
    let inst = small(2);
    let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(0.5, 2.0).unwrap());
    let a = run_single(&inst, &spec, SolverKind::Trvmfb, &SolverConfig::default()).unwrap();
    let b = run_single(&inst, &spec, SolverKind::Trvmfb, &SolverConfig::default()).unwrap();
    assert_eq!(a.output.x, b.output.x);
    assert_eq!(a.report.config_hash, b.report.config_hash);
    assert_eq!(a.output.trace.objectives(), b.output.trace.objectives());
}

#[test]
fn mismatched_solver_is_rejected() {
    let inst = small(0);
    let err = run_single(&inst, &PenaltySpec::L1, SolverKind::Trvmfb, &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, SpoqError::Config(_)));
}

#[test]
fn iteration_cap_is_reported() {
    let inst = small(0);
    let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(0.75, 2.0).unwrap());
    let config = SolverConfig {
        max_outer: 1,
        eps_stop: 0.0,
        ..SolverConfig::default()
    };
    let out = run_single(&inst, &spec, SolverKind::Trvmfb, &config).unwrap();
    assert_eq!(out.output.stop, StopReason::MaxIterations);
    assert_eq!(out.output.iterations, 1);
}
