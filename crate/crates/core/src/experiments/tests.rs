use super::*;
use crate::model::OffspringLaw;

fn binary(beta: f64) -> ModelSpec {
    ModelSpec::new(
        MotionModel::None,
        RateFunction::Constant(beta),
        OffspringLaw::deterministic(2),
        SpineWeightSpec::One,
    )
}

fn bbm(lambda: f64) -> ModelSpec {
    ModelSpec::new(
        MotionModel::BrownianMotion { sigma: 1.0, step: 0.05 },
        RateFunction::Constant(1.0),
        OffspringLaw::deterministic(2),
        SpineWeightSpec::Girsanov { lambda },
    )
}

fn chain() -> ModelSpec {
    ModelSpec::new(
        MotionModel::TwoStateChain { q01: 1.0, q10: 3.0 },
        RateFunction::StateDependent(vec![0.5, 2.0]),
        OffspringLaw::deterministic(2),
        SpineWeightSpec::One,
    )
}

fn cfg(kind: ExperimentKind, spec: ModelSpec, grid: Vec<f64>, reps: u64) -> ExperimentConfig {
    let f = default_functional(kind, &spec);
    let mut c = ExperimentConfig::new(kind, spec, f, grid);
    c.reps = reps;
    c.master_seed = 17;
    c
}

#[test]
fn kind_names_round_trip() {
    for k in ExperimentKind::ALL {
        assert_eq!(ExperimentKind::from_name(k.name()), Some(k));
    }
    assert_eq!(ExperimentKind::from_name("nope"), None);
}

#[test]
fn wrong_model_kind_is_a_config_error() {
    let c = cfg(ExperimentKind::BirthRate, chain(), vec![1.0], 10);
    let c = ExperimentConfig {
        functional: AdditiveFunctional::BirthRateIndicator {
            target: 2.0,
            epsilon: 0.5,
        },
        ..c
    };
    assert!(matches!(run_experiment(&c), Err(Error::Config { .. })));
    let c = cfg(ExperimentKind::Occupation, binary(1.0), vec![1.0], 10);
    assert!(matches!(run_experiment(&c), Err(Error::Config { .. })));
    let c = cfg(ExperimentKind::BbmTilt, binary(1.0), vec![1.0], 10);
    assert!(matches!(run_experiment(&c), Err(Error::Config { .. })));
    let c = cfg(ExperimentKind::SpinePosterior, binary(1.0), vec![1.0], 10);
    assert!(matches!(run_experiment(&c), Err(Error::Config { .. })));
}

#[test]
fn bad_grid_and_reps() {
    let mut c = cfg(ExperimentKind::MeanOne, binary(1.0), vec![2.0, 1.0], 10);
    assert!(matches!(c.validate(), Err(Error::Config { .. })));
    c.grid = vec![1.0, 2.0];
    c.reps = 0;
    assert!(matches!(c.validate(), Err(Error::Config { .. })));
    c.reps = 1;
    c.grid = vec![1.0, 5.0];
    assert!(matches!(c.validate(), Err(Error::Config { .. })));
    let c = cfg(ExperimentKind::BirthRate, binary(1.0), vec![0.0, 1.0], 10);
    assert!(matches!(c.validate(), Err(Error::Config { .. })));
}

#[test]
fn wide_window_gives_star_identically_one() {
    let mut c = cfg(ExperimentKind::BirthRate, binary(1.0), vec![1.0, 2.0], 50);
    c.functional = AdditiveFunctional::BirthRateIndicator {
        target: 2.0,
        epsilon: 1e6,
    };
    let out = run_experiment(&c).unwrap();
    for r in out.rows("star") {
        assert_eq!((r.mean, r.se), (Some(1.0), Some(0.0)));
    }
    assert!(out.series.iter().all(|s| s.star == Some(1.0)));
}

#[test]
fn star_is_plain_average_for_constant_model() {
    let c = cfg(ExperimentKind::BirthRate, binary(1.0), vec![3.0], 20);
    let out = run_experiment(&c).unwrap();
    for s in &out.series {
        let tree = simulate_tree(&c.spec, c.caps, RngHandle::new(17, s.rep, Purpose::PTree)).unwrap();
        let alive = tree.alive_ids(3.0).unwrap();
        let hits = alive
            .iter()
            .filter(|&&id| (tree.record(id).generation as f64 / 3.0 - 2.0).abs() < 0.5)
            .count();
        assert_eq!(s.star.unwrap(), hits as f64 / alive.len() as f64);
        assert_eq!(s.pop, alive.len());
    }
}

#[test]
fn zero_tilt_matches_untilted() {
    let grid = vec![1.0, 2.0];
    let tilted = cfg(ExperimentKind::MeanOne, bbm(0.0), grid.clone(), 30);
    let mut plain = tilted.clone();
    plain.spec.zeta = SpineWeightSpec::One;
    let f = AdditiveFunctional::TerminalSpeedIndicator {
        speed: 0.0,
        epsilon: 0.5,
    };
    let (a, b) = (
        run_experiment(&ExperimentConfig {
            functional: f.clone(),
            ..tilted
        })
        .unwrap(),
        run_experiment(&ExperimentConfig { functional: f, ..plain }).unwrap(),
    );
    assert_eq!(a.series, b.series);
}

#[test]
fn mean_one_at_time_zero_is_exact() {
    let out = run_experiment(&cfg(ExperimentKind::MeanOne, binary(1.0), vec![0.0, 1.0], 20)).unwrap();
    let r = out.row("Z", 0.0).unwrap();
    assert_eq!((r.mean, r.se, r.z), (Some(1.0), Some(0.0), Some(0.0)));
}

#[test]
fn many_to_one_constant_functional() {
    let out = run_experiment(&cfg(ExperimentKind::ManyToOne, binary(1.0), vec![1.0], 200)).unwrap();
    let b = out.row("B", 1.0).unwrap();
    assert_eq!((b.mean, b.se), (Some(1.0), Some(0.0)));
    assert!(out.passed(), "{:?}", out.verdicts);
}

#[test]
fn spine_posterior_single_line_model_is_exact_per_rep() {
    let spec = ModelSpec::new(
        MotionModel::None,
        RateFunction::Constant(1.0),
        OffspringLaw::deterministic(1),
        SpineWeightSpec::One,
    );
    let mut c = cfg(ExperimentKind::SpinePosterior, spec, vec![1.0, 2.0], 100);
    c.tally = Some(TallyStatistic::BirthsAtMost(2));
    let out = run_experiment(&c).unwrap();
    assert!(out.series.iter().all(|s| s.star == s.f_context && s.pop == 1));
    assert!(out.rows("A-B").all(|r| r.mean == Some(0.0)));
}

#[test]
fn reps_one_has_no_standard_error() {
    let out = run_experiment(&cfg(ExperimentKind::MeanOne, binary(1.0), vec![1.0], 1)).unwrap();
    let r = out.row("Z", 1.0).unwrap();
    assert!(r.mean.is_some() && r.se.is_none() && r.z.is_none());
    assert_eq!(out.verdicts[0].status, Status::Skip);
    assert!(out.passed());
}

#[test]
fn death_time_small_run() {
    let out = run_experiment(&cfg(ExperimentKind::DeathTime, binary(1.0), vec![0.5, 1.0], 4000)).unwrap();
    assert!(out.passed(), "{:?}", out.verdicts);
    let r = out.row("survival", 1.0).unwrap();
    assert_eq!(r.oracle, Some((-1.0f64).exp()));
}

#[test]
fn truncation_is_reported_and_fails_the_check() {
    let mut c = cfg(ExperimentKind::MeanOne, binary(1.0), vec![1.0, 4.0], 40);
    c.caps = c.caps.with_max_particles(20);
    let out = run_experiment(&c).unwrap();
    let r = out.row("Z", 4.0).unwrap();
    assert!(r.trunc_rate > 0.05);
    assert_eq!(
        r.used_reps,
        out.series.iter().filter(|s| s.t == 4.0 && !s.truncated).count()
    );
    assert!(!out.passed());
}

#[test]
fn output_is_independent_of_thread_count() {
    let c = cfg(ExperimentKind::Occupation, chain(), vec![1.0, 2.0], 40);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| run_experiment(&c)).unwrap();
    let b = three.install(|| run_experiment(&c)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn supercritical_tilt_warns_and_uses_decay_check() {
    let out = run_experiment(&cfg(ExperimentKind::BbmTilt, bbm(2.0), vec![1.0, 2.0], 20)).unwrap();
    assert!(!out.warnings.is_empty());
    assert!(out.verdicts.iter().any(|v| v.name == "supercritical Z decay (median)"));
    assert!(out.rows("Z").all(|r| r.gate == Gate::None));
}

#[test]
fn gates() {
    let row = |mean, se, gate| summary_row(1.0, "x", &[mean - se, mean + se], Some(0.0), gate, 0.0, 0.0);
    let v = gate_verdict(&row(0.5, 0.1, Gate::ZScore { limit: 4.0 })).unwrap();
    assert_eq!(v.status, Status::Fail);
    let v = gate_verdict(&row(0.5, 0.1, Gate::ZOrAbs { limit: 4.0, abs: 0.6 })).unwrap();
    assert_eq!(v.status, Status::Pass);
    assert!(gate_verdict(&row(0.5, 0.1, Gate::None)).is_none());
}

#[test]
fn medians() {
    assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(vec![]), None);
}
