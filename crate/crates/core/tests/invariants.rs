//! Structural invariants over randomly drawn models and seeds.

use proptest::prelude::*;

use spinelaw::cli::{parse_config_str, serialize_config};
use spinelaw::weights::{AdditiveFunctional, Snapshot};
use spinelaw::{
    fmt_f64, offspring_mean, simulate_q_tree, simulate_tree, size_bias, ModelSpec, MotionModel, OffspringLaw, Purpose,
    RateFunction, RngHandle, SimCaps, SpineWeightSpec, StatePoint,
};

const HORIZON: f64 = 2.5;

fn arb_law() -> impl Strategy<Value = OffspringLaw> {
    prop_oneof![
        (1u32..4).prop_map(OffspringLaw::deterministic),
        (0.0..0.6f64).prop_map(OffspringLaw::two_point),
        (0.4..1.0f64).prop_map(OffspringLaw::geometric),
        (0.2..2.5f64).prop_map(OffspringLaw::poisson),
        prop::collection::vec(0.05..1.0f64, 2..5).prop_map(|w| {
            let s: f64 = w.iter().sum();
            OffspringLaw::tabulated(w.iter().map(|x| x / s).collect())
        }),
    ]
}

fn arb_spec() -> impl Strategy<Value = ModelSpec> {
    let motion = prop_oneof![
        Just(MotionModel::None),
        (0.2..3.0f64, 0.2..3.0f64).prop_map(|(q01, q10)| MotionModel::TwoStateChain { q01, q10 }),
        (0.3..2.0f64).prop_map(|sigma| MotionModel::BrownianMotion { sigma, step: 0.1 }),
    ];
    (motion, 0.0..1.5f64, 0.0..1.5f64, arb_law(), -1.0..1.0f64).prop_map(|(motion, b0, b1, law, lambda)| {
        let (rate, zeta) = match motion {
            MotionModel::TwoStateChain { .. } => (RateFunction::StateDependent(vec![b0, b1]), SpineWeightSpec::One),
            MotionModel::BrownianMotion { .. } => (RateFunction::Constant(b0), SpineWeightSpec::Girsanov { lambda }),
            MotionModel::None => (RateFunction::Constant(b0), SpineWeightSpec::One),
        };
        ModelSpec::new(motion, rate, law, zeta)
    })
}

fn caps() -> SimCaps {
    SimCaps::new(HORIZON).with_max_particles(20_000)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn size_bias_raises_the_mean(law in arb_law()) {
        let m = offspring_mean(&law).unwrap();
        prop_assume!(m > 0.0);
        let sb = size_bias(&law).unwrap();
        let total: f64 = sb.pmf().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        let sm = offspring_mean(&sb).unwrap();
        if law.is_point_mass() {
            prop_assert!((sm - m).abs() < 1e-12);
        } else {
            prop_assert!(sm > m);
        }
    }

    #[test]
    fn trees_are_consistent(spec in arb_spec(), seed in 0u64..1000) {
        let tree = simulate_tree(&spec, caps(), RngHandle::new(seed, 0, Purpose::PTree)).unwrap();
        prop_assume!(!tree.is_truncated());
        let mut balance: i64 = 1;
        for (id, rec) in tree.records().iter().enumerate() {
            if let (Some(death), Some(k)) = (rec.death, rec.offspring) {
                balance += i64::from(k) - 1;
                prop_assert_eq!(rec.children().count(), k as usize);
                for c in rec.children() {
                    let child = tree.record(c);
                    prop_assert!(c as usize > id);
                    prop_assert_eq!(child.parent, Some(id as u32));
                    prop_assert_eq!(child.birth, death);
                    prop_assert_eq!(child.path.value_at(death).unwrap(), rec.path.terminal());
                }
            }
        }
        prop_assert_eq!(balance, tree.alive_ids(HORIZON).unwrap().len() as i64);
    }

    #[test]
    fn ancestry_paths_restrict_to_ancestors(spec in arb_spec(), seed in 0u64..1000) {
        let tree = simulate_tree(&spec, caps(), RngHandle::new(seed, 1, Purpose::PTree)).unwrap();
        prop_assume!(!tree.is_truncated());
        for label in tree.alive_at(HORIZON).unwrap().iter().take(5) {
            let full = tree.ancestry_path(label, HORIZON).unwrap();
            let mut anc = label.parent();
            while let Some(a) = anc {
                let rec = tree.record(tree.find(&a).unwrap());
                // alive on [birth, death), so query just before the death
                let end = rec.birth + 0.999 * (rec.death.unwrap() - rec.birth);
                let own = tree.ancestry_path(&a, end).unwrap();
                let cut = full.restrict(0.0, end).unwrap();
                for i in 0..=8 {
                    let s = end * f64::from(i) / 8.0;
                    prop_assert_eq!(own.value_at(s).unwrap(), cut.value_at(s).unwrap());
                }
                anc = a.parent();
            }
        }
    }

    #[test]
    fn reruns_give_identical_dumps(spec in arb_spec(), seed in 0u64..1000) {
        let dump = || {
            let tree = simulate_tree(&spec, caps(), RngHandle::new(seed, 3, Purpose::PTree)).unwrap();
            let mut bytes = Vec::new();
            tree.write_dump(&mut bytes).unwrap();
            bytes
        };
        prop_assert_eq!(dump(), dump());
    }

    #[test]
    fn spine_is_alive_and_never_childless(spec in arb_spec(), seed in 0u64..1000) {
        prop_assume!(spec.mean_offspring() > 0.0);
        let q = simulate_q_tree(&spec, caps(), RngHandle::new(seed, 0, Purpose::Spine)).unwrap();
        prop_assert!(q.spine.offspring_counts.iter().all(|&k| k >= 1));
        let limit = q.tree.complete_until();
        for i in 0..10 {
            let t = limit * f64::from(i) / 10.0;
            let alive = q.tree.alive_at(t).unwrap();
            prop_assert!(alive.contains(q.spine.label_at(t)));
        }
    }

    #[test]
    fn weighted_sums_are_normalised(spec in arb_spec(), seed in 0u64..1000, t in 0.1..HORIZON) {
        let tree = simulate_tree(&spec, caps(), RngHandle::new(seed, 4, Purpose::PTree)).unwrap();
        prop_assume!(!tree.is_truncated());
        let snap = Snapshot::new(&tree, &spec, t, None).unwrap();
        prop_assume!(!snap.is_extinct());
        let post = snap.posterior().unwrap();
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert_eq!(snap.weighted_sum(&AdditiveFunctional::One).unwrap(), 1.0);
        let f = AdditiveFunctional::BirthRateIndicator { target: 1.0, epsilon: 0.7 };
        let v = snap.weighted_sum(&f).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn config_round_trips(spec in arb_spec(), reps in 1u64..100, seed in any::<u64>(), cap in 1usize..1_000_000) {
        let spec = match spec.motion {
            MotionModel::BrownianMotion { .. } => spec.with_initial(StatePoint::Real(0.0)),
            _ => spec,
        };
        let kind = spinelaw::experiments::ExperimentKind::MeanOne;
        let mut cfg = spinelaw::experiments::ExperimentConfig::new(kind, spec, AdditiveFunctional::One, vec![0.5, 1.0, 2.0]);
        cfg.reps = reps;
        cfg.master_seed = seed;
        cfg.caps = cfg.caps.with_max_particles(cap);
        let text = serialize_config(&cfg);
        let (again, _) = parse_config_str(&text).unwrap();
        prop_assert_eq!(again, cfg);
    }

    #[test]
    fn output_floats_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let s = fmt_f64(x);
        prop_assert_eq!(s.parse::<f64>().unwrap(), x);
    }
}
