//! Simulation under the original measure.
//!
//! Particles are simulated in order of birth, each over its whole lifetime: it moves according to the motion model, dies at rate `R(X(s))`
//! (thinned against `R_max` when the rate depends on the state), and is
//! replaced at its death position by a draw from the offspring law. Every
//! particle owns a generator derived from its label, so the result does not
//! depend on the order in which subtrees are processed.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::model::{validate_spec, ModelSpec, RateFunction, StatePoint};
use crate::motion::Mover;
use crate::rng::{child_label_hash, Purpose, RngHandle, SimRng, ROOT_LABEL_HASH};
use crate::tree::{ParticleId, ParticleRecord, Path, Tree};

pub const DEFAULT_MAX_PARTICLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimCaps {
    pub max_particles: usize,
    pub horizon: f64,
}

impl SimCaps {
    pub fn new(horizon: f64) -> Self {
        Self {
            max_particles: DEFAULT_MAX_PARTICLES,
            horizon,
        }
    }

    pub fn with_max_particles(mut self, max_particles: usize) -> Self {
        self.max_particles = max_particles;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.max_particles < 1 {
            return Err(Error::invalid("caps.max_particles", "must be >= 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("caps.horizon", format!("{} must be > 0", self.horizon)));
        }
        Ok(())
    }
}

/// Outcome of one particle's lifetime.
pub(crate) struct Lifetime {
    pub path: Path,
    /// Death time and number of children, or `None` if alive at the horizon.
    pub death: Option<(f64, u32)>,
}

/// Simulates one particle born at `birth` in state `x0` until it dies or reaches `horizon`.
pub(crate) fn simulate_lifetime(
    spec: &ModelSpec,
    horizon: f64,
    birth: f64,
    x0: StatePoint,
    rng: &mut SimRng,
) -> Lifetime {
    let mut mover = Mover::start(&spec.motion, 0.0, birth, x0, rng);
    let r_max = spec.rate.max();
    let mut now = birth;
    loop {
        if r_max <= 0.0 {
            return Lifetime {
                path: mover.finish(horizon, rng),
                death: None,
            };
        }
        let wait: f64 = rng.sample(Exp1);
        let proposal = now + wait / r_max;
        if proposal >= horizon {
            return Lifetime {
                path: mover.finish(horizon, rng),
                death: None,
            };
        }
        mover.advance_to(proposal, rng);
        now = proposal;
        let accept = match &spec.rate {
            RateFunction::Constant(_) => true,
            rate => rng.random::<f64>() * r_max < rate.at(mover.state()),
        };
        if accept {
            let k = spec.offspring.sample(rng);
            return Lifetime {
                path: mover.finish(proposal, rng),
                death: Some((proposal, k)),
            };
        }
    }
}

struct Pending {
    id: ParticleId,
    label_hash: u64,
}

/// Pending particles bucketed by birth time, last in first out within a bucket.
struct Calendar {
    width: f64,
    buckets: Vec<Vec<Pending>>,
    cursor: usize,
}

impl Calendar {
    const BUCKETS: usize = 64;

    fn new(horizon: f64) -> Self {
        Self {
            width: (horizon / Self::BUCKETS as f64).max(f64::MIN_POSITIVE),
            buckets: (0..Self::BUCKETS).map(|_| Vec::new()).collect(),
            cursor: 0,
        }
    }

    fn push(&mut self, birth: f64, p: Pending) {
        let idx = ((birth / self.width) as usize).clamp(self.cursor, Self::BUCKETS - 1);
        self.buckets[idx].push(p);
    }

    fn pop(&mut self) -> Option<Pending> {
        while self.cursor < Self::BUCKETS {
            if let Some(p) = self.buckets[self.cursor].pop() {
                return Some(p);
            }
            self.cursor += 1;
        }
        None
    }
}

/// Grows a tree roughly in order of birth time (to within horizon/64),
/// respecting the particle cap. Once the cap is hit, the tree is exact up to
/// the first birth that found no room.
pub(crate) struct TreeBuilder<'a> {
    spec: &'a ModelSpec,
    horizon: f64,
    max_particles: usize,
    streams: RngHandle,
    particles: Vec<ParticleRecord>,
    queue: Calendar,
    truncated: bool,
    complete_until: f64,
}

impl<'a> TreeBuilder<'a> {
    pub fn new(spec: &'a ModelSpec, caps: SimCaps, streams: RngHandle) -> Self {
        Self {
            spec,
            horizon: caps.horizon,
            max_particles: caps.max_particles,
            streams,
            particles: Vec::new(),
            queue: Calendar::new(caps.horizon),
            truncated: false,
            complete_until: caps.horizon,
        }
    }

    /// Adds a record whose lifetime is already known (e.g. a spine particle).
    pub fn push_record(&mut self, record: ParticleRecord) -> Option<ParticleId> {
        if self.particles.len() >= self.max_particles {
            self.mark_truncated(record.birth);
            return None;
        }
        self.particles.push(record);
        Some(self.particles.len() as ParticleId - 1)
    }

    pub fn record_mut(&mut self, id: ParticleId) -> &mut ParticleRecord {
        &mut self.particles[id as usize]
    }

    fn mark_truncated(&mut self, at: f64) {
        self.truncated = true;
        self.complete_until = self.complete_until.min(at);
    }

    /// Reserves `k` contiguous child slots of `parent`, born at `time` in state `x`.
    /// Returns the first child id, or `None` if the cap would be exceeded.
    pub fn allocate_children(&mut self, parent: ParticleId, k: u32, time: f64, x: StatePoint) -> Option<ParticleId> {
        if k == 0 {
            return None;
        }
        if self.particles.len() + k as usize > self.max_particles {
            self.mark_truncated(time);
            return None;
        }
        let first = self.particles.len() as ParticleId;
        let generation = self.particles[parent as usize].generation + 1;
        for i in 0..k {
            self.particles.push(ParticleRecord {
                parent: Some(parent),
                child_index: i,
                generation,
                birth: time,
                death: None,
                offspring: None,
                first_child: None,
                path: Path::constant(x, time, time),
            });
        }
        self.particles[parent as usize].first_child = Some(first);
        Some(first)
    }

    /// Queues an allocated particle for simulation under the original dynamics.
    pub fn schedule(&mut self, id: ParticleId, label_hash: u64) {
        let birth = self.particles[id as usize].birth;
        self.queue.push(birth, Pending { id, label_hash });
    }

    /// Simulates every queued particle and, recursively, its descendants.
    pub fn run(&mut self) {
        while let Some(Pending { id, label_hash }) = self.queue.pop() {
            let (birth, x0) = {
                let rec = &self.particles[id as usize];
                (rec.birth, rec.path.terminal())
            };
            let mut rng = self.streams.particle_rng(label_hash);
            let life = simulate_lifetime(self.spec, self.horizon, birth, x0, &mut rng);
            let death_state = life.path.terminal();
            {
                let rec = &mut self.particles[id as usize];
                rec.path = life.path;
                rec.death = life.death.map(|d| d.0);
                rec.offspring = life.death.map(|d| d.1);
            }
            if let Some((time, k)) = life.death {
                if let Some(first) = self.allocate_children(id, k, time, death_state) {
                    for i in 0..k {
                        self.schedule(first + i, child_label_hash(label_hash, i));
                    }
                }
            }
        }
    }

    pub fn finish(self) -> Tree {
        Tree::from_parts(self.particles, self.horizon, self.truncated, self.complete_until)
    }
}

/// Simulates one tree under the original measure.
///
/// A hit particle cap is not an error: the tree comes back flagged truncated
/// and exact only up to [`Tree::complete_until`].
pub fn simulate_tree(spec: &ModelSpec, caps: SimCaps, rng: RngHandle) -> Result<Tree> {
    validate_spec(spec)?;
    caps.check()?;
    let streams = rng.with_purpose(Purpose::PTree);
    let mut builder = TreeBuilder::new(spec, caps, streams);
    let root = builder
        .push_record(ParticleRecord {
            parent: None,
            child_index: 0,
            generation: 0,
            birth: 0.0,
            death: None,
            offspring: None,
            first_child: None,
            path: Path::constant(spec.initial, 0.0, 0.0),
        })
        .expect("cap >= 1");
    builder.schedule(root, ROOT_LABEL_HASH);
    builder.run();
    Ok(builder.finish())
}

/// Empirical survival probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub p: f64,
    pub se: f64,
    pub n: u64,
}

/// Fraction of `reps` root particles still alive at `t`.
pub fn root_lifetime_law_check(spec: &ModelSpec, reps: u64, t: f64, master_seed: u64) -> Result<Proportion> {
    validate_spec(spec)?;
    let survived = (0..reps)
        .filter(|&rep| {
            let mut rng = RngHandle::new(master_seed, rep, Purpose::Lifetime).particle_rng(ROOT_LABEL_HASH);
            simulate_lifetime(spec, t, 0.0, spec.initial, &mut rng).death.is_none()
        })
        .count();
    let p = survived as f64 / reps as f64;
    Ok(Proportion {
        p,
        se: (p * (1.0 - p) / reps as f64).sqrt(),
        n: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MotionModel, OffspringLaw, SpineWeightSpec};

    fn spec(beta: f64, law: OffspringLaw) -> ModelSpec {
        ModelSpec::new(
            MotionModel::None,
            RateFunction::Constant(beta),
            law,
            SpineWeightSpec::One,
        )
    }

    fn chain_spec() -> ModelSpec {
        ModelSpec::new(
            MotionModel::TwoStateChain { q01: 1.0, q10: 1.0 },
            RateFunction::StateDependent(vec![0.0, 2.0]),
            OffspringLaw::deterministic(2),
            SpineWeightSpec::One,
        )
    }

    fn dump(tree: &Tree) -> String {
        let mut buf = Vec::new();
        tree.write_dump(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn zero_rate_gives_a_single_root() {
        let tree = simulate_tree(
            &spec(0.0, OffspringLaw::deterministic(2)),
            SimCaps::new(5.0),
            RngHandle::new(1, 0, Purpose::PTree),
        )
        .unwrap();
        assert_eq!(tree.len(), 1);
        assert!(tree.record(0).death.is_none());
    }

    #[test]
    fn single_child_law_gives_a_line() {
        let tree = simulate_tree(
            &spec(3.0, OffspringLaw::deterministic(1)),
            SimCaps::new(4.0),
            RngHandle::new(1, 0, Purpose::PTree),
        )
        .unwrap();
        assert!(tree.len() > 1);
        for t in [0.0, 0.5, 1.0, 2.0, 3.99] {
            assert_eq!(tree.alive_ids(t).unwrap().len(), 1);
        }
    }

    #[test]
    fn same_seed_same_tree_bytes() {
        let s = chain_spec();
        let a = simulate_tree(&s, SimCaps::new(4.0), RngHandle::new(11, 5, Purpose::PTree)).unwrap();
        let b = simulate_tree(&s, SimCaps::new(4.0), RngHandle::new(11, 5, Purpose::PTree)).unwrap();
        assert_eq!(dump(&a), dump(&b));
        let c = simulate_tree(&s, SimCaps::new(4.0), RngHandle::new(11, 6, Purpose::PTree)).unwrap();
        assert_ne!(dump(&a), dump(&c));
    }

    #[test]
    fn longer_horizon_extends_the_same_tree() {
        let s = chain_spec();
        let short = simulate_tree(&s, SimCaps::new(2.0), RngHandle::new(4, 2, Purpose::PTree)).unwrap();
        let long = simulate_tree(&s, SimCaps::new(3.0), RngHandle::new(4, 2, Purpose::PTree)).unwrap();
        for t in [0.0, 0.5, 1.0, 1.5, 1.99] {
            assert_eq!(short.alive_at(t).unwrap(), long.alive_at(t).unwrap());
        }
        for id in 0..short.len() as ParticleId {
            let label = short.label(id);
            let rec = short.record(id);
            let other = long.record(long.find(&label).unwrap());
            assert_eq!(rec.birth, other.birth);
            if let Some(d) = rec.death {
                assert_eq!(Some(d), other.death);
                assert_eq!(rec.offspring, other.offspring);
                assert_eq!(rec.path, other.path);
            }
        }
    }

    #[test]
    fn branching_consistency_and_population_balance() {
        let law = OffspringLaw::poisson(1.3);
        for rep in 0..20 {
            let tree = simulate_tree(
                &spec(1.0, law.clone()),
                SimCaps::new(3.0),
                RngHandle::new(2, rep, Purpose::PTree),
            )
            .unwrap();
            assert!(!tree.is_truncated());
            let mut balance: i64 = 1;
            for (id, rec) in tree.records().iter().enumerate() {
                if let Some(k) = rec.offspring {
                    balance += k as i64 - 1;
                    assert_eq!(rec.children().count(), k as usize);
                    for c in rec.children() {
                        let child = tree.record(c);
                        assert_eq!(child.parent, Some(id as ParticleId));
                        assert_eq!(child.birth, rec.death.unwrap());
                        assert_eq!(child.path.start(), rec.death.unwrap());
                    }
                    assert!(rec.birth < rec.death.unwrap());
                }
            }
            assert_eq!(balance, tree.alive_ids(3.0).unwrap().len() as i64);
            if balance == 0 {
                assert!(tree.extinct_at().is_some());
            }
        }
    }

    #[test]
    fn children_start_at_parent_death_position() {
        let s = chain_spec();
        for rep in 0..20 {
            let tree = simulate_tree(&s, SimCaps::new(3.0), RngHandle::new(8, rep, Purpose::PTree)).unwrap();
            for rec in tree.records() {
                for c in rec.children() {
                    assert_eq!(
                        tree.record(c).path.value_at(rec.death.unwrap()).unwrap(),
                        rec.path.terminal()
                    );
                }
            }
        }
    }

    #[test]
    fn cap_truncates_and_bounds_exact_window() {
        let caps = SimCaps::new(10.0).with_max_particles(200);
        let tree = simulate_tree(
            &spec(1.0, OffspringLaw::deterministic(2)),
            caps,
            RngHandle::new(1, 1, Purpose::PTree),
        )
        .unwrap();
        assert!(tree.is_truncated());
        assert!(tree.len() <= 200);
        let t0 = tree.complete_until();
        assert!(t0 < 10.0);
        assert!(tree.alive_at(t0 * 0.999).is_ok());
        assert!(matches!(tree.alive_at(t0), Err(Error::TruncatedTree { .. })));

        // the exact window agrees with an untruncated run of the same seed
        let full = simulate_tree(
            &spec(1.0, OffspringLaw::deterministic(2)),
            SimCaps::new(10.0),
            RngHandle::new(1, 1, Purpose::PTree),
        )
        .unwrap();
        let t = t0 * 0.999;
        assert_eq!(tree.alive_at(t).unwrap(), full.alive_at(t).unwrap());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let s = spec(-1.0, OffspringLaw::deterministic(2));
        assert!(matches!(
            simulate_tree(&s, SimCaps::new(1.0), RngHandle::new(0, 0, Purpose::PTree)),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn zero_rate_root_survives_surely() {
        let p = root_lifetime_law_check(&spec(0.0, OffspringLaw::deterministic(2)), 1000, 3.0, 0).unwrap();
        assert_eq!(p.p, 1.0);
    }
}
