//! Simulation under the spine measure.
//!
//! The spine moves with the matched spine motion, branches at rate
//! `(1 + M(ξ)) R(ξ)`, has a size-biased number of children, and continues
//! through one child chosen uniformly. Every other child starts an ordinary
//! subtree with the original dynamics.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::Result;
use crate::model::{size_bias, validate_spec, ModelSpec, RateFunction, StatePoint};
use crate::motion::Mover;
use crate::rng::{child_label_hash, Purpose, RngHandle, ROOT_LABEL_HASH};
use crate::sim_p::{SimCaps, TreeBuilder};
use crate::tree::{Label, ParticleId, ParticleRecord, Path, Tree};

/// The marked line of descent up to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineRecord {
    /// Spine particles in order; `spine_labels[k+1]` is a child of `spine_labels[k]`.
    pub spine_labels: Vec<Label>,
    /// ξ on `[0, horizon]`.
    pub spine_path: Path,
    /// Branch times along the spine, increasing.
    pub branch_times: Vec<f64>,
    /// Size-biased number of children at each branch (never 0).
    pub offspring_counts: Vec<u32>,
    /// Which child continued the spine at each branch.
    pub spine_children: Vec<u32>,
    pub horizon: f64,
}

impl SpineRecord {
    /// Number of spine branch events at or before `t`: the generation of the
    /// spine particle alive at `t`.
    pub fn births_by(&self, t: f64) -> u32 {
        self.branch_times.partition_point(|&s| s <= t) as u32
    }

    pub fn label_at(&self, t: f64) -> &Label {
        &self.spine_labels[self.births_by(t) as usize]
    }

    pub fn position_at(&self, t: f64) -> Result<StatePoint> {
        self.spine_path.value_at(t)
    }
}

/// Simulates the spine alone: its path, branch times, offspring counts and
/// spine-child choices. No subtrees are generated.
pub fn simulate_spine_only(spec: &ModelSpec, horizon: f64, rng: RngHandle) -> Result<SpineRecord> {
    validate_spec(spec)?;
    let biased = size_bias(&spec.offspring)?;
    let mut rng = rng.with_purpose(Purpose::Spine).rng();

    let mut mover = Mover::start(&spec.motion, spec.spine_drift(), 0.0, spec.initial, &mut rng);
    let accel = 1.0 + spec.branch_excess();
    let r_max = spec.rate.max();
    let bound = accel * r_max;

    let mut label = Label::root();
    let mut rec = SpineRecord {
        spine_labels: vec![label.clone()],
        spine_path: Path::constant(spec.initial, 0.0, 0.0),
        branch_times: Vec::new(),
        offspring_counts: Vec::new(),
        spine_children: Vec::new(),
        horizon,
    };
    let mut now = 0.0;
    if bound > 0.0 {
        loop {
            let wait: f64 = rng.sample(Exp1);
            let proposal = now + wait / bound;
            if proposal >= horizon {
                break;
            }
            mover.advance_to(proposal, &mut rng);
            now = proposal;
            let accept = match &spec.rate {
                RateFunction::Constant(_) => true,
                rate => rng.random::<f64>() * r_max < rate.at(mover.state()),
            };
            if !accept {
                continue;
            }
            let k = biased.sample(&mut rng);
            // one uniform regardless of k
            let u: f64 = rng.random();
            let choice = ((u * k as f64) as u32).min(k - 1);
            label = label.child(choice);
            rec.branch_times.push(proposal);
            rec.offspring_counts.push(k);
            rec.spine_children.push(choice);
            rec.spine_labels.push(label.clone());
        }
    }
    rec.spine_path = mover.finish(horizon, &mut rng);
    Ok(rec)
}

/// A full tree under the spine measure with its spine marked.
#[derive(Debug, Clone, PartialEq)]
pub struct QTree {
    pub tree: Tree,
    pub spine: SpineRecord,
    /// Record ids of the spine particles, parallel to `spine.spine_labels`.
    /// Shorter than the label list only if the particle cap cut the spine.
    pub spine_ids: Vec<ParticleId>,
}

impl QTree {
    /// Id of the spine particle alive at `t`.
    pub fn spine_id_at(&self, t: f64) -> Option<ParticleId> {
        self.spine_ids.get(self.spine.births_by(t) as usize).copied()
    }
}

/// Builds the spine (identically to [`simulate_spine_only`] with the same
/// handle) and grafts independent original-measure subtrees onto every
/// non-spine child.
pub fn simulate_q_tree(spec: &ModelSpec, caps: SimCaps, rng: RngHandle) -> Result<QTree> {
    caps.check()?;
    let spine = simulate_spine_only(spec, caps.horizon, rng)?;
    let mut builder = TreeBuilder::new(spec, caps, rng.with_purpose(Purpose::SpineSubtrees));

    let segment = |from: f64, to: f64| spine.spine_path.restrict(from, to);
    let n_branches = spine.branch_times.len();
    let end_of = |j: usize| spine.branch_times.get(j).copied();

    let mut spine_ids = Vec::with_capacity(n_branches + 1);
    let root = builder
        .push_record(ParticleRecord {
            parent: None,
            child_index: 0,
            generation: 0,
            birth: 0.0,
            death: end_of(0),
            offspring: spine.offspring_counts.first().copied(),
            first_child: None,
            path: segment(0.0, end_of(0).unwrap_or(caps.horizon))?,
        })
        .expect("cap >= 1");
    spine_ids.push(root);

    let mut parent = root;
    let mut parent_hash = ROOT_LABEL_HASH;
    for j in 0..n_branches {
        let time = spine.branch_times[j];
        let k = spine.offspring_counts[j];
        let choice = spine.spine_children[j];
        let x = spine.spine_path.value_at(time)?;
        let Some(first) = builder.allocate_children(parent, k, time, x) else {
            break;
        };
        for i in 0..k {
            if i != choice {
                builder.schedule(first + i, child_label_hash(parent_hash, i));
            }
        }
        let spine_child = first + choice;
        {
            let death = end_of(j + 1);
            let rec = builder.record_mut(spine_child);
            rec.death = death;
            rec.offspring = spine.offspring_counts.get(j + 1).copied();
            rec.path = segment(time, death.unwrap_or(caps.horizon))?;
        }
        spine_ids.push(spine_child);
        parent = spine_child;
        parent_hash = child_label_hash(parent_hash, choice);
    }
    builder.run();
    Ok(QTree {
        tree: builder.finish(),
        spine,
        spine_ids,
    })
}
