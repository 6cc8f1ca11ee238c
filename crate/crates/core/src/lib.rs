//! Markov branching processes with spine decompositions.
//!
//! Trees are simulated under the original measure ([`sim_p`]) or under the
//! spine measure ([`sim_q`]), where one marked line of descent branches faster
//! and has size-biased families. [`weights`] turns a tree into particle
//! weights, the additive martingale `Z(t)`, and the normalised weighted sums
//! whose long-time limit is the spine's behaviour. [`experiments`] runs the
//! Monte Carlo checks and [`cli`] wraps them in a command line harness.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod model;
mod motion;
mod numeric;
pub mod rng;
pub mod sim_p;
pub mod sim_q;
pub mod tree;
pub mod weights;

pub use error::{Error, Issue, Result};
pub use model::{
    offspring_mean, size_bias, validate_spec, zeta_eval, ModelSpec, MotionModel, OffspringKind, OffspringLaw,
    RateFunction, SpineWeightSpec, StatePoint,
};
pub use rng::{Purpose, RngHandle};
pub use sim_p::{root_lifetime_law_check, simulate_tree, SimCaps};
pub use sim_q::{simulate_q_tree, simulate_spine_only, QTree, SpineRecord};
pub use tree::{path_integral, Label, ParticleRecord, Path, Tree};

/// Floats in every output file: 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
