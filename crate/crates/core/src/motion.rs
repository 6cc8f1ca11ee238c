//! Incremental path construction for one particle.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::model::{MotionModel, StatePoint};
use crate::tree::Path;

const SNAP: f64 = 1e-9;

enum Kind {
    Still,
    Chain {
        rates: [f64; 2],
        state: usize,
        next_jump: f64,
    },
    Brownian {
        sigma: f64,
        drift: f64,
        step: f64,
        x: f64,
        /// Index of the next global grid time `k·step` strictly after `now`.
        next_k: u64,
    },
}

/// Extends a particle path forward in time, drawing from the particle's own
/// generator. Chain holding times are drawn one ahead, so the draws consumed up
/// to any time do not depend on how far the caller later advances.
pub(crate) struct Mover {
    kind: Kind,
    now: f64,
    path: Path,
}

impl Mover {
    pub fn start<R: Rng + ?Sized>(motion: &MotionModel, drift: f64, birth: f64, x0: StatePoint, rng: &mut R) -> Self {
        match *motion {
            MotionModel::None => Self {
                kind: Kind::Still,
                now: birth,
                path: Path::constant(x0, birth, birth),
            },
            MotionModel::TwoStateChain { q01, q10 } => {
                let state = x0.chain_index().unwrap_or(0);
                let rates = [q01, q10];
                let hold: f64 = rng.sample(Exp1);
                Self {
                    kind: Kind::Chain {
                        rates,
                        state,
                        next_jump: birth + hold / rates[state],
                    },
                    now: birth,
                    path: Path::constant(StatePoint::Chain(state), birth, birth),
                }
            }
            MotionModel::BrownianMotion { sigma, step } => {
                let x = x0.real().unwrap_or(0.0);
                let mut next_k = (birth / step).floor() as u64 + 1;
                if next_k as f64 * step <= birth + SNAP * step {
                    next_k += 1;
                }
                Self {
                    kind: Kind::Brownian {
                        sigma,
                        drift,
                        step,
                        x,
                        next_k,
                    },
                    now: birth,
                    path: Path::grid(vec![birth], vec![x]),
                }
            }
        }
    }

    pub fn state(&self) -> StatePoint {
        match self.kind {
            Kind::Still => self.path.terminal(),
            Kind::Chain { state, .. } => StatePoint::Chain(state),
            Kind::Brownian { x, .. } => StatePoint::Real(x),
        }
    }

    /// Moves the particle forward to time `t`.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        if t <= self.now {
            return;
        }
        match &mut self.kind {
            Kind::Still => {}
            Kind::Chain {
                rates,
                state,
                next_jump,
            } => {
                while *next_jump <= t {
                    *state = 1 - *state;
                    self.path.push_knot(*next_jump, StatePoint::Chain(*state));
                    let hold: f64 = rng.sample(Exp1);
                    *next_jump += hold / rates[*state];
                }
            }
            Kind::Brownian {
                sigma,
                drift,
                step,
                x,
                next_k,
            } => {
                let snap = SNAP * *step;
                let mut now = self.now;
                let mut walk = |to: f64, x: &mut f64, rng: &mut R| {
                    let dt = to - now;
                    let z: f64 = rng.sample(StandardNormal);
                    *x += *drift * dt + *sigma * dt.sqrt() * z;
                    now = to;
                };
                loop {
                    let g = *next_k as f64 * *step;
                    if g < t - snap {
                        walk(g, x, rng);
                        self.path.push_knot(g, StatePoint::Real(*x));
                        *next_k += 1;
                    } else {
                        if (g - t).abs() <= snap {
                            *next_k += 1;
                        }
                        break;
                    }
                }
                walk(t, x, rng);
                self.path.push_knot(t, StatePoint::Real(*x));
            }
        }
        self.now = t;
    }

    /// Finishes the path at `end` (the particle's death or the horizon).
    pub fn finish<R: Rng + ?Sized>(mut self, end: f64, rng: &mut R) -> Path {
        self.advance_to(end, rng);
        self.path.set_end(end);
        self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngHandle};

    #[test]
    fn brownian_nodes_on_grid_and_endpoints() {
        let mut rng = RngHandle::new(3, 0, Purpose::Motion).rng();
        let motion = MotionModel::BrownianMotion { sigma: 1.0, step: 0.25 };
        let mut m = Mover::start(&motion, 0.0, 0.1, StatePoint::Real(1.0), &mut rng);
        m.advance_to(0.6, &mut rng);
        let path = m.finish(1.0, &mut rng);
        let Path::Grid { times, values } = &path else { panic!() };
        assert_eq!(times, &vec![0.1, 0.25, 0.5, 0.6, 0.75, 1.0]);
        assert_eq!(values[0], 1.0);
    }

    #[test]
    fn chain_path_alternates_states() {
        let mut rng = RngHandle::new(3, 0, Purpose::Motion).rng();
        let motion = MotionModel::TwoStateChain { q01: 2.0, q10: 3.0 };
        let path = Mover::start(&motion, 0.0, 0.0, StatePoint::Chain(1), &mut rng).finish(10.0, &mut rng);
        let Path::Piecewise { knots, end } = &path else {
            panic!()
        };
        assert_eq!(*end, 10.0);
        assert_eq!(knots[0], (0.0, StatePoint::Chain(1)));
        assert!(knots.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 != w[1].1));
        assert_eq!(path.jump_count(), knots.len() - 1);
    }

    #[test]
    fn brownian_increments_have_right_law() {
        // terminal X(2) with drift 0.5, sigma 1.5: N(1, 4.5)
        let motion = MotionModel::BrownianMotion { sigma: 1.5, step: 0.1 };
        let n = 20_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for rep in 0..n {
            let mut rng = RngHandle::new(9, rep, Purpose::Motion).rng();
            let x = Mover::start(&motion, 0.5, 0.0, StatePoint::Real(0.0), &mut rng)
                .finish(2.0, &mut rng)
                .terminal()
                .real()
                .unwrap();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 4.0 * (4.5f64 / n as f64).sqrt());
        assert!((var - 4.5).abs() < 4.0 * 4.5 * (2.0 / n as f64).sqrt());
    }
}
