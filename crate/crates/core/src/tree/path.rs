use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::model::StatePoint;

/// Relative slack when matching a query time against path knots.
const TIME_TOL: f64 = 1e-9;

#[inline]
fn tol(t: f64) -> f64 {
    TIME_TOL * t.abs().max(1.0)
}

/// A particle trajectory over a time interval.
///
/// Chains and motionless particles are stored exactly as piecewise-constant
/// paths. Brownian paths are stored as samples at explicit times (the global
/// grid `k·h` plus the particle's birth, death and any rejected thinning
/// proposals); values between samples are linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub enum Path {
    Piecewise {
        /// `(time, state)` from which the state holds; first knot is the start.
        knots: SmallVec<[(f64, StatePoint); 2]>,
        end: f64,
    },
    Grid {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Path {
    pub fn constant(state: StatePoint, start: f64, end: f64) -> Self {
        Path::Piecewise {
            knots: smallvec![(start, state)],
            end,
        }
    }

    /// Piecewise-constant path from `(time, state)` knots, held until `end`.
    pub fn piecewise(knots: Vec<(f64, StatePoint)>, end: f64) -> Self {
        assert!(!knots.is_empty(), "a path needs at least one knot");
        Path::Piecewise {
            knots: knots.into(),
            end,
        }
    }

    pub fn grid(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert!(!times.is_empty() && times.len() == values.len());
        Path::Grid { times, values }
    }

    pub fn start(&self) -> f64 {
        match self {
            Path::Piecewise { knots, .. } => knots[0].0,
            Path::Grid { times, .. } => times[0],
        }
    }

    pub fn end(&self) -> f64 {
        match self {
            Path::Piecewise { end, .. } => *end,
            Path::Grid { times, .. } => *times.last().unwrap(),
        }
    }

    pub fn covers(&self, from: f64, to: f64) -> bool {
        from >= self.start() - tol(from) && to <= self.end() + tol(to) && from <= to + tol(to)
    }

    fn check(&self, from: f64, to: f64) -> Result<()> {
        if self.covers(from, to) {
            Ok(())
        } else {
            Err(Error::PathDomain {
                start: self.start(),
                end: self.end(),
                from,
                to,
            })
        }
    }

    pub fn value_at(&self, t: f64) -> Result<StatePoint> {
        self.check(t, t)?;
        Ok(self.value_unchecked(t))
    }

    fn value_unchecked(&self, t: f64) -> StatePoint {
        match self {
            Path::Piecewise { knots, .. } => {
                let i = knots.partition_point(|k| k.0 <= t + tol(t));
                knots[i.saturating_sub(1)].1
            }
            Path::Grid { times, values } => {
                let i = times.partition_point(|&s| s < t - tol(t));
                if i >= times.len() {
                    return StatePoint::Real(*values.last().unwrap());
                }
                if (times[i] - t).abs() <= tol(t) || i == 0 {
                    return StatePoint::Real(values[i]);
                }
                let (t0, t1) = (times[i - 1], times[i]);
                let w = (t - t0) / (t1 - t0);
                StatePoint::Real(values[i - 1] + w * (values[i] - values[i - 1]))
            }
        }
    }

    /// Value at the end of the path.
    pub fn terminal(&self) -> StatePoint {
        match self {
            Path::Piecewise { knots, .. } => knots.last().unwrap().1,
            Path::Grid { values, .. } => StatePoint::Real(*values.last().unwrap()),
        }
    }

    /// ∫ g(X(s)) ds over `[from, to]`: exact for piecewise paths; for grid paths
    /// the integral of the piecewise-linear interpolant of g through the samples
    /// (composite trapezoid, additive over any split point).
    pub fn integral<G: Fn(StatePoint) -> f64>(&self, g: G, from: f64, to: f64) -> Result<f64> {
        self.check(from, to)?;
        let (from, to) = (from.max(self.start()), to.min(self.end()));
        if to <= from {
            return Ok(0.0);
        }
        Ok(match self {
            Path::Piecewise { knots, end } => {
                let mut acc = 0.0;
                for (i, &(s, state)) in knots.iter().enumerate() {
                    let next = knots.get(i + 1).map_or(*end, |k| k.0);
                    let (a, b) = (s.max(from), next.min(to));
                    if b > a {
                        acc += g(state) * (b - a);
                    }
                    if next >= to {
                        break;
                    }
                }
                acc
            }
            Path::Grid { times, values } => {
                let gx = |x: f64| g(StatePoint::Real(x));
                let first = times.partition_point(|&s| s <= from).saturating_sub(1);
                let mut acc = 0.0;
                for i in first..times.len() - 1 {
                    let (t0, t1) = (times[i], times[i + 1]);
                    if t0 >= to {
                        break;
                    }
                    let (a, b) = (from.max(t0), to.min(t1));
                    if b <= a {
                        continue;
                    }
                    let (g0, g1) = (gx(values[i]), gx(values[i + 1]));
                    let lin = |s: f64| g0 + (g1 - g0) * (s - t0) / (t1 - t0);
                    acc += 0.5 * (lin(a) + lin(b)) * (b - a);
                }
                acc
            }
        })
    }

    /// The sub-path on `[from, to]`.
    pub fn restrict(&self, from: f64, to: f64) -> Result<Path> {
        self.check(from, to)?;
        let (from, to) = (from.max(self.start()), to.min(self.end()));
        Ok(match self {
            Path::Piecewise { knots, .. } => {
                let mut out: SmallVec<[(f64, StatePoint); 2]> = smallvec![(from, self.value_unchecked(from))];
                out.extend(knots.iter().filter(|k| k.0 > from + tol(from) && k.0 <= to).copied());
                Path::Piecewise { knots: out, end: to }
            }
            Path::Grid { times, values } => {
                let mut ts = vec![from];
                let mut xs = vec![self.value_unchecked(from).real().unwrap()];
                for (&s, &x) in times.iter().zip(values) {
                    if s > from + tol(from) && s < to - tol(to) {
                        ts.push(s);
                        xs.push(x);
                    }
                }
                if to > from {
                    ts.push(to);
                    xs.push(self.value_unchecked(to).real().unwrap());
                }
                Path::Grid { times: ts, values: xs }
            }
        })
    }

    /// Appends `next`, which must start where `self` ends.
    pub fn extend_with(&mut self, next: &Path) -> Result<()> {
        let junction = self.end();
        if (next.start() - junction).abs() > tol(junction) {
            return Err(Error::PathDomain {
                start: next.start(),
                end: next.end(),
                from: junction,
                to: next.end(),
            });
        }
        match (self, next) {
            (
                Path::Piecewise { knots, end },
                Path::Piecewise {
                    knots: more,
                    end: more_end,
                },
            ) => {
                for &(s, state) in more.iter() {
                    if knots.last().map(|k| k.1) != Some(state) {
                        knots.push((s, state));
                    }
                }
                *end = *more_end;
            }
            (
                Path::Grid { times, values },
                Path::Grid {
                    times: more_t,
                    values: more_v,
                },
            ) => {
                times.extend_from_slice(&more_t[1..]);
                values.extend_from_slice(&more_v[1..]);
            }
            _ => panic!("cannot join paths of different representations"),
        }
        Ok(())
    }

    /// Number of state changes along a piecewise path (0 for grid paths).
    pub fn jump_count(&self) -> usize {
        match self {
            Path::Piecewise { knots, .. } => knots.windows(2).filter(|w| w[0].1 != w[1].1).count(),
            Path::Grid { .. } => 0,
        }
    }

    pub(crate) fn push_knot(&mut self, t: f64, state: StatePoint) {
        match self {
            Path::Piecewise { knots, end } => {
                knots.push((t, state));
                *end = t;
            }
            Path::Grid { times, values } => {
                times.push(t);
                values.push(state.real().expect("grid paths hold real values"));
            }
        }
    }

    pub(crate) fn set_end(&mut self, t: f64) {
        if let Path::Piecewise { end, .. } = self {
            *end = t;
        }
    }
}

/// ∫₀ᵗ g(X(s)) ds along `path`, which must cover `[start, t]`.
pub fn path_integral<G: Fn(StatePoint) -> f64>(path: &Path, g: G, t: f64) -> Result<f64> {
    path.integral(g, path.start(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(knots: &[(f64, usize)], end: f64) -> Path {
        Path::piecewise(knots.iter().map(|&(t, s)| (t, StatePoint::Chain(s))).collect(), end)
    }

    #[test]
    fn constant_integrand() {
        let p = Path::constant(StatePoint::Unit, 0.0, 3.5);
        assert_eq!(path_integral(&p, |_| 2.0, 3.5).unwrap(), 7.0);
    }

    #[test]
    fn piecewise_table_integral() {
        let p = chain(&[(0.0, 0), (1.0, 1)], 3.0);
        let g = |x: StatePoint| if x == StatePoint::Chain(0) { 2.0 } else { 5.0 };
        assert_eq!(path_integral(&p, g, 3.0).unwrap(), 12.0);
    }

    #[test]
    fn grid_trapezoid_matches_fine_oracle() {
        // coarse samples of sin at step h vs a 10x finer oracle of the same function
        let h = 0.01;
        let n = 300;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let values: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        let p = Path::grid(times, values);
        let integral = path_integral(&p, |x| x.real().unwrap(), 3.0).unwrap();

        let fine = h / 10.0;
        let m = n * 10;
        let oracle: f64 = (0..m)
            .map(|k| {
                let (a, b) = (k as f64 * fine, (k + 1) as f64 * fine);
                0.5 * (a.sin() + b.sin()) * fine
            })
            .sum();
        assert!(((integral - oracle) / oracle).abs() < 1e-4);
        assert!(((oracle - (1.0 - 3f64.cos())) / oracle).abs() < 1e-6);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let p = chain(&[(1.0, 0)], 2.0);
        assert!(matches!(path_integral(&p, |_| 1.0, 3.0), Err(Error::PathDomain { .. })));
        assert!(p.value_at(0.5).is_err());
    }

    #[test]
    fn grid_values_interpolate() {
        let p = Path::grid(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, -2.0]);
        assert_eq!(p.value_at(0.5).unwrap(), StatePoint::Real(1.0));
        assert_eq!(p.value_at(2.0).unwrap(), StatePoint::Real(-2.0));
        let r = p.restrict(0.5, 1.5).unwrap();
        assert_eq!(r.start(), 0.5);
        assert_eq!(r.end(), 1.5);
        assert_eq!(r.value_at(1.0).unwrap(), StatePoint::Real(2.0));
        assert_eq!(r.terminal(), StatePoint::Real(0.0));
    }

    #[test]
    fn joining_merges_repeated_states() {
        let mut a = chain(&[(0.0, 0), (0.5, 1)], 1.0);
        let b = chain(&[(1.0, 1), (1.7, 0)], 2.0);
        a.extend_with(&b).unwrap();
        assert_eq!(a.jump_count(), 2);
        assert_eq!(a, chain(&[(0.0, 0), (0.5, 1), (1.7, 0)], 2.0));
        let c = chain(&[(2.5, 0)], 3.0);
        assert!(a.extend_with(&c).is_err());
    }

    fn arb_chain_path() -> impl Strategy<Value = Path> {
        prop::collection::vec(0.01f64..1.0, 1..12).prop_map(|gaps| {
            let mut t = 0.0;
            let mut knots = vec![(0.0, StatePoint::Chain(0))];
            for (i, g) in gaps.iter().enumerate() {
                t += g;
                knots.push((t, StatePoint::Chain((i + 1) % 2)));
            }
            Path::piecewise(knots, t + 0.5)
        })
    }

    fn arb_grid_path() -> impl Strategy<Value = Path> {
        prop::collection::vec((0.001f64..0.05, -1.0f64..1.0), 2..200).prop_map(|steps| {
            let mut t = 0.0;
            let mut x = 0.0;
            let (mut ts, mut xs) = (vec![0.0], vec![0.0]);
            for (dt, dx) in steps {
                t += dt;
                x += dx;
                ts.push(t);
                xs.push(x);
            }
            Path::grid(ts, xs)
        })
    }

    proptest! {
        #[test]
        fn piecewise_integral_is_additive(p in arb_chain_path(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let g = |x: StatePoint| 1.0 + 2.0 * x.chain_index().unwrap() as f64;
            let t = p.end() * a.max(b);
            let s = t * a.min(b);
            let whole = p.integral(g, 0.0, t).unwrap();
            let split = p.integral(g, 0.0, s).unwrap() + p.integral(g, s, t).unwrap();
            prop_assert!((whole - split).abs() <= 1e-12 * whole.abs().max(1.0));
        }

        #[test]
        fn grid_integral_is_additive(p in arb_grid_path(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let g = |x: StatePoint| x.real().unwrap().cos();
            let t = p.end() * a.max(b);
            let s = t * a.min(b);
            let whole = p.integral(g, 0.0, t).unwrap();
            let split = p.integral(g, 0.0, s).unwrap() + p.integral(g, s, t).unwrap();
            prop_assert!((whole - split).abs() <= 1e-9 * whole.abs().max(1.0));
        }

        #[test]
        fn restriction_then_join_reproduces_the_path(p in arb_chain_path(), a in 0.05f64..0.95) {
            let s = p.end() * a;
            let mut left = p.restrict(p.start(), s).unwrap();
            let right = p.restrict(s, p.end()).unwrap();
            left.extend_with(&right).unwrap();
            prop_assert_eq!(left.jump_count(), p.jump_count());
            let g = |x: StatePoint| x.chain_index().unwrap() as f64;
            let (i1, i2) = (left.integral(g, 0.0, p.end()).unwrap(), p.integral(g, 0.0, p.end()).unwrap());
            prop_assert!((i1 - i2).abs() < 1e-12);
        }
    }
}
