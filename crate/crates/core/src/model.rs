//! The ingredients of a branching process: particle motion, branching rate,
//! offspring law, and the spine weight ζ together with the spine motion it
//! induces.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Issue, Result};
use crate::tree::Path;

/// Offspring pmfs of unbounded laws are tabulated on `0..=PMF_TRUNCATION`.
pub const PMF_TRUNCATION: usize = 200;
/// Largest tail mass that may be folded into the last tabulated atom.
pub const MAX_FOLDED_TAIL: f64 = 1e-14;
const PMF_SUM_TOL: f64 = 1e-12;

/// A point of the motion state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatePoint {
    /// The state space of a motionless process.
    Unit,
    /// Index of a finite-chain state.
    Chain(usize),
    /// Position on the real line.
    Real(f64),
}

impl StatePoint {
    pub fn chain_index(self) -> Option<usize> {
        match self {
            StatePoint::Chain(i) => Some(i),
            StatePoint::Unit => Some(0),
            StatePoint::Real(_) => None,
        }
    }

    pub fn real(self) -> Option<f64> {
        match self {
            StatePoint::Real(x) => Some(x),
            _ => None,
        }
    }
}

impl fmt::Display for StatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatePoint::Unit => write!(f, "-"),
            StatePoint::Chain(i) => write!(f, "{i}"),
            StatePoint::Real(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MotionModel {
    /// Particles do not move.
    None,
    /// Continuous-time chain on {0, 1} with jump rates 0→1 and 1→0.
    TwoStateChain { q01: f64, q10: f64 },
    /// `sigma`·(standard Brownian motion), recorded on a grid of step `step`.
    BrownianMotion { sigma: f64, step: f64 },
}

impl MotionModel {
    pub fn default_initial(&self) -> StatePoint {
        match self {
            MotionModel::None => StatePoint::Unit,
            MotionModel::TwoStateChain { .. } => StatePoint::Chain(0),
            MotionModel::BrownianMotion { .. } => StatePoint::Real(0.0),
        }
    }

    /// Stationary law of the two-state chain, `None` for other motions.
    pub fn stationary_law(&self) -> Option<[f64; 2]> {
        match *self {
            MotionModel::TwoStateChain { q01, q10 } => {
                let p1 = q01 / (q01 + q10);
                Some([1.0 - p1, p1])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateFunction {
    Constant(f64),
    /// Rate per chain state.
    StateDependent(Vec<f64>),
}

impl RateFunction {
    #[inline]
    pub fn at(&self, x: StatePoint) -> f64 {
        match self {
            RateFunction::Constant(beta) => *beta,
            RateFunction::StateDependent(table) => x.chain_index().and_then(|i| table.get(i).copied()).unwrap_or(0.0),
        }
    }

    /// Upper bound used for thinning.
    pub fn max(&self) -> f64 {
        match self {
            RateFunction::Constant(beta) => *beta,
            RateFunction::StateDependent(table) => table.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RateFunction::Constant(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OffspringKind {
    Deterministic(u32),
    /// Zero children with probability `p0`, two otherwise.
    TwoPoint {
        p0: f64,
    },
    /// P(k) = p (1-p)^k on {0, 1, 2, ...}.
    Geometric {
        p: f64,
    },
    Poisson {
        mu: f64,
    },
    /// An explicit table, e.g. the output of [`size_bias`].
    Tabulated,
}

/// Law of the number of children replacing a dying particle.
///
/// The pmf is tabulated at construction. Construction never fails; the
/// parameter and normalisation invariants are checked by [`OffspringLaw::issues`]
/// (and hence by [`validate_spec`]).
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    kind: OffspringKind,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    /// Mass beyond the table that could not be folded into the last atom.
    tail: f64,
}

impl OffspringLaw {
    pub fn deterministic(k: u32) -> Self {
        let mut pmf = vec![0.0; k as usize + 1];
        pmf[k as usize] = 1.0;
        Self::build(OffspringKind::Deterministic(k), pmf, 0.0)
    }

    pub fn two_point(p0: f64) -> Self {
        Self::build(OffspringKind::TwoPoint { p0 }, vec![p0, 0.0, 1.0 - p0], 0.0)
    }

    pub fn geometric(p: f64) -> Self {
        let q = 1.0 - p;
        let pmf: Vec<f64> = (0..=PMF_TRUNCATION as i32).map(|k| p * q.powi(k)).collect();
        let tail = q.powi(PMF_TRUNCATION as i32 + 1);
        Self::fold_tail(OffspringKind::Geometric { p }, pmf, tail)
    }

    pub fn poisson(mu: f64) -> Self {
        let mut pmf = Vec::with_capacity(PMF_TRUNCATION + 1);
        let mut term = (-mu).exp();
        pmf.push(term);
        for k in 1..=PMF_TRUNCATION {
            term *= mu / k as f64;
            pmf.push(term);
        }
        let mut tail = 0.0;
        for k in PMF_TRUNCATION + 1..PMF_TRUNCATION + 2000 {
            term *= mu / k as f64;
            tail += term;
            if term < tail * 1e-17 || term == 0.0 {
                break;
            }
        }
        Self::fold_tail(OffspringKind::Poisson { mu }, pmf, tail)
    }

    /// A law given by an explicit pmf over `0..pmf.len()`.
    pub fn tabulated(pmf: Vec<f64>) -> Self {
        Self::build(OffspringKind::Tabulated, pmf, 0.0)
    }

    fn fold_tail(kind: OffspringKind, mut pmf: Vec<f64>, tail: f64) -> Self {
        if tail <= MAX_FOLDED_TAIL {
            if let Some(last) = pmf.last_mut() {
                *last += tail;
            }
            Self::build(kind, pmf, 0.0)
        } else {
            Self::build(kind, pmf, tail)
        }
    }

    fn build(kind: OffspringKind, mut pmf: Vec<f64>, tail: f64) -> Self {
        while pmf.len() > 1 && pmf.last() == Some(&0.0) {
            pmf.pop();
        }
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { kind, pmf, cdf, tail }
    }

    pub fn kind(&self) -> &OffspringKind {
        &self.kind
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// Probability of exactly `k` children.
    pub fn prob(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    /// Mean of the tabulated pmf. Call [`offspring_mean`] for the checked version.
    pub fn mean_unchecked(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum()
    }

    pub fn is_point_mass(&self) -> bool {
        self.pmf.iter().filter(|&&p| p > 0.0).count() == 1
    }

    pub fn max_count(&self) -> usize {
        self.pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Inverse-cdf draw; consumes exactly one uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.max_count()) as u32
    }

    pub fn issues(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        match self.kind {
            OffspringKind::TwoPoint { p0 } if !(0.0..=1.0).contains(&p0) => {
                issues.push(Issue::new("offspring.p0", format!("{p0} is not a probability")));
            }
            OffspringKind::Geometric { p } if !(p > 0.0 && p <= 1.0) => {
                issues.push(Issue::new("offspring.p", format!("{p} must lie in (0, 1]")));
            }
            OffspringKind::Poisson { mu } if !(mu.is_finite() && mu >= 0.0) => {
                issues.push(Issue::new("offspring.mu", format!("{mu} must be finite and >= 0")));
            }
            _ => {}
        }
        if let Some(k) = self.pmf.iter().position(|p| !(0.0..=1.0).contains(p)) {
            issues.push(Issue::new(
                format!("offspring.pmf[{k}]"),
                format!("{} is not a probability", self.pmf[k]),
            ));
        }
        if self.tail > MAX_FOLDED_TAIL {
            issues.push(Issue::new(
                "offspring",
                format!("tail mass {:e} beyond k={PMF_TRUNCATION} does not converge", self.tail),
            ));
        } else {
            let total: f64 = self.pmf.iter().sum();
            if (total - 1.0).abs() > PMF_SUM_TOL {
                issues.push(Issue::new("offspring.pmf", format!("sums to {total}, not 1")));
            }
        }
        issues
    }
}

/// Mean number of children `m`; everywhere else `M = m - 1`.
pub fn offspring_mean(law: &OffspringLaw) -> Result<f64> {
    let issues = law.issues();
    if !issues.is_empty() {
        return Err(Error::InvalidModel(issues));
    }
    Ok(law.mean_unchecked())
}

/// The size-biased law `k·p(k)/m`, which is the offspring law of the spine.
pub fn size_bias(law: &OffspringLaw) -> Result<OffspringLaw> {
    let m = offspring_mean(law)?;
    if m <= 0.0 {
        return Err(Error::invalid(
            "offspring",
            "mean is 0; the spine cannot be size-biased",
        ));
    }
    let pmf = law.pmf.iter().enumerate().map(|(k, p)| k as f64 * p / m).collect();
    Ok(OffspringLaw::tabulated(pmf))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpineWeightSpec {
    /// ζ ≡ 1; the spine moves like any other particle.
    One,
    /// ζ(t) = exp(λ X(t) − λ²σ²t/2) for Brownian motion started at 0; under the
    /// spine measure the spine picks up drift λσ².
    Girsanov { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub motion: MotionModel,
    pub rate: RateFunction,
    pub offspring: OffspringLaw,
    pub zeta: SpineWeightSpec,
    pub initial: StatePoint,
}

impl ModelSpec {
    pub fn new(motion: MotionModel, rate: RateFunction, offspring: OffspringLaw, zeta: SpineWeightSpec) -> Self {
        let initial = motion.default_initial();
        Self {
            motion,
            rate,
            offspring,
            zeta,
            initial,
        }
    }

    pub fn with_initial(mut self, initial: StatePoint) -> Self {
        self.initial = initial;
        self
    }

    /// Mean offspring `m`, unchecked.
    pub fn mean_offspring(&self) -> f64 {
        self.offspring.mean_unchecked()
    }

    /// `M(x) = m - 1`, state independent for every shipped law.
    pub fn branch_excess(&self) -> f64 {
        self.mean_offspring() - 1.0
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.motion {
            MotionModel::BrownianMotion { sigma, .. } => Some(sigma),
            _ => None,
        }
    }

    /// Drift of the spine under the spine measure.
    pub fn spine_drift(&self) -> f64 {
        match (&self.zeta, self.sigma()) {
            (SpineWeightSpec::Girsanov { lambda }, Some(sigma)) => lambda * sigma * sigma,
            _ => 0.0,
        }
    }

    /// log ζ(t) for a path whose value at `t` is `x_t`.
    pub fn log_zeta(&self, x_t: StatePoint, t: f64) -> f64 {
        match (&self.zeta, self.sigma()) {
            (SpineWeightSpec::One, _) => 0.0,
            (SpineWeightSpec::Girsanov { lambda }, Some(sigma)) => {
                let x = x_t.real().unwrap_or(0.0);
                lambda * x - 0.5 * lambda * lambda * sigma * sigma * t
            }
            (SpineWeightSpec::Girsanov { .. }, None) => f64::NAN,
        }
    }

    /// Tilt beyond which the additive martingale is expected to vanish:
    /// `sqrt(2 (m-1) β) / σ` for constant-rate Brownian models.
    pub fn critical_lambda(&self) -> Option<f64> {
        match (&self.rate, self.sigma()) {
            (RateFunction::Constant(beta), Some(sigma)) => {
                let excess = self.branch_excess() * beta;
                (excess >= 0.0).then(|| (2.0 * excess).sqrt() / sigma)
            }
            _ => None,
        }
    }
}

/// Checks every model invariant. Returns warnings on success.
pub fn validate_spec(spec: &ModelSpec) -> Result<Vec<Issue>> {
    let mut issues = Vec::new();
    let mut warnings = Vec::new();
    let positive = |v: f64| v.is_finite() && v > 0.0;

    match spec.motion {
        MotionModel::None => {}
        MotionModel::TwoStateChain { q01, q10 } => {
            if !positive(q01) {
                issues.push(Issue::new("motion.q01", format!("{q01} must be > 0")));
            }
            if !positive(q10) {
                issues.push(Issue::new("motion.q10", format!("{q10} must be > 0")));
            }
        }
        MotionModel::BrownianMotion { sigma, step } => {
            if !positive(sigma) {
                issues.push(Issue::new("motion.sigma", format!("{sigma} must be > 0")));
            }
            if !positive(step) {
                issues.push(Issue::new("motion.step", format!("{step} must be > 0")));
            }
        }
    }

    let initial_ok = match (&spec.motion, spec.initial) {
        (MotionModel::None, StatePoint::Unit) => true,
        (MotionModel::TwoStateChain { .. }, StatePoint::Chain(i)) => i < 2,
        (MotionModel::BrownianMotion { .. }, StatePoint::Real(x)) => x.is_finite(),
        _ => false,
    };
    if !initial_ok {
        issues.push(Issue::new(
            "initial",
            format!("{:?} is not a state of {:?}", spec.initial, spec.motion),
        ));
    }

    match &spec.rate {
        RateFunction::Constant(beta) => {
            if !(beta.is_finite() && *beta >= 0.0) {
                issues.push(Issue::new("rate.beta", format!("{beta} must be finite and >= 0")));
            }
        }
        RateFunction::StateDependent(table) => {
            if !matches!(spec.motion, MotionModel::TwoStateChain { .. }) {
                issues.push(Issue::new(
                    "rate.table",
                    "state-dependent rates need two-state-chain motion",
                ));
            } else if table.len() != 2 {
                issues.push(Issue::new(
                    "rate.table",
                    format!("needs one rate per chain state (2), got {}", table.len()),
                ));
            }
            for (i, r) in table.iter().enumerate() {
                if !(r.is_finite() && *r >= 0.0) {
                    issues.push(Issue::new(
                        format!("rate.table[{i}]"),
                        format!("{r} must be finite and >= 0"),
                    ));
                }
            }
        }
    }

    issues.extend(spec.offspring.issues());

    if let SpineWeightSpec::Girsanov { lambda } = spec.zeta {
        if !lambda.is_finite() {
            issues.push(Issue::new("zeta.lambda", format!("{lambda} must be finite")));
        }
        if !matches!(spec.motion, MotionModel::BrownianMotion { .. }) {
            issues.push(Issue::new("zeta", "Girsanov weight needs Brownian motion"));
        } else if spec.initial != StatePoint::Real(0.0) {
            issues.push(Issue::new("initial", "Girsanov weight assumes a start at 0"));
        }
        if issues.is_empty() {
            if let Some(critical) = spec.critical_lambda() {
                if lambda.abs() >= critical {
                    warnings.push(Issue::new(
                        "zeta.lambda",
                        format!(
                            "|lambda|={} >= {critical:.6}: the additive martingale is expected to vanish (Z(inf)=0)",
                            lambda.abs()
                        ),
                    ));
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(warnings)
    } else {
        Err(Error::InvalidModel(issues))
    }
}

/// ζ along `path` at time `t`. The path must start at time 0.
pub fn zeta_eval(spec: &ModelSpec, path: &Path, t: f64) -> Result<f64> {
    if path.start() > 0.0 {
        return Err(Error::PathDomain {
            start: path.start(),
            end: path.end(),
            from: 0.0,
            to: t,
        });
    }
    let x_t = path.value_at(t)?;
    Ok(spec.log_zeta(x_t, t).exp())
}
