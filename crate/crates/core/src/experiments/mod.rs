//! Monte Carlo experiments and the exact finite-time identities that anchor them.
//!
//! Every experiment maps replications `0..reps` to per-replication values in
//! parallel, collects them in replication order, and summarises sequentially,
//! so output depends only on the configuration and the master seed.

mod oracle;
mod stats;

use rayon::prelude::*;

use crate::error::{Error, Issue, Result};
use crate::model::{validate_spec, ModelSpec, MotionModel, OffspringKind, RateFunction, SpineWeightSpec, StatePoint};
use crate::rng::{Purpose, RngHandle, ROOT_LABEL_HASH};
use crate::sim_p::{simulate_lifetime, simulate_tree, SimCaps};
use crate::sim_q::{simulate_q_tree, simulate_spine_only};
use crate::tree::Tree;
use crate::weights::{spine_inputs, AdditiveFunctional, GTransform, Snapshot};

pub use oracle::{gaussian_window, poisson_cdf, poisson_window, stationary_mean, yule_uniform_window};
pub use stats::{summarize, z_score, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    BirthRate,
    Occupation,
    BbmTilt,
    MeanOne,
    ManyToOne,
    SpinePosterior,
    DeathTime,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::BirthRate,
        ExperimentKind::Occupation,
        ExperimentKind::BbmTilt,
        ExperimentKind::MeanOne,
        ExperimentKind::ManyToOne,
        ExperimentKind::SpinePosterior,
        ExperimentKind::DeathTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BirthRate => "birth_rate",
            ExperimentKind::Occupation => "occupation",
            ExperimentKind::BbmTilt => "bbm_tilt",
            ExperimentKind::MeanOne => "mean_one",
            ExperimentKind::ManyToOne => "many_to_one",
            ExperimentKind::SpinePosterior => "spine_posterior",
            ExperimentKind::DeathTime => "death_time",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Statistic of the spine particle used by the spine-posterior check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TallyStatistic {
    /// 1{generation ≤ k}.
    BirthsAtMost(u32),
    /// 1{terminal chain state = s}.
    TerminalStateIs(usize),
}

impl TallyStatistic {
    pub fn eval(&self, births: u32, terminal: StatePoint) -> f64 {
        let hit = match *self {
            TallyStatistic::BirthsAtMost(k) => births <= k,
            TallyStatistic::TerminalStateIs(s) => terminal.chain_index() == Some(s),
        };
        f64::from(u8::from(hit))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub spec: ModelSpec,
    pub functional: AdditiveFunctional,
    pub grid: Vec<f64>,
    pub caps: SimCaps,
    pub reps: u64,
    pub master_seed: u64,
    pub tally: Option<TallyStatistic>,
    /// Absolute tolerance accepted alongside the z-score, where a check allows one.
    pub abs_tol: Option<f64>,
    pub z_limit: f64,
    /// Replications with `Z(t)` at or below this are left out of the tilted (★) average.
    pub z_floor: f64,
}

/// Grid used when none is given.
pub fn default_grid(spec: &ModelSpec) -> Vec<f64> {
    match spec.motion {
        MotionModel::TwoStateChain { .. } => vec![4.0, 8.0, 16.0],
        MotionModel::BrownianMotion { .. } => vec![2.0, 4.0, 8.0],
        MotionModel::None => vec![2.0, 4.0, 8.0, 12.0],
    }
}

/// Functional used when none is given.
pub fn default_functional(kind: ExperimentKind, spec: &ModelSpec) -> AdditiveFunctional {
    match kind {
        ExperimentKind::BirthRate => AdditiveFunctional::BirthRateIndicator {
            target: spec.mean_offspring() * spec.rate.max(),
            epsilon: 0.5,
        },
        ExperimentKind::Occupation => AdditiveFunctional::OccupationAverage {
            h: vec![0.0, 1.0],
            g: GTransform::Identity,
        },
        ExperimentKind::BbmTilt => AdditiveFunctional::TerminalSpeedIndicator {
            speed: spec.spine_drift(),
            epsilon: 0.3,
        },
        _ => AdditiveFunctional::One,
    }
}

impl ExperimentConfig {
    /// Defaults: horizon at the last grid point, 10⁴ replications, seed 0, z-limit 4.
    pub fn new(kind: ExperimentKind, spec: ModelSpec, functional: AdditiveFunctional, grid: Vec<f64>) -> Self {
        let horizon = grid.iter().copied().fold(0.0, f64::max);
        Self {
            kind,
            spec,
            functional,
            grid,
            caps: SimCaps::new(horizon),
            reps: 10_000,
            master_seed: 0,
            tally: None,
            abs_tol: None,
            z_limit: 4.0,
            z_floor: 0.0,
        }
    }

    /// Checks the model, the grid, and the kind's preconditions. Returns model warnings.
    pub fn validate(&self) -> Result<Vec<Issue>> {
        let warnings = validate_spec(&self.spec)?;
        self.caps.check()?;
        let bad = |key: &str, msg: &str| Err(Error::config(None, key, msg));
        if self.reps == 0 {
            return bad("experiment.reps", "must be at least 1");
        }
        if self.grid.is_empty() {
            return bad("experiment.grid", "must list at least one time");
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return bad("experiment.grid", "times must be strictly increasing");
        }
        // f ≡ 1 and the lifetime check are the only things defined at t = 0
        let needs_positive = self.kind != ExperimentKind::DeathTime && self.functional != AdditiveFunctional::One;
        if self
            .grid
            .iter()
            .any(|&t| !t.is_finite() || t < 0.0 || (needs_positive && t == 0.0))
        {
            return bad("experiment.grid", "times must be finite and positive");
        }
        if self.grid.last().copied().unwrap_or(0.0) > self.caps.horizon {
            return bad("experiment.grid", "times must not exceed caps.horizon");
        }
        if self.z_limit.is_nan() || self.z_limit <= 0.0 {
            return bad("experiment.z_limit", "must be positive");
        }
        if let Some(tol) = self.abs_tol {
            if tol.is_nan() || tol < 0.0 {
                return bad("experiment.abs_tol", "must be non-negative");
            }
        }
        self.check_functional()?;
        let spec = &self.spec;
        match self.kind {
            ExperimentKind::BirthRate => {
                if !spec.rate.is_constant() {
                    return bad("model.rate_table", "birth_rate needs a constant rate (model.beta)");
                }
                if !matches!(self.functional, AdditiveFunctional::BirthRateIndicator { .. }) {
                    return bad("experiment.functional", "birth_rate needs functional = birth_rate");
                }
            }
            ExperimentKind::Occupation => {
                if !matches!(spec.motion, MotionModel::TwoStateChain { .. }) {
                    return bad("model.motion", "occupation needs motion = two_state_chain");
                }
                if spec.zeta != SpineWeightSpec::One {
                    return bad("model.zeta", "occupation needs zeta = one");
                }
                if !matches!(self.functional, AdditiveFunctional::OccupationAverage { .. }) {
                    return bad("experiment.functional", "occupation needs functional = occupation");
                }
            }
            ExperimentKind::BbmTilt => {
                if !matches!(spec.motion, MotionModel::BrownianMotion { .. }) {
                    return bad("model.motion", "bbm_tilt needs motion = brownian");
                }
                if !matches!(spec.zeta, SpineWeightSpec::Girsanov { .. }) {
                    return bad("model.zeta", "bbm_tilt needs zeta = girsanov");
                }
                if !matches!(self.functional, AdditiveFunctional::TerminalSpeedIndicator { .. }) {
                    return bad("experiment.functional", "bbm_tilt needs functional = terminal_speed");
                }
            }
            ExperimentKind::SpinePosterior => match self.tally {
                None => return bad("experiment.tally", "spine_posterior needs a tally statistic"),
                Some(TallyStatistic::TerminalStateIs(s)) => {
                    if !matches!(spec.motion, MotionModel::TwoStateChain { .. }) || s > 1 {
                        return bad(
                            "experiment.tally",
                            "terminal_state needs a two_state_chain state (0 or 1)",
                        );
                    }
                }
                Some(TallyStatistic::BirthsAtMost(_)) => {}
            },
            ExperimentKind::MeanOne | ExperimentKind::ManyToOne | ExperimentKind::DeathTime => {}
        }
        Ok(warnings)
    }

    fn check_functional(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(None, key, msg));
        match &self.functional {
            AdditiveFunctional::One => {}
            AdditiveFunctional::BirthRateIndicator { target, epsilon }
            | AdditiveFunctional::TerminalSpeedIndicator { speed: target, epsilon } => {
                if !target.is_finite() {
                    return bad("experiment.target", "must be finite");
                }
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    return bad("experiment.epsilon", "must be positive");
                }
                if matches!(self.functional, AdditiveFunctional::TerminalSpeedIndicator { .. })
                    && !matches!(self.spec.motion, MotionModel::BrownianMotion { .. })
                {
                    return bad("experiment.functional", "terminal_speed needs motion = brownian");
                }
            }
            AdditiveFunctional::OccupationAverage { h, g } => {
                if !matches!(self.spec.motion, MotionModel::TwoStateChain { .. }) {
                    return bad("experiment.functional", "occupation needs motion = two_state_chain");
                }
                if h.len() != 2 || h.iter().any(|v| !v.is_finite()) {
                    return bad("experiment.h", "needs one finite value per chain state");
                }
                if let GTransform::Window { lo, hi } = g {
                    if lo.partial_cmp(hi) != Some(std::cmp::Ordering::Less) {
                        return bad("experiment.g", "window needs lo < hi");
                    }
                }
            }
        }
        Ok(())
    }
}

/// How a summary row takes part in pass/fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    None,
    ZScore {
        limit: f64,
    },
    /// Pass if `|z| ≤ limit` or `|mean − oracle| ≤ abs`.
    ZOrAbs {
        limit: f64,
        abs: f64,
    },
}

/// One replication at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub rep: u64,
    pub t: f64,
    pub pop: usize,
    pub z: Option<f64>,
    pub star: Option<f64>,
    pub extinct: bool,
    pub truncated: bool,
    /// Experiment-specific companion value; see [`run_experiment`].
    pub f_context: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub estimator: String,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub oracle: Option<f64>,
    pub z: Option<f64>,
    pub used_reps: usize,
    pub trunc_rate: f64,
    pub ext_rate: f64,
    pub gate: Gate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Not enough data to decide.
    Skip,
    /// Reported, not judged.
    Info,
}

impl Status {
    pub fn tag(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
            Status::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub series: Vec<SeriesRow>,
    pub summary: Vec<SummaryRow>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<Issue>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn row(&self, estimator: &str, t: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.estimator == estimator && r.t == t)
    }

    pub fn rows<'a>(&'a self, estimator: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.summary.iter().filter(move |r| r.estimator == estimator)
    }
}

/// Runs the configured experiment.
///
/// `f_context` in the series is `Σ_u f_u w_u` for experiments on trees under
/// the original measure, the spine's own tally for `spine_posterior`, and
/// empty for `death_time` (where `pop` is 1 while the root is alive).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let warnings = cfg.validate()?;
    let mut out = match cfg.kind {
        ExperimentKind::BirthRate => exp_birth_rate(cfg)?,
        ExperimentKind::Occupation => exp_occupation(cfg)?,
        ExperimentKind::BbmTilt => exp_bbm_tilt(cfg)?,
        ExperimentKind::MeanOne => check_mean_one(cfg)?,
        ExperimentKind::ManyToOne => check_many_to_one(cfg)?,
        ExperimentKind::SpinePosterior => check_spine_posterior(cfg)?,
        ExperimentKind::DeathTime => exp_death_time(cfg)?,
    };
    out.warnings = warnings;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
struct Point {
    pop: usize,
    z: Option<f64>,
    star: Option<f64>,
    context: Option<f64>,
    extinct: bool,
    truncated: bool,
}

fn per_rep<T, F>(reps: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..reps).into_par_iter().map(f).collect()
}

fn snapshot_point(tree: &Tree, spec: &ModelSpec, f: &AdditiveFunctional, t: f64) -> Result<Point> {
    let snap = match Snapshot::new(tree, spec, t, f.occupation_table()) {
        Err(Error::TruncatedTree { .. }) => {
            return Ok(Point {
                truncated: true,
                ..Point::default()
            })
        }
        other => other?,
    };
    if snap.is_extinct() {
        return Ok(Point {
            z: Some(0.0),
            context: Some(0.0),
            extinct: true,
            ..Point::default()
        });
    }
    let z = snap.z();
    let star = snap.weighted_sum(f)?;
    Ok(Point {
        pop: snap.population(),
        z: Some(z),
        star: Some(star),
        context: Some(star * z),
        ..Point::default()
    })
}

fn p_tree_points(cfg: &ExperimentConfig) -> Result<Vec<Vec<Point>>> {
    per_rep(cfg.reps, |rep| {
        let tree = simulate_tree(
            &cfg.spec,
            cfg.caps,
            RngHandle::new(cfg.master_seed, rep, Purpose::PTree),
        )?;
        cfg.grid
            .iter()
            .map(|&t| snapshot_point(&tree, &cfg.spec, &cfg.functional, t))
            .collect()
    })
}

fn series(points: &[Vec<Point>], grid: &[f64]) -> Vec<SeriesRow> {
    points
        .iter()
        .enumerate()
        .flat_map(|(rep, row)| {
            row.iter().zip(grid).map(move |(p, &t)| SeriesRow {
                rep: rep as u64,
                t,
                pop: p.pop,
                z: p.z,
                star: p.star,
                extinct: p.extinct,
                truncated: p.truncated,
                f_context: p.context,
            })
        })
        .collect()
}

struct Column<'a> {
    points: &'a [Vec<Point>],
    i: usize,
    t: f64,
}

impl Column<'_> {
    fn values(&self, pick: impl Fn(&Point) -> Option<f64>) -> Vec<f64> {
        self.points.iter().filter_map(|row| pick(&row[self.i])).collect()
    }

    fn rates(&self) -> (f64, f64) {
        let n = self.points.len() as f64;
        let count = |pred: fn(&Point) -> bool| self.points.iter().filter(|row| pred(&row[self.i])).count() as f64 / n;
        (count(|p| p.truncated), count(|p| p.extinct))
    }

    fn row(&self, estimator: &str, values: &[f64], oracle: Option<f64>, gate: Gate) -> SummaryRow {
        let (trunc_rate, ext_rate) = self.rates();
        summary_row(self.t, estimator, values, oracle, gate, trunc_rate, ext_rate)
    }
}

fn columns<'a>(points: &'a [Vec<Point>], grid: &'a [f64]) -> impl Iterator<Item = Column<'a>> + 'a {
    grid.iter().enumerate().map(move |(i, &t)| Column { points, i, t })
}

fn summary_row(
    t: f64,
    estimator: &str,
    values: &[f64],
    oracle: Option<f64>,
    gate: Gate,
    trunc_rate: f64,
    ext_rate: f64,
) -> SummaryRow {
    let mut row = SummaryRow {
        t,
        estimator: estimator.to_string(),
        mean: values.first().copied(),
        se: None,
        ci_lo: None,
        ci_hi: None,
        oracle,
        z: None,
        used_reps: values.len(),
        trunc_rate,
        ext_rate,
        gate,
    };
    if let Ok(s) = summarize(values) {
        row.mean = Some(s.mean);
        row.se = Some(s.se);
        row.ci_lo = Some(s.ci_lo);
        row.ci_hi = Some(s.ci_hi);
        row.z = oracle.map(|o| z_score(s.mean, s.se, o));
    }
    row
}

/// Row for the difference of two estimators with the given standard error.
fn difference_row(t: f64, a: &SummaryRow, b: &SummaryRow, se: Option<f64>, gate: Gate) -> SummaryRow {
    let mean = a.mean.zip(b.mean).map(|(x, y)| x - y);
    let ci = mean.zip(se).map(|(m, s)| (m - 1.96 * s, m + 1.96 * s));
    SummaryRow {
        t,
        estimator: "A-B".to_string(),
        mean,
        se,
        ci_lo: ci.map(|c| c.0),
        ci_hi: ci.map(|c| c.1),
        oracle: Some(0.0),
        z: mean.zip(se).map(|(m, s)| z_score(m, s, 0.0)),
        used_reps: a.used_reps.min(b.used_reps),
        trunc_rate: a.trunc_rate.max(b.trunc_rate),
        ext_rate: a.ext_rate.max(b.ext_rate),
        gate,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn gate_verdict(row: &SummaryRow) -> Option<Verdict> {
    let name = format!("{} t={}", row.estimator, row.t);
    let detail = format!(
        "mean={} se={} oracle={} z={}",
        fmt_opt(row.mean),
        fmt_opt(row.se),
        fmt_opt(row.oracle),
        fmt_opt(row.z)
    );
    let (limit, abs) = match row.gate {
        Gate::None => return None,
        Gate::ZScore { limit } => (limit, None),
        Gate::ZOrAbs { limit, abs } => (limit, Some(abs)),
    };
    let status = match (row.mean, row.z, row.oracle) {
        (Some(mean), Some(z), Some(oracle)) => {
            let within_abs = abs.is_some_and(|a| (mean - oracle).abs() <= a);
            if z.abs() <= limit || within_abs {
                Status::Pass
            } else {
                Status::Fail
            }
        }
        _ => Status::Skip,
    };
    let detail = match abs {
        Some(a) => format!("{detail} (|z|<={limit} or |diff|<={a})"),
        None => format!("{detail} (|z|<={limit})"),
    };
    Some(Verdict { name, status, detail })
}

/// A row's mean against a value other than its oracle column.
fn exact_verdict(name: &str, row: &SummaryRow, exact: f64, limit: f64) -> Verdict {
    let z = row.mean.zip(row.se).map(|(m, s)| z_score(m, s, exact));
    let status = match z {
        Some(z) if z.abs() <= limit => Status::Pass,
        Some(_) => Status::Fail,
        None => Status::Skip,
    };
    Verdict {
        name: name.to_string(),
        status,
        detail: format!(
            "mean={} se={} exact={exact:.6} z={} (|z|<={limit})",
            fmt_opt(row.mean),
            fmt_opt(row.se),
            fmt_opt(z)
        ),
    }
}

/// Means nondecreasing in t up to `k` standard errors of each step.
fn trend_verdict(name: &str, rows: &[&SummaryRow], k: f64) -> Verdict {
    let mut status = Status::Pass;
    let mut parts = Vec::new();
    for w in rows.windows(2) {
        let (Some(m0), Some(m1)) = (w[0].mean, w[1].mean) else {
            status = Status::Skip;
            continue;
        };
        let se = (w[0].se.unwrap_or(0.0).powi(2) + w[1].se.unwrap_or(0.0).powi(2)).sqrt();
        if w[0].se.is_none() || w[1].se.is_none() {
            status = Status::Skip;
        } else if m1 < m0 - k * se && status != Status::Skip {
            status = Status::Fail;
        }
        parts.push(format!("t={}→{}: {:+.5}", w[0].t, w[1].t, m1 - m0));
    }
    Verdict {
        name: name.to_string(),
        status,
        detail: format!("{} (allowed drop {k} SE)", parts.join(", ")),
    }
}

fn truncation_verdict(summary: &[SummaryRow]) -> Verdict {
    let worst = summary.iter().map(|r| r.trunc_rate).fold(0.0, f64::max);
    Verdict {
        name: "truncation rate".to_string(),
        status: if worst < 0.05 { Status::Pass } else { Status::Fail },
        detail: format!("max {worst:.4} (must be < 0.05)"),
    }
}

fn finish(
    kind: ExperimentKind,
    series: Vec<SeriesRow>,
    summary: Vec<SummaryRow>,
    mut extra: Vec<Verdict>,
) -> ExperimentOutput {
    let mut verdicts: Vec<Verdict> = summary.iter().filter_map(gate_verdict).collect();
    verdicts.append(&mut extra);
    verdicts.push(truncation_verdict(&summary));
    ExperimentOutput {
        kind,
        series,
        summary,
        verdicts,
        warnings: Vec::new(),
    }
}

/// Branch-count oracle `Q̃[f(t)]` for a birth-rate indicator: along the spine
/// branch events form a Poisson process of rate `mβ` when the rate is constant.
fn birth_rate_oracle(spec: &ModelSpec, f: &AdditiveFunctional, t: f64) -> Option<f64> {
    match (f, &spec.rate) {
        (AdditiveFunctional::BirthRateIndicator { target, epsilon }, RateFunction::Constant(beta)) => {
            Some(poisson_window(spec.mean_offspring() * beta * t, t, *target, *epsilon))
        }
        _ => None,
    }
}

fn spine_speed_oracle(spec: &ModelSpec, f: &AdditiveFunctional, t: f64) -> Option<f64> {
    match (f, spec.sigma()) {
        (AdditiveFunctional::TerminalSpeedIndicator { speed, epsilon }, Some(sigma)) => {
            let x0 = spec.initial.real().unwrap_or(0.0);
            Some(gaussian_window(x0, spec.spine_drift(), sigma, t, *speed, *epsilon))
        }
        _ => None,
    }
}

/// `Q̃[f(t)]` where it has a closed form.
pub fn spine_oracle(spec: &ModelSpec, f: &AdditiveFunctional, t: f64) -> Option<f64> {
    match f {
        AdditiveFunctional::One => Some(1.0),
        AdditiveFunctional::BirthRateIndicator { .. } => birth_rate_oracle(spec, f, t),
        AdditiveFunctional::TerminalSpeedIndicator { .. } => spine_speed_oracle(spec, f, t),
        AdditiveFunctional::OccupationAverage { .. } => None,
    }
}

/// Mean of (★) over surviving replications (limit 1), and `Σ f w` against the
/// branch-count oracle. For binary branching (★) is also checked against its
/// exact finite-time law.
pub fn exp_birth_rate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let points = p_tree_points(cfg)?;
    let gate = Gate::ZScore { limit: cfg.z_limit };
    let mut summary = Vec::new();
    for col in columns(&points, &cfg.grid) {
        let oracle = birth_rate_oracle(&cfg.spec, &cfg.functional, col.t);
        summary.push(col.row("star", &col.values(|p| p.star), Some(1.0), Gate::None));
        summary.push(col.row("sum_fw", &col.values(|p| p.context), oracle, gate));
        summary.push(col.row("Z", &col.values(|p| p.z), Some(1.0), Gate::None));
    }
    let star: Vec<&SummaryRow> = summary.iter().filter(|r| r.estimator == "star").collect();
    let mut extra = vec![trend_verdict("star nondecreasing in t", &star, 2.0)];
    if let (
        OffspringKind::Deterministic(2),
        RateFunction::Constant(beta),
        AdditiveFunctional::BirthRateIndicator { target, epsilon },
    ) = (cfg.spec.offspring.kind(), &cfg.spec.rate, &cfg.functional)
    {
        for row in &star {
            let exact = yule_uniform_window(*beta, row.t, *target, *epsilon);
            extra.push(exact_verdict(
                &format!("star t={} vs uniform-particle law", row.t),
                row,
                exact,
                cfg.z_limit,
            ));
        }
    }
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, extra))
}

/// Mean of (★) for an occupation average against `g(L_h)`; gated at the last grid time.
pub fn exp_occupation(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let AdditiveFunctional::OccupationAverage { h, g } = &cfg.functional else {
        return Err(Error::config(
            None,
            "experiment.functional",
            "occupation needs functional = occupation",
        ));
    };
    let limit = stationary_mean(&cfg.spec.motion, h).map(|l| g.apply(l));
    let points = p_tree_points(cfg)?;
    let last = cfg.grid.len() - 1;
    let mut summary = Vec::new();
    for col in columns(&points, &cfg.grid) {
        let gate = match (col.i == last, cfg.abs_tol) {
            (false, _) => Gate::None,
            (true, Some(abs)) => Gate::ZOrAbs {
                limit: cfg.z_limit,
                abs,
            },
            (true, None) => Gate::ZScore { limit: cfg.z_limit },
        };
        summary.push(col.row("star", &col.values(|p| p.star), limit, gate));
        summary.push(col.row("Z", &col.values(|p| p.z), Some(1.0), Gate::None));
    }
    let gaps: Vec<String> = summary
        .iter()
        .filter(|r| r.estimator == "star")
        .map(|r| {
            format!(
                "t={}: {}",
                r.t,
                fmt_opt(r.mean.zip(r.oracle).map(|(m, o)| (m - o).abs()))
            )
        })
        .collect();
    let trend = Verdict {
        name: "|star - g(L_h)| by t".to_string(),
        status: Status::Info,
        detail: gaps.join(", "),
    };
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, vec![trend]))
}

/// Girsanov-tilted branching Brownian motion: (★) for the terminal-speed
/// indicator, `Σ f w` against the Gaussian spine oracle, and `Z(t)`.
pub fn exp_bbm_tilt(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let points = p_tree_points(cfg)?;
    let critical = cfg.spec.critical_lambda().unwrap_or(f64::INFINITY);
    let lambda = match cfg.spec.zeta {
        SpineWeightSpec::Girsanov { lambda } => lambda,
        SpineWeightSpec::One => 0.0,
    };
    let subcritical = lambda.abs() < critical;
    let gate = if subcritical {
        Gate::ZScore { limit: cfg.z_limit }
    } else {
        Gate::None
    };
    let mut summary = Vec::new();
    for col in columns(&points, &cfg.grid) {
        let oracle = spine_speed_oracle(&cfg.spec, &cfg.functional, col.t);
        let star = col.values(|p| p.star.filter(|_| p.z.is_some_and(|z| z > cfg.z_floor)));
        summary.push(col.row("star", &star, Some(1.0), Gate::None));
        summary.push(col.row("sum_fw", &col.values(|p| p.context), oracle, gate));
        summary.push(col.row("Z", &col.values(|p| p.z), Some(1.0), gate));
    }
    let extra = if subcritical {
        let star: Vec<&SummaryRow> = summary.iter().filter(|r| r.estimator == "star").collect();
        vec![trend_verdict("star nondecreasing in t", &star, 2.0)]
    } else {
        let z: Vec<&SummaryRow> = summary.iter().filter(|r| r.estimator == "Z").collect();
        decay_verdicts(&points, &cfg.grid, &z)
    };
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, extra))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Beyond the critical tilt `Z(t) → 0` almost surely while `E[Z(t)] = 1`, so
/// sample means are dominated by rare large replications. The mean-based form
/// is reported; the median-based form is judged.
fn decay_verdicts(points: &[Vec<Point>], grid: &[f64], z_rows: &[&SummaryRow]) -> Vec<Verdict> {
    if grid.len() < 2 {
        return vec![Verdict {
            name: "supercritical Z decay".to_string(),
            status: Status::Skip,
            detail: "need two grid times".to_string(),
        }];
    }
    let last = grid.len() - 1;
    let mean_first = z_rows.first().and_then(|r| r.mean).unwrap_or(f64::NAN);
    let mean_last = z_rows.last().and_then(|r| r.mean).unwrap_or(f64::NAN);
    let med = |i: usize| median(points.iter().filter_map(|row| row[i].z).collect()).unwrap_or(f64::NAN);
    let (med_first, med_last) = (med(0), med(last));
    let judged = med_last < med_first && med_last < 0.1;
    vec![
        Verdict {
            name: "supercritical Z decay (mean)".to_string(),
            status: Status::Info,
            detail: format!(
                "mean Z: t={} {mean_first:.6}, t={} {mean_last:.6}; last<first and last<0.1: {} (E[Z]=1 at every t)",
                grid[0],
                grid[last],
                mean_last < mean_first && mean_last < 0.1
            ),
        },
        Verdict {
            name: "supercritical Z decay (median)".to_string(),
            status: if judged { Status::Pass } else { Status::Fail },
            detail: format!(
                "median Z: t={} {med_first:.6}, t={} {med_last:.6} (need last < first and last < 0.1)",
                grid[0], grid[last]
            ),
        },
    ]
}

/// Monte Carlo mean of `Z(t)` against 1. Extinct replications count as `Z = 0`.
pub fn check_mean_one(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let points = p_tree_points(cfg)?;
    let gate = Gate::ZScore { limit: cfg.z_limit };
    let summary = columns(&points, &cfg.grid)
        .map(|col| col.row("Z", &col.values(|p| p.z), Some(1.0), gate))
        .collect();
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, Vec::new()))
}

/// A: mean of `Σ_u f_u w_u` over trees; B: mean of `f` on independent
/// spine-only paths. Both estimate `Q̃[f(t)]`.
pub fn check_many_to_one(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let points = p_tree_points(cfg)?;
    let horizon = cfg.caps.horizon;
    let spine_values: Vec<Vec<f64>> = per_rep(cfg.reps, |rep| {
        let spine = simulate_spine_only(&cfg.spec, horizon, RngHandle::new(cfg.master_seed, rep, Purpose::Spine))?;
        cfg.grid
            .iter()
            .map(|&t| cfg.functional.evaluate(&spine_inputs(&spine, &cfg.functional, t)?))
            .collect()
    })?;
    let gate = Gate::ZScore { limit: cfg.z_limit };
    let mut summary = Vec::new();
    for col in columns(&points, &cfg.grid) {
        let oracle = spine_oracle(&cfg.spec, &cfg.functional, col.t);
        let oracle_gate = if oracle.is_some() { gate } else { Gate::None };
        let a = col.row("A", &col.values(|p| p.context), oracle, oracle_gate);
        let b_values: Vec<f64> = spine_values.iter().map(|v| v[col.i]).collect();
        let b = summary_row(col.t, "B", &b_values, oracle, oracle_gate, 0.0, 0.0);
        let se = a.se.zip(b.se).map(|(x, y)| x.hypot(y));
        let diff = difference_row(col.t, &a, &b, se, gate);
        summary.extend([a, b, diff]);
    }
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, Vec::new()))
}

/// On full spine-measure trees, A is the tally of the true spine and B its
/// posterior expectation `Σ_u g*(u) w_u / Z`. Compared through paired differences.
pub fn check_spine_posterior(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let tally = cfg
        .tally
        .ok_or_else(|| Error::config(None, "experiment.tally", "spine_posterior needs a tally statistic"))?;
    let points: Vec<Vec<Point>> = per_rep(cfg.reps, |rep| {
        let q = simulate_q_tree(
            &cfg.spec,
            cfg.caps,
            RngHandle::new(cfg.master_seed, rep, Purpose::Spine),
        )?;
        cfg.grid
            .iter()
            .map(|&t| {
                let snap = match Snapshot::new(&q.tree, &cfg.spec, t, None) {
                    Err(Error::TruncatedTree { .. }) => {
                        return Ok(Point {
                            truncated: true,
                            ..Point::default()
                        })
                    }
                    other => other?,
                };
                let posterior = snap.posterior()?;
                let b: f64 = posterior
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p * tally.eval(snap.births[i], snap.terminal[i]))
                    .sum();
                let a = tally.eval(q.spine.births_by(t), q.spine.position_at(t)?);
                Ok(Point {
                    pop: snap.population(),
                    z: Some(snap.z()),
                    star: Some(b),
                    context: Some(a),
                    ..Point::default()
                })
            })
            .collect()
    })?;
    let oracle_for = |t: f64| match (tally, &cfg.spec.rate) {
        (TallyStatistic::BirthsAtMost(k), RateFunction::Constant(beta)) => {
            Some(poisson_cdf(cfg.spec.mean_offspring() * beta * t, k))
        }
        _ => None,
    };
    let gate = Gate::ZScore { limit: cfg.z_limit };
    let mut summary = Vec::new();
    for col in columns(&points, &cfg.grid) {
        let oracle = oracle_for(col.t);
        let oracle_gate = if oracle.is_some() { gate } else { Gate::None };
        let a = col.row("A", &col.values(|p| p.context), oracle, oracle_gate);
        let b = col.row("B", &col.values(|p| p.star), oracle, oracle_gate);
        let paired = col.values(|p| p.context.zip(p.star).map(|(x, y)| x - y));
        let se = summarize(&paired).ok().map(|s| s.se);
        let diff = difference_row(col.t, &a, &b, se, gate);
        summary.extend([a, b, diff]);
    }
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, Vec::new()))
}

/// Fraction of root particles alive at each grid time, against `exp(−βt)` for constant rates.
pub fn exp_death_time(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let horizon = cfg.caps.horizon;
    let points: Vec<Vec<Point>> = per_rep(cfg.reps, |rep| {
        let mut rng = RngHandle::new(cfg.master_seed, rep, Purpose::Lifetime).particle_rng(ROOT_LABEL_HASH);
        let life = simulate_lifetime(&cfg.spec, horizon, 0.0, cfg.spec.initial, &mut rng);
        let death = life.death.map_or(f64::INFINITY, |(t, _)| t);
        Ok(cfg
            .grid
            .iter()
            .map(|&t| Point {
                pop: usize::from(t < death),
                ..Point::default()
            })
            .collect())
    })?;
    let gate = Gate::ZScore { limit: cfg.z_limit };
    let summary = columns(&points, &cfg.grid)
        .map(|col| {
            let oracle = match cfg.spec.rate {
                RateFunction::Constant(beta) => Some((-beta * col.t).exp()),
                _ => None,
            };
            let alive = col.values(|p| Some(p.pop as f64));
            col.row(
                "survival",
                &alive,
                oracle,
                if oracle.is_some() { gate } else { Gate::None },
            )
        })
        .collect();
    Ok(finish(cfg.kind, series(&points, &cfg.grid), summary, Vec::new()))
}

#[cfg(test)]
mod tests;
