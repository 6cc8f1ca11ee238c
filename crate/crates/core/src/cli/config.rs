//! Flat `key = value` run configuration.
//!
//! Keys live in three sections, `[experiment]`, `[model]` and `[caps]`, and
//! may also be written fully qualified (`model.beta = 1`) or, outside any
//! section, by their bare name (`beta = 1`). `experiment = <kind>` is short
//! for `experiment.kind`. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Issue, Result};
use crate::experiments::{default_functional, default_grid, ExperimentConfig, ExperimentKind, TallyStatistic};
use crate::model::{ModelSpec, MotionModel, OffspringKind, OffspringLaw, RateFunction, SpineWeightSpec, StatePoint};
use crate::weights::{AdditiveFunctional, GTransform};

pub const KEYS: &[&str] = &[
    "experiment.kind",
    "experiment.reps",
    "experiment.seed",
    "experiment.grid",
    "experiment.functional",
    "experiment.target",
    "experiment.epsilon",
    "experiment.h",
    "experiment.g",
    "experiment.tally",
    "experiment.abs_tol",
    "experiment.z_limit",
    "experiment.z_floor",
    "model.motion",
    "model.q01",
    "model.q10",
    "model.sigma",
    "model.step",
    "model.x0",
    "model.beta",
    "model.rate_table",
    "model.offspring",
    "model.zeta",
    "model.lambda",
    "caps.max_particles",
    "caps.horizon",
];

const SECTIONS: &[&str] = &["experiment", "model", "caps"];

/// Default spatial step for Brownian paths.
pub const DEFAULT_STEP: f64 = 0.01;

fn canonical(section: Option<&str>, key: &str) -> Option<&'static str> {
    let full = match section {
        Some(s) => format!("{s}.{key}"),
        None if key == "experiment" => "experiment.kind".to_string(),
        None if key.contains('.') => key.to_string(),
        None => return KEYS.iter().copied().find(|k| k.rsplit('.').next() == Some(key)),
    };
    KEYS.iter().copied().find(|k| *k == full)
}

#[derive(Debug, Clone, Default)]
struct Entries {
    map: BTreeMap<&'static str, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(Some(line_no), line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::config(Some(line_no), name, "unknown section"));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line_no), line, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let full = canonical(section.as_deref(), key).ok_or_else(|| {
                let shown = section
                    .as_ref()
                    .map(|s| format!("{s}.{key}"))
                    .unwrap_or_else(|| key.to_string());
                Error::config(Some(line_no), shown, "unknown key")
            })?;
            if value.is_empty() {
                return Err(Error::config(Some(line_no), full, "empty value"));
            }
            if let Some((_, first)) = map.insert(full, (value.to_string(), line_no)) {
                return Err(Error::config(
                    Some(line_no),
                    full,
                    format!("duplicate key (first set at line {first})"),
                ));
            }
        }
        Ok(Self { map })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(_, l)| *l)
    }

    fn raw(&self, key: &'static str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn err(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::config(self.line(key), key, msg)
    }

    fn get<T: std::str::FromStr>(&self, key: &'static str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(Some(line), key, format!("cannot parse `{v}`"))),
        }
    }

    fn float(&self, key: &'static str) -> Result<Option<f64>> {
        let v: Option<f64> = self.get(key)?;
        match v {
            Some(x) if !x.is_finite() => Err(self.err(key, format!("{x} is not finite"))),
            _ => Ok(v),
        }
    }

    fn list(&self, key: &'static str) -> Result<Option<Vec<f64>>> {
        let Some((v, line)) = self.raw(key) else {
            return Ok(None);
        };
        parse_list(v)
            .map(Some)
            .ok_or_else(|| Error::config(Some(line), key, format!("cannot parse number list `{v}`")))
    }

    fn require(&self, key: &'static str) -> Result<&str> {
        self.raw(key)
            .map(|(v, _)| v)
            .ok_or_else(|| Error::config(None, key, "missing"))
    }

    fn forbid(&self, key: &'static str, why: &str) -> Result<()> {
        match self.line(key) {
            Some(line) => Err(Error::config(Some(line), key, why)),
            None => Ok(()),
        }
    }
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect()
}

/// `name(a, b, ...)` or bare `name`.
fn call(v: &str) -> Option<(&str, Vec<&str>)> {
    let v = v.trim();
    match v.split_once('(') {
        None => Some((v, Vec::new())),
        Some((name, rest)) => {
            let args = rest.strip_suffix(')')?;
            Some((name.trim(), args.split(',').map(str::trim).collect()))
        }
    }
}

fn one_float(args: &[&str]) -> Option<f64> {
    match args {
        [a] => a.parse().ok(),
        _ => None,
    }
}

pub fn parse_offspring(v: &str) -> Option<OffspringLaw> {
    let (name, args) = call(v)?;
    if let Some(k) = name.strip_prefix("deterministic").filter(|s| !s.is_empty()) {
        return args
            .is_empty()
            .then(|| k.parse().ok().map(OffspringLaw::deterministic))
            .flatten();
    }
    match name {
        "deterministic" => match args.as_slice() {
            [k] => k.parse().ok().map(OffspringLaw::deterministic),
            _ => None,
        },
        "two_point" => one_float(&args).map(OffspringLaw::two_point),
        "geometric" => one_float(&args).map(OffspringLaw::geometric),
        "poisson" => one_float(&args).map(OffspringLaw::poisson),
        "table" => args
            .iter()
            .map(|a| a.parse().ok())
            .collect::<Option<Vec<f64>>>()
            .map(OffspringLaw::tabulated),
        _ => None,
    }
}

pub fn offspring_to_string(law: &OffspringLaw) -> String {
    match law.kind() {
        OffspringKind::Deterministic(k) => format!("deterministic({k})"),
        OffspringKind::TwoPoint { p0 } => format!("two_point({p0})"),
        OffspringKind::Geometric { p } => format!("geometric({p})"),
        OffspringKind::Poisson { mu } => format!("poisson({mu})"),
        OffspringKind::Tabulated => format!("table({})", join(law.pmf())),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_g(v: &str) -> Option<GTransform> {
    let (name, args) = call(v)?;
    match (name, args.as_slice()) {
        ("identity", []) => Some(GTransform::Identity),
        ("square", []) => Some(GTransform::Square),
        ("window", [lo, hi]) => Some(GTransform::Window {
            lo: lo.parse().ok()?,
            hi: hi.parse().ok()?,
        }),
        _ => None,
    }
}

fn g_to_string(g: &GTransform) -> String {
    match g {
        GTransform::Identity => "identity".to_string(),
        GTransform::Square => "square".to_string(),
        GTransform::Window { lo, hi } => format!("window({lo}, {hi})"),
    }
}

fn parse_tally(v: &str) -> Option<TallyStatistic> {
    let (name, args) = call(v)?;
    match (name, args.as_slice()) {
        ("births_at_most", [k]) => k.parse().ok().map(TallyStatistic::BirthsAtMost),
        ("terminal_state", [s]) => s.parse().ok().map(TallyStatistic::TerminalStateIs),
        _ => None,
    }
}

fn tally_to_string(t: &TallyStatistic) -> String {
    match t {
        TallyStatistic::BirthsAtMost(k) => format!("births_at_most({k})"),
        TallyStatistic::TerminalStateIs(s) => format!("terminal_state({s})"),
    }
}

/// Config key for a model issue field.
fn issue_key(field: &str) -> &'static str {
    let head = field.split(['.', '[']).next().unwrap_or(field);
    match (head, field) {
        (_, "motion.q01") => "model.q01",
        (_, "motion.q10") => "model.q10",
        (_, "motion.sigma") => "model.sigma",
        (_, "motion.step") => "model.step",
        (_, "rate.beta") => "model.beta",
        ("rate", _) => "model.rate_table",
        (_, "zeta.lambda") => "model.lambda",
        ("zeta", _) => "model.zeta",
        ("initial", _) => "model.x0",
        ("offspring", _) => "model.offspring",
        _ => "model.motion",
    }
}

fn model_error(entries: &Entries, issues: &[Issue]) -> Error {
    let first = &issues[0];
    let key = issue_key(&first.field);
    let msg = issues.iter().map(Issue::to_string).collect::<Vec<_>>().join("; ");
    entries.err(key, msg)
}

fn parse_spec(e: &Entries) -> Result<ModelSpec> {
    let motion_name = e.raw("model.motion").map(|(v, _)| v).unwrap_or("none");
    let motion = match motion_name {
        "none" => {
            for key in ["model.q01", "model.q10", "model.sigma", "model.step", "model.x0"] {
                e.forbid(key, "not used with motion = none")?;
            }
            MotionModel::None
        }
        "two_state_chain" => {
            for key in ["model.sigma", "model.step"] {
                e.forbid(key, "not used with motion = two_state_chain")?;
            }
            MotionModel::TwoStateChain {
                q01: e.float("model.q01")?.ok_or_else(|| e.err("model.q01", "missing"))?,
                q10: e.float("model.q10")?.ok_or_else(|| e.err("model.q10", "missing"))?,
            }
        }
        "brownian" => {
            for key in ["model.q01", "model.q10"] {
                e.forbid(key, "not used with motion = brownian")?;
            }
            MotionModel::BrownianMotion {
                sigma: e.float("model.sigma")?.unwrap_or(1.0),
                step: e.float("model.step")?.unwrap_or(DEFAULT_STEP),
            }
        }
        other => {
            return Err(e.err(
                "model.motion",
                format!("unknown motion `{other}` (none, two_state_chain, brownian)"),
            ))
        }
    };

    let rate = match (e.float("model.beta")?, e.list("model.rate_table")?) {
        (Some(beta), None) => RateFunction::Constant(beta),
        (None, Some(table)) => RateFunction::StateDependent(table),
        (Some(_), Some(_)) => return Err(e.err("model.rate_table", "give either model.beta or model.rate_table")),
        (None, None) => return Err(Error::config(None, "model.beta", "missing (or model.rate_table)")),
    };

    let offspring_raw = e.require("model.offspring")?;
    let offspring = parse_offspring(offspring_raw).ok_or_else(|| {
        e.err(
            "model.offspring",
            format!("cannot parse `{offspring_raw}` (deterministic(k), two_point(p0), geometric(p), poisson(mu), table(p0, p1, ...))"),
        )
    })?;

    let zeta = match e.raw("model.zeta").map(|(v, _)| v).unwrap_or("one") {
        "one" => {
            e.forbid("model.lambda", "only used with zeta = girsanov")?;
            SpineWeightSpec::One
        }
        "girsanov" => SpineWeightSpec::Girsanov {
            lambda: e
                .float("model.lambda")?
                .ok_or_else(|| e.err("model.lambda", "missing for zeta = girsanov"))?,
        },
        other => return Err(e.err("model.zeta", format!("unknown weight `{other}` (one, girsanov)"))),
    };

    let mut spec = ModelSpec::new(motion, rate, offspring, zeta);
    if let Some((v, line)) = e.raw("model.x0") {
        let bad = || Error::config(Some(line), "model.x0", format!("cannot parse `{v}`"));
        spec.initial = match spec.motion {
            MotionModel::TwoStateChain { .. } => StatePoint::Chain(v.parse().map_err(|_| bad())?),
            _ => StatePoint::Real(v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad)?),
        };
    }
    Ok(spec)
}

fn parse_functional(e: &Entries, kind: ExperimentKind, spec: &ModelSpec) -> Result<AdditiveFunctional> {
    let name = match e.raw("experiment.functional") {
        Some((v, _)) => v,
        None => match default_functional(kind, spec) {
            AdditiveFunctional::One => "one",
            AdditiveFunctional::BirthRateIndicator { .. } => "birth_rate",
            AdditiveFunctional::OccupationAverage { .. } => "occupation",
            AdditiveFunctional::TerminalSpeedIndicator { .. } => "terminal_speed",
        },
    };
    let defaults = |wanted: &str| {
        [
            ExperimentKind::BirthRate,
            ExperimentKind::Occupation,
            ExperimentKind::BbmTilt,
        ]
        .into_iter()
        .map(|k| default_functional(k, spec))
        .find(|f| functional_name(f) == wanted)
    };
    let windowed = matches!(name, "birth_rate" | "terminal_speed");
    if !windowed {
        e.forbid(
            "experiment.target",
            "only used by the birth_rate and terminal_speed functionals",
        )?;
        e.forbid(
            "experiment.epsilon",
            "only used by the birth_rate and terminal_speed functionals",
        )?;
    }
    if name != "occupation" {
        e.forbid("experiment.h", "only used by the occupation functional")?;
        e.forbid("experiment.g", "only used by the occupation functional")?;
    }
    match name {
        "one" => Ok(AdditiveFunctional::One),
        "birth_rate" | "terminal_speed" => {
            let (d_target, d_eps) = match defaults(name) {
                Some(AdditiveFunctional::BirthRateIndicator { target, epsilon })
                | Some(AdditiveFunctional::TerminalSpeedIndicator { speed: target, epsilon }) => (target, epsilon),
                _ => unreachable!("default windowed functional"),
            };
            let target = e.float("experiment.target")?.unwrap_or(d_target);
            let epsilon = e.float("experiment.epsilon")?.unwrap_or(d_eps);
            Ok(if name == "birth_rate" {
                AdditiveFunctional::BirthRateIndicator { target, epsilon }
            } else {
                AdditiveFunctional::TerminalSpeedIndicator { speed: target, epsilon }
            })
        }
        "occupation" => {
            let h = e.list("experiment.h")?.unwrap_or_else(|| vec![0.0, 1.0]);
            let g = match e.raw("experiment.g") {
                None => GTransform::Identity,
                Some((v, line)) => parse_g(v).ok_or_else(|| {
                    Error::config(
                        Some(line),
                        "experiment.g",
                        format!("cannot parse `{v}` (identity, square, window(lo, hi))"),
                    )
                })?,
            };
            Ok(AdditiveFunctional::OccupationAverage { h, g })
        }
        other => Err(e.err(
            "experiment.functional",
            format!("unknown functional `{other}` (one, birth_rate, occupation, terminal_speed)"),
        )),
    }
}

fn functional_name(f: &AdditiveFunctional) -> &'static str {
    match f {
        AdditiveFunctional::One => "one",
        AdditiveFunctional::BirthRateIndicator { .. } => "birth_rate",
        AdditiveFunctional::OccupationAverage { .. } => "occupation",
        AdditiveFunctional::TerminalSpeedIndicator { .. } => "terminal_speed",
    }
}

/// Parses and validates a config. Returns the config and model warnings.
pub fn parse_config_str(text: &str) -> Result<(ExperimentConfig, Vec<Issue>)> {
    let e = Entries::parse(text)?;
    let kind_raw = e.require("experiment.kind")?;
    let kind = ExperimentKind::from_name(kind_raw).ok_or_else(|| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        e.err(
            "experiment.kind",
            format!("unknown experiment `{kind_raw}` ({})", names.join(", ")),
        )
    })?;
    let spec = parse_spec(&e)?;
    let functional = parse_functional(&e, kind, &spec)?;
    let grid = match e.list("experiment.grid")? {
        Some(g) => g,
        None if kind == ExperimentKind::DeathTime => vec![1.0],
        None => default_grid(&spec),
    };
    let mut cfg = ExperimentConfig::new(kind, spec, functional, grid);
    if let Some(h) = e.float("caps.horizon")? {
        cfg.caps.horizon = h;
    }
    if let Some(m) = e.get::<usize>("caps.max_particles")? {
        cfg.caps = cfg.caps.with_max_particles(m);
    }
    if let Some(r) = e.get("experiment.reps")? {
        cfg.reps = r;
    }
    if let Some(s) = e.get("experiment.seed")? {
        cfg.master_seed = s;
    }
    if let Some((v, line)) = e.raw("experiment.tally") {
        cfg.tally = Some(parse_tally(v).ok_or_else(|| {
            Error::config(
                Some(line),
                "experiment.tally",
                format!("cannot parse `{v}` (births_at_most(k), terminal_state(s))"),
            )
        })?);
    }
    cfg.abs_tol = e.float("experiment.abs_tol")?;
    if let Some(z) = e.float("experiment.z_limit")? {
        cfg.z_limit = z;
    }
    if let Some(z) = e.float("experiment.z_floor")? {
        cfg.z_floor = z;
    }
    let warnings = check(&cfg).map_err(|err| match err {
        Error::InvalidModel(issues) => model_error(&e, &issues),
        Error::Config {
            line: None,
            key,
            message,
        } => Error::Config {
            line: e.line(&key),
            key,
            message,
        },
        other => other,
    })?;
    Ok((cfg, warnings))
}

/// Validates a config built in code, mapping model problems to config keys.
pub fn check(cfg: &ExperimentConfig) -> Result<Vec<Issue>> {
    cfg.validate().map_err(|err| match err {
        Error::InvalidModel(issues) => model_error(&Entries::default(), &issues),
        other => other,
    })
}

pub fn parse_config(path: &std::path::Path) -> Result<(ExperimentConfig, Vec<Issue>)> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Writes every setting explicitly; parsing the result gives back `cfg`.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let spec = &cfg.spec;
    let _ = writeln!(s, "[experiment]");
    let _ = writeln!(s, "kind = {}", cfg.kind.name());
    let _ = writeln!(s, "reps = {}", cfg.reps);
    let _ = writeln!(s, "seed = {}", cfg.master_seed);
    let _ = writeln!(s, "grid = {}", join(&cfg.grid));
    let _ = writeln!(s, "functional = {}", functional_name(&cfg.functional));
    match &cfg.functional {
        AdditiveFunctional::One => {}
        AdditiveFunctional::BirthRateIndicator { target, epsilon }
        | AdditiveFunctional::TerminalSpeedIndicator { speed: target, epsilon } => {
            let _ = writeln!(s, "target = {target}");
            let _ = writeln!(s, "epsilon = {epsilon}");
        }
        AdditiveFunctional::OccupationAverage { h, g } => {
            let _ = writeln!(s, "h = {}", join(h));
            let _ = writeln!(s, "g = {}", g_to_string(g));
        }
    }
    if let Some(t) = &cfg.tally {
        let _ = writeln!(s, "tally = {}", tally_to_string(t));
    }
    if let Some(a) = cfg.abs_tol {
        let _ = writeln!(s, "abs_tol = {a}");
    }
    let _ = writeln!(s, "z_limit = {}", cfg.z_limit);
    let _ = writeln!(s, "z_floor = {}", cfg.z_floor);

    let _ = writeln!(s, "\n[model]");
    match spec.motion {
        MotionModel::None => {
            let _ = writeln!(s, "motion = none");
        }
        MotionModel::TwoStateChain { q01, q10 } => {
            let _ = writeln!(s, "motion = two_state_chain\nq01 = {q01}\nq10 = {q10}");
        }
        MotionModel::BrownianMotion { sigma, step } => {
            let _ = writeln!(s, "motion = brownian\nsigma = {sigma}\nstep = {step}");
        }
    }
    match spec.initial {
        StatePoint::Unit => {}
        StatePoint::Chain(i) => {
            let _ = writeln!(s, "x0 = {i}");
        }
        StatePoint::Real(x) => {
            let _ = writeln!(s, "x0 = {x}");
        }
    }
    match &spec.rate {
        RateFunction::Constant(beta) => {
            let _ = writeln!(s, "beta = {beta}");
        }
        RateFunction::StateDependent(table) => {
            let _ = writeln!(s, "rate_table = {}", join(table));
        }
    }
    let _ = writeln!(s, "offspring = {}", offspring_to_string(&spec.offspring));
    match spec.zeta {
        SpineWeightSpec::One => {
            let _ = writeln!(s, "zeta = one");
        }
        SpineWeightSpec::Girsanov { lambda } => {
            let _ = writeln!(s, "zeta = girsanov\nlambda = {lambda}");
        }
    }

    let _ = writeln!(s, "\n[caps]");
    let _ = writeln!(s, "max_particles = {}", cfg.caps.max_particles);
    let _ = writeln!(s, "horizon = {}", cfg.caps.horizon);
    s
}
