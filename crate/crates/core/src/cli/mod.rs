//! Command line harness: config files in, CSV files and verdict lines out.

pub mod config;
mod verify;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub use config::{check, parse_config, parse_config_str, serialize_config};
pub use verify::{verify, CriterionReport, VerifyOptions, CRITERIA};

use crate::error::{Error, Result};
use crate::experiments::{run_experiment, ExperimentConfig, ExperimentOutput, SeriesRow, Status, SummaryRow, Verdict};
use crate::fmt_f64;
use crate::rng::{Purpose, RngHandle};
use crate::sim_p::simulate_tree;

pub const SERIES_HEADER: &str = "rep,t,pop,Z,star,extinct,truncated,f_context";
pub const SUMMARY_HEADER: &str = "t,estimator,mean,se,ci_lo,ci_hi,oracle,z,used_reps,trunc_rate,ext_rate";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    CheckFailed = 1,
    ConfigError = 2,
    IoError = 3,
}

impl Exit {
    pub fn for_error(err: &Error) -> Self {
        match err {
            Error::Config { .. } | Error::InvalidModel(_) => Exit::ConfigError,
            Error::Io(_) => Exit::IoError,
            _ => Exit::CheckFailed,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_series<W: Write>(rows: &[SeriesRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SERIES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.rep,
            fmt_f64(r.t),
            r.pop,
            opt(r.z),
            opt(r.star),
            u8::from(r.extinct),
            u8::from(r.truncated),
            opt(r.f_context)
        )?;
    }
    w.flush()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.t),
            r.estimator,
            opt(r.mean),
            opt(r.se),
            opt(r.ci_lo),
            opt(r.ci_hi),
            opt(r.oracle),
            opt(r.z),
            r.used_reps,
            fmt_f64(r.trunc_rate),
            fmt_f64(r.ext_rate)
        )?;
    }
    w.flush()
}

pub fn verdict_line(v: &Verdict) -> String {
    format!("{} {}: {}", v.status.tag(), v.name, v.detail)
}

/// Writes `config.cfg`, `series.csv` and `summary.csv` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.cfg"), serialize_config(cfg))?;
    write_series(&out.series, BufWriter::new(fs::File::create(dir.join("series.csv"))?))?;
    write_summary(&out.summary, BufWriter::new(fs::File::create(dir.join("summary.csv"))?))?;
    Ok(())
}

/// Runs one experiment, echoing the full config and one line per verdict to `log`.
pub fn run<L: Write>(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    dump_tree: Option<u64>,
    log: &mut L,
) -> Result<ExperimentOutput> {
    for line in serialize_config(cfg).lines() {
        writeln!(log, "# {line}")?;
    }
    let out = run_experiment(cfg)?;
    for w in &out.warnings {
        writeln!(log, "WARN {w}")?;
    }
    write_outputs(cfg, &out, out_dir)?;
    if let Some(rep) = dump_tree {
        let tree = simulate_tree(
            &cfg.spec,
            cfg.caps,
            RngHandle::new(cfg.master_seed, rep, Purpose::PTree),
        )?;
        tree.write_dump(BufWriter::new(fs::File::create(
            out_dir.join(format!("tree_{rep}.csv")),
        )?))?;
    }
    for v in &out.verdicts {
        writeln!(log, "{}", verdict_line(v))?;
    }
    Ok(out)
}

/// Exit code for a finished run.
pub fn run_exit(out: &ExperimentOutput) -> Exit {
    if out.verdicts.iter().any(|v| v.status == Status::Fail) {
        Exit::CheckFailed
    } else {
        Exit::Ok
    }
}

pub fn list_models() -> String {
    let mut s = String::from(
        "experiments: birth_rate, occupation, bbm_tilt, mean_one, many_to_one, spine_posterior, death_time
motion:      none | two_state_chain (q01, q10, x0) | brownian (sigma, step, x0)
rate:        beta = <b> | rate_table = <r0>, <r1>   (per chain state)
offspring:   deterministic(k) | deterministic2 | two_point(p0) | geometric(p) | poisson(mu) | table(p0, p1, ...)
zeta:        one | girsanov (lambda)
functional:  one | birth_rate (target, epsilon) | occupation (h, g) | terminal_speed (target, epsilon)
g:           identity | square | window(lo, hi)
tally:       births_at_most(k) | terminal_state(s)
caps:        max_particles, horizon

verify configs:
",
    );
    for c in CRITERIA {
        for run in c.runs {
            s.push_str(&format!("  {:<28} criterion {}: {}\n", run.dir, c.number, c.title));
        }
    }
    s
}
