//! The frozen acceptance suite behind `spinelaw verify`.

use std::fs;
use std::path::PathBuf;

use statrs::distribution::{Discrete, Poisson};

use super::{config::parse_config_str, verdict_line, write_outputs, write_series, write_summary};
use crate::error::Result;
use crate::experiments::{run_experiment, ExperimentConfig, ExperimentOutput, Status, Verdict};
use crate::model::{size_bias, OffspringLaw};

pub struct Run {
    pub dir: &'static str,
    pub text: &'static str,
}

pub struct Criterion {
    pub number: u8,
    pub title: &'static str,
    pub runs: &'static [Run],
}

macro_rules! run {
    ($name:literal) => {
        Run {
            dir: $name,
            text: include_str!(concat!("../../configs/verify/", $name, ".cfg")),
        }
    };
}

pub const CRITERIA: &[Criterion] = &[
    Criterion {
        number: 1,
        title: "mean-one martingale",
        runs: &[run!("c1_mean_one")],
    },
    Criterion {
        number: 2,
        title: "death-time law",
        runs: &[run!("c2_death_time")],
    },
    Criterion {
        number: 3,
        title: "size-biasing exactness",
        runs: &[],
    },
    Criterion {
        number: 4,
        title: "many-to-one against the Poisson oracle",
        runs: &[run!("c4_many_to_one")],
    },
    Criterion {
        number: 5,
        title: "spine-posterior identity",
        runs: &[run!("c5a_posterior_births"), run!("c5b_posterior_chain")],
    },
    Criterion {
        number: 6,
        title: "birth-rate trend",
        runs: &[run!("c6_birth_rate")],
    },
    Criterion {
        number: 7,
        title: "occupation limit",
        runs: &[run!("c7a_occupation_identity"), run!("c7b_occupation_square")],
    },
    Criterion {
        number: 8,
        title: "Girsanov regimes",
        runs: &[run!("c8a_girsanov_subcritical"), run!("c8b_girsanov_supercritical")],
    },
    Criterion {
        number: 9,
        title: "determinism across thread counts",
        runs: &[],
    },
];

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub out: Option<PathBuf>,
    /// Replaces every config's z-limit; a tiny value is a negative control.
    pub z_limit: Option<f64>,
    /// Restricts the suite to these criteria.
    pub only: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub number: u8,
    pub title: &'static str,
    pub status: Status,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<(&'static str, ExperimentOutput)>,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!("criterion {} {}: {}", self.number, self.title, self.status.tag())
    }
}

fn overall(verdicts: &[Verdict]) -> Status {
    if verdicts.iter().any(|v| v.status == Status::Fail) {
        Status::Fail
    } else if verdicts.iter().any(|v| v.status == Status::Pass) {
        Status::Pass
    } else {
        Status::Skip
    }
}

fn config(run: &Run, opts: &VerifyOptions) -> ExperimentConfig {
    let (mut cfg, _) = parse_config_str(run.text).unwrap_or_else(|e| panic!("embedded config {}: {e}", run.dir));
    if let Some(z) = opts.z_limit {
        cfg.z_limit = z;
    }
    cfg
}

fn csv_bytes(out: &ExperimentOutput) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_series(&out.series, &mut bytes).expect("in-memory write");
    write_summary(&out.summary, &mut bytes).expect("in-memory write");
    bytes
}

fn check(name: String, ok: bool, detail: String) -> Verdict {
    Verdict {
        name,
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn size_bias_verdicts() -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    let sb = size_bias(&OffspringLaw::two_point(0.5))?;
    let err = (0..=sb.max_count())
        .map(|k| (sb.prob(k) - f64::from(u8::from(k == 2))).abs())
        .fold(0.0, f64::max);
    out.push(check(
        "size_bias(two_point(1/2)) = delta_2".to_string(),
        err <= f64::EPSILON,
        format!("max |diff| = {err:e}"),
    ));
    for mu in [0.5, 1.5, 4.0] {
        let sb = size_bias(&OffspringLaw::poisson(mu))?;
        let pois = Poisson::new(mu).expect("positive mean");
        let err = (0..=200u64)
            .map(|k| (sb.prob(k as usize) - k as f64 * pois.pmf(k) / mu).abs())
            .fold(0.0, f64::max);
        out.push(check(
            format!("size_bias(poisson({mu})) = k pmf(k)/m"),
            err <= 1e-12,
            format!("max |diff| over k<=200 = {err:e}"),
        ));
    }
    Ok(out)
}

fn criterion_extras(number: u8, outputs: &[(&'static str, ExperimentOutput)]) -> Vec<Verdict> {
    match number {
        1 => outputs[0]
            .1
            .rows("Z")
            .map(|r| {
                let se = r.se.unwrap_or(f64::INFINITY);
                check(format!("Z t={} se <= 0.01", r.t), se <= 0.01, format!("se={se:.6}"))
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Reruns the first criterion's configs in a pool of a different size and compares CSV bytes.
fn determinism_verdicts(opts: &VerifyOptions, reference: &[(&'static str, ExperimentOutput)]) -> Result<Vec<Verdict>> {
    let threads = rayon::current_num_threads() + 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    let mut out = Vec::new();
    for (run, (dir, first)) in CRITERIA[0].runs.iter().zip(reference) {
        let again = pool.install(|| run_experiment(&config(run, opts)))?;
        out.push(check(
            format!("{dir} rerun with {threads} threads"),
            csv_bytes(first) == csv_bytes(&again),
            "series.csv and summary.csv bytes compared".to_string(),
        ));
    }
    Ok(out)
}

/// Runs the suite, printing each verdict and criterion line through `log`.
pub fn verify(opts: &VerifyOptions, log: &mut dyn FnMut(&str)) -> Result<Vec<CriterionReport>> {
    let mut reports: Vec<CriterionReport> = Vec::new();
    for c in CRITERIA {
        if opts.only.as_ref().is_some_and(|only| !only.contains(&c.number)) {
            continue;
        }
        let mut verdicts = Vec::new();
        let mut outputs = Vec::new();
        for run in c.runs {
            let cfg = config(run, opts);
            let out = run_experiment(&cfg)?;
            if let Some(root) = &opts.out {
                write_outputs(&cfg, &out, &root.join(run.dir))?;
            }
            verdicts.extend(out.verdicts.iter().map(|v| Verdict {
                name: format!("{}: {}", run.dir, v.name),
                ..v.clone()
            }));
            outputs.push((run.dir, out));
        }
        verdicts.extend(criterion_extras(c.number, &outputs));
        match c.number {
            3 => verdicts.extend(size_bias_verdicts()?),
            9 => {
                let reference = match reports.iter().find(|r| r.number == 1) {
                    Some(r) => r.outputs.clone(),
                    None => CRITERIA[0]
                        .runs
                        .iter()
                        .map(|run| Ok((run.dir, run_experiment(&config(run, opts))?)))
                        .collect::<Result<_>>()?,
                };
                verdicts.extend(determinism_verdicts(opts, &reference)?);
            }
            _ => {}
        }
        for v in &verdicts {
            log(&format!("  {}", verdict_line(v)));
        }
        let report = CriterionReport {
            number: c.number,
            title: c.title,
            status: overall(&verdicts),
            verdicts,
            outputs,
        };
        log(&report.line());
        reports.push(report);
    }
    if let Some(root) = &opts.out {
        let text: String = reports.iter().map(|r| format!("{}\n", r.line())).collect();
        fs::write(root.join("verify.txt"), text)?;
    }
    Ok(reports)
}
