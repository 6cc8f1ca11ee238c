use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spinelaw::cli::{self, Exit, VerifyOptions};
use spinelaw::experiments::Status;
use spinelaw::Error;

#[derive(Parser)]
#[command(
    name = "spinelaw",
    version,
    about = "Spine decompositions of branching processes: simulation and checks"
)]
struct Args {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "SPINELAW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u64>,
        /// Also write the original-measure tree of this replication.
        #[arg(long, value_name = "REP")]
        dump_tree: Option<u64>,
    },
    /// Run the built-in acceptance suite.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only these criteria (repeatable).
        #[arg(long)]
        only: Vec<u8>,
    },
    /// Describe the supported models and the built-in configs.
    ListModels,
}

fn fail(err: &Error) -> Exit {
    eprintln!("error: {err}");
    Exit::for_error(err)
}

fn run_command(command: Command) -> Exit {
    match command {
        Command::Run {
            config,
            out,
            seed,
            reps,
            dump_tree,
        } => {
            let (mut cfg, _) = match cli::parse_config(&config) {
                Ok(parsed) => parsed,
                Err(e) => return fail(&e),
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Err(e) = cli::check(&cfg) {
                return fail(&e);
            }
            match cli::run(&cfg, &out, dump_tree, &mut std::io::stdout().lock()) {
                Ok(output) => cli::run_exit(&output),
                Err(e) => fail(&e),
            }
        }
        Command::Verify { out, only } => {
            let opts = VerifyOptions {
                out,
                only: (!only.is_empty()).then_some(only),
                ..VerifyOptions::default()
            };
            match cli::verify(&opts, &mut |line| println!("{line}")) {
                Ok(reports) if reports.iter().any(|r| r.status == Status::Fail) => Exit::CheckFailed,
                Ok(_) => Exit::Ok,
                Err(e) => fail(&e),
            }
        }
        Command::ListModels => {
            print!("{}", cli::list_models());
            Exit::Ok
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(Exit::ConfigError as u8);
        }
    };
    let exit = pool.install(|| run_command(args.command));
    ExitCode::from(exit as u8)
}
