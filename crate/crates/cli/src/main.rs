mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridsa::analyze::{load_chain, verify_chain};
use serde_json::json;

use config::{ExperimentConfig, SystemSpec, PRESETS, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "hybridsa", version, about = "Asymptotic simulation of hybrid inclusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output root; artifacts go to `<out>/<config output or name>`.
        #[arg(long, env = "HYBRIDSA_OUT", default_value = "runs")]
        out: PathBuf,
        /// Worker threads for the seed fan-out.
        #[arg(long)]
        jobs: Option<usize>,
        /// Replace the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
    },
    /// Check a saved chain against a preset system.
    Verify {
        chain: PathBuf,
        /// Preset as `name` or `name:key=value,...`, e.g. `cubic_reset:c=2`.
        #[arg(long)]
        system: String,
        /// Tolerance for the solution check.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// List the built-in systems.
    ListPresets,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(dispatch(cli.command))
}

fn dispatch(cmd: Command) -> u8 {
    match cmd {
        Command::ListPresets => {
            for (name, about) in PRESETS {
                println!("{name:<12} {about}");
            }
            0
        }
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return 1;
                }
            };
            if let Some(seeds) = seed_override {
                cfg.seeds = seeds;
                if let Err(e) = cfg.validate() {
                    eprintln!("config error: {e}");
                    return 1;
                }
            }
            match run::run(&cfg, &run::RunOptions { out_root: out, jobs }) {
                Ok((dir, code)) => {
                    println!("{}", dir.display());
                    code as u8
                }
                Err(e) => {
                    eprintln!("runtime error: {e:#}");
                    2
                }
            }
        }
        Command::Verify { chain, system, tol } => {
            let spec = match SystemSpec::parse_cli(&system) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("bad --system: {e}");
                    return 1;
                }
            };
            let built = match spec.build() {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("bad --system: {e}");
                    return 1;
                }
            };
            let (c, internal) = match load_chain(&chain) {
                Ok(x) => x,
                Err(e) => {
                    eprintln!("cannot read chain {}: {e}", chain.display());
                    return 1;
                }
            };
            let verdict = verify_chain(&c, &built.system, internal, tol);
            let out = json!({
                "schema_version": SCHEMA_VERSION,
                "system": built.system.name,
                "valid": verdict.valid,
                "internal": verdict.internal,
                "failures": verdict.failures,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json values serialize"));
            if verdict.valid {
                0
            } else {
                3
            }
        }
    }
}
