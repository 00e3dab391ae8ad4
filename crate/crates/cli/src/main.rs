use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rfac_cli::{emit_plots, exit, run, validate_config, CliError, Kind};

/// Random-field double-well energy lab.
#[derive(Parser)]
#[command(name = "rfac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check a config file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment suite.
    Run {
        /// sanity, lemmas, scaling, fluctuation, uniqueness or clt; defaults
        /// to the config's `kind`.
        #[arg(long)]
        kind: Option<Kind>,
        #[arg(long)]
        config: PathBuf,
        /// Replaces `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write plotting scripts for a finished run.
    Plots {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = validate_config(&config)?;
            println!(
                "{}: valid (dim {}, θ {:?}, n {:?}, {} reps)",
                config.display(),
                cfg.dim,
                cfg.thetas,
                cfg.ns,
                cfg.reps
            );
            Ok(exit::PASS)
        }
        Command::Run {
            kind,
            config,
            seed,
            workers,
        } => {
            let mut cfg = validate_config(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            let kind = kind.or(cfg.kind).ok_or_else(|| {
                CliError::Config("no experiment kind: pass --kind or set `kind`".into())
            })?;
            let manifest = run(&cfg, kind, workers)?;
            let dir = cfg.resolved_output_dir().join(kind.name());
            for v in &manifest.verdicts {
                println!("{}", v.line());
            }
            let s = manifest.summary;
            println!(
                "hard: {} passed, {} failed; advisory: {} passed, {} failed",
                s.hard_pass, s.hard_fail, s.advisory_pass, s.advisory_fail
            );
            println!("manifest: {}", dir.join(rfac_cli::manifest::MANIFEST_FILE).display());
            Ok(if manifest.passed() {
                exit::PASS
            } else {
                exit::INVARIANT_FAILURE
            })
        }
        Command::Plots { manifest } => {
            for p in emit_plots(&manifest)? {
                println!("{}", p.display());
            }
            Ok(exit::PASS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::PASS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("rfac: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
