use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use setkernel_cli::{run, CliError, Command, Experiment, Outcome, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "setkernel",
    version,
    about = "Set-kernel factorization and Gaussian field experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Overrides `mc.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `mc.n_samples`.
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Report path (JSON lines). Defaults to `<out-dir>/<command>.jsonl`, or
    /// stdout when no output directory is set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Default output directory.
    #[arg(long, global = true, env = "SETKERNEL_OUT_DIR")]
    out_dir: Option<PathBuf>,

    /// Tolerance override, NAME=VALUE. Repeatable.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    tolerances: Vec<String>,

    /// Worker threads for Monte Carlo. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Add `runtime_ms` to check records.
    #[arg(long, global = true)]
    timings: bool,

    /// Also write a CSV table of checks and Monte Carlo records.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,

    /// Factorization export path (factorize only). Defaults to
    /// `<out-dir>/factorization.json`, or `factorization.json`.
    #[arg(long, global = true)]
    export: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Positivity, Schwarz, absolute continuity and chain checks.
    Validate,
    /// Realize the kernel in L²(ν) and verify the factorization.
    Factorize,
    /// Green function of the configured chain.
    MarkovGreen,
    /// Monte Carlo Ito isometry, cross moments and refinement sweeps.
    Simulate,
    /// Projection second moments along the partition chain.
    RefineSweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Factorize => Command::Factorize,
            Cmd::MarkovGreen => Command::MarkovGreen,
            Cmd::Simulate => Command::Simulate,
            Cmd::RefineSweep => Command::RefineSweep,
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let command = Command::from(cli.command);
    let mut exp = Experiment::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        exp.mc.seed = seed;
    }
    if let Some(n) = cli.samples {
        exp.mc.n_samples = n;
    }
    for spec in &cli.tolerances {
        exp.tolerances.apply_override(spec)?;
    }
    let opts = RunOptions {
        timings: cli.timings,
    };
    let outcome = match cli.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?
            .install(|| run(command, &exp, opts))?,
        None => run(command, &exp, opts)?,
    };

    let report = outcome.report.to_jsonl();
    let out = cli.out.clone().or_else(|| {
        cli.out_dir
            .as_ref()
            .map(|d| d.join(format!("{}.jsonl", command.name())))
    });
    match out {
        Some(path) => write(&path, &report)?,
        None => print!("{report}"),
    }
    if let Some(path) = &cli.csv {
        write(path, &outcome.report.to_csv())?;
    }
    if let Some(export) = &outcome.export {
        let path = cli.export.clone().unwrap_or_else(|| {
            cli.out_dir
                .as_ref()
                .map(|d| d.join("factorization.json"))
                .unwrap_or_else(|| PathBuf::from("factorization.json"))
        });
        let json = serde_json::to_string_pretty(export).expect("export serializes");
        write(&path, &(json + "\n"))?;
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            let failures = outcome.report.failures();
            let total = outcome.report.checks().count() + outcome.report.mc().count();
            eprintln!(
                "{}: {total} records checked, {failures} failed",
                cli.command_name()
            );
            if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

impl Cli {
    fn command_name(&self) -> &'static str {
        Command::from(self.command).name()
    }
}
