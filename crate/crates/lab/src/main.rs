use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hjlab::{emit, run, ExperimentConfig, Instance, LabError, Mode, Study};

/// Runs one study and writes its CSV / JSON artifacts.
///
/// Exit status: 0 when every criterion passes, 1 when one fails, 2 on error.
#[derive(Parser, Debug)]
#[command(name = "hjlab", version)]
struct Cli {
    #[command(subcommand)]
    study: Verb,
    /// TOML config merged over the study defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Disorder averaging mode (overrides `averaging.mode`).
    #[arg(long, global = true, value_enum)]
    mode: Option<CliMode>,
    /// Monte Carlo disorder samples per N (overrides `averaging.budget`).
    #[arg(long, global = true)]
    budget: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Verb {
    Identities,
    Convergence,
    Concentration,
    Mmse,
    ShortTime,
    Variational,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CliMode {
    Quadrature,
    Mc,
}

impl Verb {
    fn study(self) -> Study {
        match self {
            Verb::Identities => Study::Identities,
            Verb::Convergence => Study::Convergence,
            Verb::Concentration => Study::Concentration,
            Verb::Mmse => Study::Mmse,
            Verb::ShortTime => Study::ShortTime,
            Verb::Variational => Study::VariationalGrid,
        }
    }
}

fn config(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let study = cli.study.study();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, Some(study))?,
        None => ExperimentConfig::defaults(study, Instance::reference()),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.mode.is_some() || cli.budget.is_some() {
        let av = cfg.averaging.as_mut().ok_or_else(|| {
            LabError::Config(format!("study `{}` takes no averaging options", study.name()))
        })?;
        if let Some(mode) = cli.mode {
            av.mode = match mode {
                CliMode::Quadrature => Mode::Quadrature,
                CliMode::Mc => Mode::Mc,
            };
        }
        if let Some(budget) = cli.budget {
            av.budget = budget;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = config(&cli).and_then(|cfg| {
        let report = run(&cfg)?;
        let paths = emit(&report, &cfg.output.dir, &cfg.output.formats)?;
        Ok((report, paths))
    });
    match outcome {
        Ok((report, paths)) => {
            println!("{}", report.summary(&paths));
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            println!("{}", serde_json::json!({ "study": cli.study.study().name(), "error": e.to_string() }));
            ExitCode::from(2)
        }
    }
}
