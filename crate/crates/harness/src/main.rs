use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use samlab_harness::config::{self, TaskKind};
use samlab_harness::plot::{render_svg, series_from, PlotKind};
use samlab_harness::results::Table;
use samlab_harness::{attack_run, sweep, theory_run, train, HarnessError, Result, RunConfig};

/// Sharpness-aware and adversarial training experiments.
///
/// Config keys can be overridden with environment variables: `SAMLAB_` plus
/// the dotted key path in upper case with `__` between sections, e.g.
/// `SAMLAB_OPTIMIZER__RHO=0.1`. Precedence: file < environment < flags.
#[derive(Parser)]
#[command(name = "samlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robust-feature weights on a grid of specs and radii.
    Theory(RunArgs),
    /// Train one model and evaluate it.
    Train(RunArgs),
    /// Attack a saved checkpoint.
    Attack(RunArgs),
    /// Independent training runs over a parameter grid.
    Sweep(RunArgs),
    /// SVG figure from a results CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV to read.
    #[arg(long)]
    input: PathBuf,
    /// Column for the horizontal axis.
    #[arg(long)]
    x: String,
    /// Columns to draw, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    y: Vec<String>,
    /// `line` or `scatter`.
    #[arg(long, default_value = "line")]
    kind: String,
    /// Average rows that share an x value.
    #[arg(long)]
    mean: bool,
    #[arg(long)]
    title: Option<String>,
    /// Output SVG file.
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
}

fn load(args: &RunArgs, task: TaskKind) -> Result<RunConfig> {
    let mut cfg = config::load(&args.config, std::env::vars())?;
    cfg.task = task;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if args.parallel == 0 {
        return Err(HarnessError::Config(vec!["--parallel must be at least 1".into()]));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Theory(a) => {
            let cfg = load(&a, TaskKind::Theory)?;
            let rows = theory_run::execute(&cfg, &cfg.out)?;
            println!("theory: {} rows -> {}", rows.len(), cfg.out.join("theory.csv").display());
        }
        Command::Train(a) => {
            let cfg = load(&a, TaskKind::Train)?;
            let r = train::execute(&cfg, &cfg.out)?;
            print!("train: clean_acc={:.4}", r.clean_accuracy);
            for x in &r.robust_accuracy {
                print!(" {}={:.4}", x.budget.label(), x.accuracy);
            }
            if let Some(w) = r.wr_estimate {
                print!(" wr_estimate={w:.4}");
            }
            println!(" -> {}", cfg.out.display());
        }
        Command::Attack(a) => {
            let cfg = load(&a, TaskKind::Attack)?;
            let r = attack_run::execute(&cfg, &cfg.out)?;
            print!("attack: clean_acc={:.4}", r.clean_accuracy);
            for x in &r.robust_accuracy {
                print!(" {}={:.4}", x.budget.label(), x.accuracy);
            }
            println!(" -> {}", cfg.out.display());
        }
        Command::Sweep(a) => {
            let cfg = load(&a, TaskKind::Sweep)?;
            let rows = sweep::execute(&cfg, a.parallel, &cfg.out)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "sweep: {} runs, {failed} failed -> {}",
                rows.len(),
                cfg.out.join("sweep.csv").display()
            );
        }
        Command::Plot(a) => {
            let kind = PlotKind::parse(&a.kind)
                .ok_or_else(|| HarnessError::Config(vec![format!("--kind must be line or scatter, got `{}`", a.kind)]))?;
            let table = Table::read(&a.input)
                .map_err(|e| HarnessError::Config(vec![format!("{}: {e}", a.input.display())]))?;
            let series = series_from(&table, &a.x, &a.y, a.mean)?;
            let title = a.title.unwrap_or_else(|| format!("{} vs {}", a.y.join(", "), a.x));
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&a.out, render_svg(&series, kind, &a.x, &title))?;
            println!("plot -> {}", a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
