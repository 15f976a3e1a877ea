use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cppd::cli::{self, demo, experiment, CliError, ExperimentConfig, Stage, SweepParam};
use cppd::{io, phantom, Error};

#[derive(Parser)]
#[command(
    name = "cppd",
    version,
    about = "Preconditioned primal-dual CT reconstruction experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one reconstruction and write its outputs.
    Run(ConfigArgs),
    /// Run the experiment for each value of one parameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `rho` or `k`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Toy saddle-point and conjugate demos.
    Demo {
        /// One of fe-s0, fe-s1, be, abe, cppd1d, perfect-pc, lf-oracle.
        name: String,
        #[arg(long, default_value = "demo-out")]
        output: PathBuf,
    },
    /// Write the phantom as raw f64 and PGM, plus its gradient magnitude image.
    Phantom(ConfigArgs),
    /// Compute the leading eigenpairs of X^T X.
    Eig(ConfigArgs),
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let wrap = Stage::Config.wrap();
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))
                .map_err(&wrap)?;
            ExperimentConfig::parse(&text).map_err(&wrap)?
        }
        None => ExperimentConfig::default(),
    };
    for pair in &args.set {
        cfg.apply_override(pair).map_err(&wrap)?;
    }
    cfg.validate().map_err(&wrap)?;
    Ok(cfg)
}

fn warn_all(ws: &[String]) {
    for w in ws {
        eprintln!("warning: {w}");
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let s = cli::run_experiment(&cfg)?;
            warn_all(&s.warnings);
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:e}"));
            println!(
                "iterations {}  image_rmse {}  r_sigma {}  r_tau {}",
                s.record.last().map_or(0, |r| r.iter),
                f(s.final_image_rmse()),
                f(s.final_r_sigma()),
                f(s.final_r_tau())
            );
        }
        Command::Sweep {
            cfg,
            param,
            values,
            workers,
        } => {
            let cfg = load(&cfg)?;
            let param = SweepParam::parse(&param).map_err(Stage::Config.wrap())?;
            let rows = cli::sweep(&cfg, param, &values, workers)?;
            print!("{}", experiment::sweep_csv(&rows));
            for r in &rows {
                if let Err(e) = &r.outcome {
                    eprintln!("warning: value {} failed: {e}", r.value);
                }
            }
        }
        Command::Demo { name, output } => {
            for p in demo::run_demo(&name, &output).map_err(Stage::Config.wrap())? {
                println!("{}", p.display());
            }
        }
        Command::Phantom(args) => {
            let cfg = load(&args)?;
            let grid = cfg.grid().map_err(Stage::Config.wrap())?;
            let p = phantom::generate(&grid, cfg.seed);
            let out = || -> cppd::Result<()> {
                std::fs::create_dir_all(&cfg.output)?;
                io::write_raw(&cfg.output.join("phantom.raw"), &p.image)?;
                io::write_pgm(&cfg.output.join("phantom.pgm"), &grid, &p.image, cfg.window.range())?;
                let g = p.gmi();
                let hi = g.iter().copied().fold(0.0, f64::max);
                io::write_pgm(
                    &cfg.output.join("phantom_gmi.pgm"),
                    &grid,
                    &g,
                    (0.0, hi.max(f64::MIN_POSITIVE)),
                )?;
                Ok(())
            };
            out().map_err(Stage::Output.wrap())?;
            println!("tv {:e}", p.tv_value());
        }
        Command::Eig(args) => {
            let cfg = load(&args)?;
            let e = experiment::eig_command(&cfg)?;
            for v in &e.values {
                println!("{v:e}");
            }
        }
    }
    Ok(())
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
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
