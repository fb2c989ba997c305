use std::path::PathBuf;
use std::process::ExitCode;

use aoi_buffer::experiment::{
    error_curve, error_curve_csv, run_simulate, run_solve, run_sweep, write_atomic,
    ExperimentConfig, ProbabilityGrid,
};
use aoi_buffer::sim::PolicyKind;
use aoi_buffer::source::ArSourceModel;
use aoi_buffer::Error;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "aoi-buffer",
    version,
    about = "Buffer-based timely remote estimation experiments"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    delta_max: Option<u32>,

    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    /// Print the effective configuration, with all defaults filled in, and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimation error against the freshest age.
    ErrorCurve {
        /// Source model file (JSON).
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        buffer: usize,
        /// Older ages held fixed, comma separated (buffer - 1 values).
        #[arg(long, value_delimiter = ',')]
        fixed: Vec<u32>,
    },
    /// Solve the relaxed problem for the optimal multiplier.
    Solve,
    /// Simulate one scheduling policy.
    Simulate {
        /// mgf, maf, rr, rand or never.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Sweep the success probability and buffer size under MGF.
    Sweep {
        #[arg(long, default_value = "0.3:1.0:0.05")]
        p_grid: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        buffers: Vec<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if cli.print_config => ExperimentConfig::two_sensor_example(0.8)?,
        None => {
            return Err(Error::Config(
                "--config <file> is required for this command".into(),
            ))
        }
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(d) = cli.delta_max {
        cfg.delta_max = d;
    }
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.print_config {
        println!("{}", load_config(&cli)?.to_json_pretty());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config("no command given; see --help".into()));
    };
    match command {
        Command::ErrorCurve {
            model,
            buffer,
            fixed,
        } => {
            let model = ArSourceModel::load(model)?;
            let delta_max = cli.delta_max.unwrap_or(30);
            let rows = error_curve(&model, *buffer, delta_max, fixed)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let path = out.join(format!("error_curve_b{buffer}.csv"));
            write_atomic(&path, error_curve_csv(&rows).as_bytes())?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
        }
        Command::Solve => {
            let cfg = load_config(&cli)?;
            let outcome = run_solve(&cfg, &cfg.out_dir)?;
            let r = &outcome.report;
            println!(
                "lambda_star={} budget={} final_usage={} stop={:?} iterations={}",
                r.lambda_star,
                r.budget,
                r.final_usage,
                r.stop,
                r.iterates.len()
            );
        }
        Command::Simulate {
            policy,
            horizon,
            replications,
        } => {
            let policy: PolicyKind = policy.parse()?;
            let mut cfg = load_config(&cli)?;
            if let Some(h) = horizon {
                cfg.horizon = *h;
            }
            if let Some(r) = replications {
                cfg.replications = *r;
            }
            cfg.validate()?;
            let outcome = run_simulate(&cfg, policy, &cfg.out_dir)?;
            let r = &outcome.result;
            println!(
                "{} avg_error={} ± {}",
                r.policy, r.avg_error, r.avg_error_stderr
            );
        }
        Command::Sweep { p_grid, buffers } => {
            let grid: ProbabilityGrid = p_grid.parse().map_err(usage)?;
            let cfg = load_config(&cli)?;
            let (rows, _) = run_sweep(&cfg, &grid, buffers, &cfg.out_dir)?;
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            println!(
                "wrote {} ({} cells, {failed} failed)",
                cfg.out_dir.join("sweep.csv").display(),
                rows.len()
            );
        }
    }
    Ok(())
}

fn usage(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
