//! Benchmark driver for the adaptive H²-matrix multiplication.

use std::fs::OpenOptions;
use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use h2mult::bench::{run_experiment, CoarsenTarget, ExperimentConfig, RunReport};
use h2mult::model::KernelProblem;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Problem {
    SlpSphere,
    DlpCube,
    Log1d,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Coarsen {
    InputTree,
    ProductTree,
}

#[derive(Parser, Debug)]
#[command(name = "h2bench", about = "Multiply model H²-matrices and report errors and timings")]
struct Args {
    #[arg(long, value_enum, default_value = "slp-sphere")]
    problem: Problem,
    /// Problem sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2048")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    /// Interpolation points per axis.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Defaults to 2·order² on surfaces and 2·order on the interval.
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Power iteration steps for the error estimates.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, value_enum, default_value = "input-tree")]
    coarsen: Coarsen,
    /// Append CSV rows to this file (header written if the file is new).
    #[arg(long)]
    csv: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    max_rank: Option<usize>,
    /// Recompress the interpolated input to this accuracy (0 disables).
    #[arg(long, default_value_t = 0.0)]
    input_tol: f64,
    /// Zero tolerance (exact product).
    #[arg(long)]
    exact: bool,
    /// Compare with the dense product (small n only).
    #[arg(long)]
    dense_check: bool,
}

fn main() -> ExitCode {
    env_logger::init();
    let args = Args::parse();
    if args.eps < 0.0 {
        eprintln!("error: --eps must be non-negative");
        return ExitCode::from(2);
    }
    let mut csv_file = match &args.csv {
        Some(path) => {
            let fresh = !path.exists();
            match OpenOptions::new().create(true).append(true).open(path) {
                Ok(mut f) => {
                    if fresh && writeln!(f, "{}", RunReport::CSV_HEADER).is_err() {
                        eprintln!("error: cannot write {}", path.display());
                        return ExitCode::FAILURE;
                    }
                    Some(f)
                }
                Err(e) => {
                    eprintln!("error: cannot open {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
        }
        None => None,
    };
    println!("{}", RunReport::CSV_HEADER);
    for &n in &args.n {
        let problem = match args.problem {
            Problem::SlpSphere => KernelProblem::slp_sphere(n, args.order),
            Problem::DlpCube => KernelProblem::dlp_cube(n, args.order),
            Problem::Log1d => KernelProblem::log_1d(n, args.order),
        };
        let mut cfg = ExperimentConfig::new(problem, if args.exact { 0.0 } else { args.eps });
        cfg.eta = args.eta;
        cfg.leaf_size = args.leaf_size;
        cfg.steps = args.steps;
        cfg.seed = args.seed;
        cfg.max_rank = args.max_rank;
        cfg.input_tol = (args.input_tol > 0.0).then_some(args.input_tol);
        cfg.dense_check = args.dense_check;
        cfg.coarsen = match args.coarsen {
            Coarsen::InputTree => CoarsenTarget::InputTree,
            Coarsen::ProductTree => CoarsenTarget::ProductTree,
        };
        match run_experiment(&cfg) {
            Ok(report) => {
                let row = report.csv_row();
                println!("{row}");
                if let Some(f) = csv_file.as_mut() {
                    if writeln!(f, "{row}").is_err() {
                        eprintln!("error: cannot append to the CSV file");
                        return ExitCode::FAILURE;
                    }
                }
                log::info!("n={n}: total {:.3}s", report.t_total());
            }
            Err(e) => {
                eprintln!("error: n={n}: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    ExitCode::SUCCESS
}
