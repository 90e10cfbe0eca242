use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shm_core::io::{self, IoError};
use shm_core::reduction::{self, ReductionError};
use shm_core::train::{projector, QpMode};
use shm_core::{appendix, kernel_matrix, sign_label, KernelSpec, ModelError, TrainConfig, TrainError};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "shm", version, about = "Supporting hyperplane machine trainer and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a labelled dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// linear, poly:DEGREE:OFFSET or rbf:GAMMA
        #[arg(long, default_value = "linear")]
        kernel: KernelSpec,
        /// Box bound on the multipliers; `inf` for a hard margin.
        #[arg(long, default_value_t = f64::INFINITY)]
        c: f64,
        #[arg(long, default_value = "script")]
        qp_mode: QpMode,
        /// Ridge added to XXᵀ; 0 regularizes only when ill-conditioned.
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model; writes `h,label` rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one supporting hyperplane per support vector as CSV.
    Hyperplanes {
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare the SVD-reduced dual against the full dual on random multipliers.
    SvdReport {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "linear")]
        kernel: KernelSpec,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Retrain on the built-in 16-point example and check the published values.
    VerifyAppendix,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Model(m) => Failure::from_model(m, &e),
            _ => Failure::new(EXIT_IO, e),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::InvalidConfig(_) | TrainError::Kernel(_) => EXIT_USAGE,
            TrainError::InvalidTrainingSet(_) => EXIT_IO,
            _ => EXIT_NUMERIC,
        };
        Failure::new(code, e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::from_model(&e, &e)
    }
}

impl From<ReductionError> for Failure {
    fn from(e: ReductionError) -> Self {
        Failure::new(EXIT_NUMERIC, e)
    }
}

impl Failure {
    fn from_model(m: &ModelError, shown: &dyn std::fmt::Display) -> Self {
        let code = match m {
            ModelError::KernelModeUnsupported => EXIT_USAGE,
            ModelError::DimensionMismatch { .. } | ModelError::NonFinite => EXIT_IO,
            ModelError::Inconsistent(_) => EXIT_IO,
            ModelError::ZeroNormVector { .. } => EXIT_NUMERIC,
        };
        Failure::new(code, shown)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(EXIT_IO, e)),
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Train {
            data,
            kernel,
            c,
            qp_mode,
            ridge,
            out,
        } => {
            let ts = io::load_dataset(&data)?;
            let cfg = TrainConfig {
                ridge,
                c,
                qp_mode,
                ..TrainConfig::default()
            };
            let model = shm_core::train(&ts, &kernel, &cfg)?;
            io::save_model(&model, &out)?;
            let meta = model.meta();
            eprintln!(
                "trained on {} examples: {} support vectors, Q = {:.6}, b = {:.6}, ridge {:e}",
                ts.len(),
                model.supports().len(),
                meta.objective,
                model.threshold(),
                meta.ridge_used
            );
            Ok(0)
        }
        Command::Predict { model, data, out } => {
            let model = io::load_model(&model)?;
            let cols = io::load_columns(&data)?;
            let mut rows = Vec::with_capacity(cols.x.cols());
            for i in 0..cols.x.cols() {
                let h = model.decide(&cols.x.column(i), &cols.y.column(i))?;
                rows.push((h, sign_label(h)));
            }
            if let Some(labels) = &cols.labels {
                let correct = rows
                    .iter()
                    .zip(labels)
                    .filter(|((_, l), d)| f64::from(*l) == **d)
                    .count();
                eprintln!("{correct}/{} labels reproduced", rows.len());
            }
            write_output(out.as_deref(), &io::predictions_to_csv(&rows))?;
            Ok(0)
        }
        Command::Hyperplanes { model } => {
            let model = io::load_model(&model)?;
            let rows = model.supporting_hyperplanes()?;
            write_output(None, &io::hyperplanes_to_csv(&rows, model.output_dim()))?;
            Ok(0)
        }
        Command::SvdReport {
            data,
            kernel,
            samples,
            seed,
        } => {
            let ts = io::load_dataset(&data)?;
            let gp = projector(ts.x(), 0.0)?;
            let k = kernel_matrix(ts.y(), &kernel);
            let rp = reduction::reduce(&gp, ts.labels(), &k, shm_core::linalg::DEFAULT_RANK_TOL)?;
            let report = reduction::consistency_report(&rp, &gp, ts.labels(), &k, samples, seed)?;
            println!("{report}");
            Ok(0)
        }
        Command::VerifyAppendix => {
            let report = appendix::verify()?;
            println!("{report}");
            Ok(if report.pass() { 0 } else { EXIT_VERIFY })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
