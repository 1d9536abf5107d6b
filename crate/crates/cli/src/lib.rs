//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 failed gradient check.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

pub use settings::{parse_config, KEYS};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    CheckFailed(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::CheckFailed(m) => m,
        }
    }
}

impl From<neurtv::Error> for CliError {
    fn from(e: neurtv::Error) -> Self {
        match e {
            neurtv::Error::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "neurtv", version, about = "Total-variation regularized coordinate networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the recovery commands. Every option except `--config`
/// and `--out` can also be given in the config file as `key = value`.
#[derive(Args, Debug, Clone)]
#[command(allow_negative_numbers = true)]
pub struct TaskArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Trade-off weight of the regularizer.
    #[arg(long)]
    lambda: Option<f64>,
    /// Sparse-noise weight (hsi).
    #[arg(long)]
    gamma: Option<f64>,
    /// Resolution factor of the regularization grid.
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// sine-mlp, pe-mlp or tf-net.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    omega0: Option<f64>,
    /// Comma-separated Tucker ranks.
    #[arg(long)]
    ranks: Option<String>,
    /// Regularizer kind (neurtv, diff-neurtv, second-order, directional,
    /// sstv, space-variant, pointcloud).
    #[arg(long)]
    reg: Option<String>,
    /// Comma-separated penalized dimensions (0-based).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Scale rule of the field: none, first or second.
    #[arg(long)]
    scale_mode: Option<String>,
    #[arg(long)]
    field_stride: Option<usize>,
    #[arg(long)]
    trace_stride: Option<usize>,
    /// Keep outputs unclipped.
    #[arg(long)]
    no_clip: bool,
    /// Wide networks (150 units per layer).
    #[arg(long)]
    full_scale: bool,
    /// Comma-separated seeds; one run per seed and λ.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated λ values for a sweep.
    #[arg(long)]
    lambdas: Option<String>,
    /// Concurrent runs of a sweep (capped by NEURTV_THREADS).
    #[arg(long)]
    jobs: Option<usize>,
}

impl TaskArgs {
    /// Flag values as settings keys, overriding the config file.
    fn overrides(&self) -> settings::Settings {
        let mut s = settings::Settings::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.insert(k.to_owned(), v);
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("factor", self.factor.map(|v| v.to_string()));
        put("iters", self.iters.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("arch", self.arch.clone());
        put("width", self.width.map(|v| v.to_string()));
        put("depth", self.depth.map(|v| v.to_string()));
        put("omega0", self.omega0.map(|v| v.to_string()));
        put("ranks", self.ranks.clone());
        put("reg", self.reg.clone());
        put("dims", self.dims.clone());
        put("kappa", self.kappa.map(|v| v.to_string()));
        put("theta", self.theta.map(|v| v.to_string()));
        put("eps", self.eps.map(|v| v.to_string()));
        put("scale_mode", self.scale_mode.clone());
        put("field_stride", self.field_stride.map(|v| v.to_string()));
        put("trace_stride", self.trace_stride.map(|v| v.to_string()));
        put("clip", self.no_clip.then(|| "false".to_owned()));
        put("full_scale", self.full_scale.then(|| "true".to_owned()));
        put("seeds", self.seeds.clone());
        put("lambdas", self.lambdas.clone());
        put("jobs", self.jobs.map(|v| v.to_string()));
        s
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Denoise an image (PGM/PNG, or CSV with integer coordinates).
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        /// Clean reference image for PSNR/SSIM.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Coordinate count of a CSV input (2 or 3).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Inpaint an image from observed entries (CSV `row,col[,channel],value`).
    Inpaint {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output extents, e.g. `64,64` or `64,64,3`.
        #[arg(long)]
        shape: String,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Mixed-noise removal from a cube (CSV `row,col,band,value` or one
    /// grayscale image per band).
    Hsi {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long = "ref", num_args = 1..)]
        reference: Vec<PathBuf>,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Point-cloud color regression (CSV `x,y,z,C,v`).
    Pointcloud {
        #[arg(long = "in")]
        input: PathBuf,
        /// Query rows `x,y,z,C` or `x,y,z,C,v` (values enable metrics).
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Spatial-transcriptomics reconstruction (CSV `x,y,g,v`).
    Transcriptomics {
        #[arg(long = "in")]
        input: PathBuf,
        /// Query rows `x,y,g` or `x,y,g,v`.
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        task: TaskArgs,
    },
    /// Numerical studies of the one-dimensional total variation.
    Varlab {
        /// truncation, monotone, exact or shift.
        #[arg(long)]
        study: String,
        /// Registered function id.
        #[arg(long = "fn", default_value = "quad")]
        function: String,
        /// Largest partition count of a truncation study (powers of two
        /// from 8).
        #[arg(long, default_value_t = 4096)]
        nmax: usize,
        /// Partition count of the shift study.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Shifted breakpoint index.
        #[arg(long, default_value_t = 1)]
        j: usize,
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        /// CSV output; the summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every gradient path.
    Gradcheck {
        /// Random parameters per architecture and regularizer.
        #[arg(long, default_value_t = 25)]
        samples: usize,
        /// Random points per architecture.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if code == 0 {
                let _ = e.print();
            } else {
                let text = e.to_string();
                eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            }
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let first = e.message().lines().next().unwrap_or("");
            eprintln!("error: {first}");
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Denoise {
            input,
            reference,
            dim,
            task,
        } => commands::denoise(&input, reference.as_deref(), dim, &task),
        Command::Inpaint {
            input,
            shape,
            reference,
            task,
        } => commands::inpaint(&input, &shape, reference.as_deref(), &task),
        Command::Hsi {
            input,
            reference,
            task,
        } => commands::hsi(&input, &reference, &task),
        Command::Pointcloud { input, query, task } => {
            commands::scattered(commands::Scatter::Pointcloud, &input, &query, &task)
        }
        Command::Transcriptomics { input, query, task } => {
            commands::scattered(commands::Scatter::Transcriptomics, &input, &query, &task)
        }
        Command::Varlab {
            study,
            function,
            nmax,
            n,
            j,
            delta,
            out,
        } => commands::varlab(&study, &function, nmax, n, j, delta, out.as_deref()),
        Command::Gradcheck {
            samples,
            points,
            seed,
        } => commands::gradcheck(samples, points, seed),
    }
}
