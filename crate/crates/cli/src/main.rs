//! `mandelbench`: render images, run benchmark series, analyze sample files.

mod analyze;
mod bench;
mod host;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mandelbench::backends::BackendKind;
use mandelbench::fractal::{GridDims, Precision, Window};
use mandelbench::harness::Profile;

#[derive(Debug, Parser)]
#[command(name = "mandelbench", version, about = "Escape-time benchmark suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render one window to a grayscale PPM and print the grid checksum.
    Render(RenderArgs),
    /// Run a benchmark series for every configuration of a run matrix.
    Bench(BenchArgs),
    /// Summarize sample files into tables, CSV and SVG charts.
    Analyze(AnalyzeArgs),
}

/// Custom rectangle, used instead of the built-in windows.
#[derive(Debug, Args)]
struct RectArgs {
    /// Corners x1,y1,x2,y2 (upper left, lower right).
    #[arg(
        long,
        value_name = "X1,Y1,X2,Y2",
        requires = "max_iter",
        allow_hyphen_values = true
    )]
    rect: Option<String>,
    /// Iteration budget for --rect.
    #[arg(long, value_name = "N", requires = "rect")]
    max_iter: Option<u32>,
}

impl RectArgs {
    fn window(&self) -> anyhow::Result<Option<Window>> {
        let (Some(rect), Some(max_iter)) = (&self.rect, self.max_iter) else {
            return Ok(None);
        };
        let v: Vec<f64> = rect
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow::anyhow!("--rect `{rect}`: {e}"))?;
        let [x1, y1, x2, y2] = v[..] else {
            anyhow::bail!("--rect `{rect}`: expected four comma-separated numbers");
        };
        Ok(Some(Window::new(x1, y1, x2, y2, max_iter)?))
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Built-in window 1, 2 or 3.
    #[arg(long, default_value_t = 1, conflicts_with = "rect")]
    window: usize,
    #[command(flatten)]
    rect: RectArgs,
    #[arg(long, default_value = "400x268")]
    dims: GridDims,
    #[arg(long, default_value = "single")]
    precision: Precision,
    /// scalar, threaded:N, vector:L[,threads:N] or device:W
    #[arg(long, default_value = "scalar")]
    backend: BackendKind,
    /// Native compute library for device backends; default is the built-in
    /// virtual device.
    #[arg(long, value_name = "PATH")]
    lib: Option<String>,
    #[arg(long, default_value = "mandel.ppm")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Comma-separated built-in windows.
    #[arg(long, default_value = "1,2,3", conflicts_with = "rect")]
    windows: String,
    #[command(flatten)]
    rect: RectArgs,
    /// Comma-separated backends; `vector:L,threads:N` counts as one.
    #[arg(long, alias = "backend", default_value = "scalar")]
    backends: String,
    /// Comma-separated precisions.
    #[arg(long, alias = "precision", default_value = "single")]
    precisions: String,
    /// Overrides the profile's grid size.
    #[arg(long)]
    dims: Option<GridDims>,
    /// Overrides the profile's repetition count.
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_name = "PATH")]
    lib: Option<String>,
    /// Directory for sample files.
    #[arg(long, default_value = "samples")]
    out: PathBuf,
    /// Test hook: delay every virtual kernel launch.
    #[arg(long, hide = true, value_name = "MS")]
    launch_delay_ms: Option<u64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Sample files, or directories holding them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for the report files.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => render::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Analyze(a) => analyze::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
