//! `depthcomp`: depth completion from the command line.
//!
//! Every subcommand prints its effective configuration as one line on
//! stderr before doing any work. Exit codes: 1 usage, 2 file or format
//! error, 3 numeric contract violation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use depthcomp::eval::{density_sweep, metrics_valid, save_sweep_csv, LossConfig, SweepConfig};
use depthcomp::gradcheck::{check_loss_gradient, check_scale_gradients, LOSS_STEP, SCALE_FIT_STEP};
use depthcomp::io::{read_grid, read_points_csv, write_grid, write_pgm_preview, write_points_csv};
use depthcomp::patterns::{subsample_lidar_lines, Pattern, PatternSpec};
use depthcomp::pipeline::{complete, CompletionResult, DepthPredictor, PipelineConfig, PredictorKind};
use depthcomp::pyramid::build_pyramid;
use depthcomp::synthetic::{generate, lidar_lines_from_gt};
use depthcomp::{CameraIntrinsics, DepthGrid, ErrorClass, GridView, IntensityImage, SparseDepthGrid};

use crate::config::{describe_scene, parse_scene_spec, InitName, PredictorName, SweepFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] depthcomp::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Format => 2,
                ErrorClass::Numeric => 3,
            },
            CliError::Usage(_) => 1,
            CliError::Format(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "depthcomp", version, about = "Sparse-to-dense depth completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Complete a sparse depth map guided by an intensity image.
    Complete(CompleteArgs),
    /// Sample sparse hints from dense ground truth.
    SamplePattern(SamplePatternArgs),
    /// Write the pooled 1/2, 1/4 and 1/8 hint grids.
    Pyramid(PyramidArgs),
    /// Print `rmse,mae,rel,n` of a prediction against ground truth.
    Evaluate(EvaluateArgs),
    /// Run a density sweep described by a TOML file.
    Sweep(SweepArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Check the analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, clap::Args)]
struct CompleteArgs {
    /// Intensity image (DGRID, values in [0, 1]).
    #[arg(long)]
    image: PathBuf,
    /// Sparse hints: DGRID, or CSV `x,y,depth_m` when the name ends in `.csv`.
    #[arg(long)]
    sparse: PathBuf,
    #[arg(long, value_enum)]
    predictor: PredictorName,
    /// Ground truth for the oracle predictor.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    oracle_a: f64,
    #[arg(long, default_value_t = 0.0)]
    oracle_b: f64,
    #[arg(long, default_value_t = 0.0)]
    oracle_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = PipelineConfig::default().propagation.steps)]
    steps: usize,
    #[arg(long, default_value_t = PipelineConfig::default().neighbors)]
    neighbors: usize,
    #[arg(long, default_value_t = PipelineConfig::default().propagation.max_reach)]
    max_reach: f64,
    #[arg(long, value_enum, default_value_t = InitName::Predictor)]
    full_res_init: InitName,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-scale maps and fitted scales.
    #[arg(long)]
    dump_intermediates: Option<PathBuf>,
    /// Also write `<out>.pgm`.
    #[arg(long)]
    preview: bool,
}

#[derive(Debug, clap::Args)]
struct SamplePatternArgs {
    #[arg(long)]
    gt: PathBuf,
    /// e.g. `random_k:k=500,seed=7`, `shifted_grid:spacing=22`,
    /// `livox:petals=8`, `lidar_lines:total=64,kept=16`.
    #[arg(long)]
    pattern: String,
    /// DGRID, or CSV when the name ends in `.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    preview: bool,
}

#[derive(Debug, clap::Args)]
struct PyramidArgs {
    #[arg(long)]
    sparse: PathBuf,
    /// Writes `<prefix>_1.dgrid`, `_2`, `_4` and `_8`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    preview: bool,
}

#[derive(Debug, clap::Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    /// e.g. `planes:width=304,height=228,min=1,max=10,seed=3`.
    #[arg(long)]
    spec: String,
    /// Writes `<prefix>_depth.dgrid` and `<prefix>_image.dgrid`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    preview: bool,
}

#[derive(Debug, clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step for every suite; defaults to a per-suite step.
    #[arg(long)]
    step: Option<f64>,
}

fn print_config(line: String) {
    eprintln!("config: {line}");
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_depth(path: &Path) -> CliResult<DepthGrid> {
    Ok(DepthGrid::from_raster(read_grid(path)?)?)
}

fn read_sparse(path: &Path, width: usize, height: usize) -> CliResult<SparseDepthGrid> {
    if is_csv(path) {
        Ok(read_points_csv(path, width, height)?)
    } else {
        Ok(SparseDepthGrid::from_raster(read_grid(path)?)?)
    }
}

fn write_sparse(grid: &SparseDepthGrid, path: &Path, preview: bool) -> CliResult<()> {
    if is_csv(path) {
        write_points_csv(grid, path)?;
    } else {
        write_grid(grid, path)?;
    }
    if preview {
        write_pgm_preview(grid, with_suffix(path, ".pgm"))?;
    }
    Ok(())
}

fn write_dense(grid: &impl GridView, path: &Path, preview: bool) -> CliResult<()> {
    write_grid(grid, path)?;
    if preview {
        write_pgm_preview(grid, with_suffix(path, ".pgm"))?;
    }
    Ok(())
}

fn dump_intermediates(result: &CompletionResult, hints: usize, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| depthcomp::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut table = String::from("denominator,beta,alpha,support\n");
    for stage in &result.stages {
        let d = stage.denominator;
        write_grid(&stage.prediction, dir.join(format!("scale_{d}_prediction.dgrid")))?;
        write_grid(&stage.scaled, dir.join(format!("scale_{d}_scaled.dgrid")))?;
        write_grid(&stage.depth, dir.join(format!("scale_{d}_depth.dgrid")))?;
        write_grid(&stage.confidence, dir.join(format!("scale_{d}_confidence.dgrid")))?;
        table.push_str(&format!(
            "{d},{},{},{}\n",
            stage.scale.beta, stage.scale.alpha, stage.support_count
        ));
    }
    write_grid(&result.full_scaled, dir.join("scale_1_scaled.dgrid"))?;
    write_grid(&result.confidence, dir.join("scale_1_confidence.dgrid"))?;
    table.push_str(&format!(
        "1,{},{},{hints}\n",
        result.full_scale.beta, result.full_scale.alpha
    ));
    let path = dir.join("scales.csv");
    fs::write(&path, table).map_err(|e| depthcomp::Error::Io { path, source: e })?;
    Ok(())
}

fn run_complete(args: CompleteArgs) -> CliResult<()> {
    let config = PipelineConfig {
        neighbors: args.neighbors,
        full_res_init: args.full_res_init.into(),
        propagation: depthcomp::propagation::PropagationConfig {
            steps: args.steps,
            max_reach: args.max_reach,
            ..Default::default()
        },
        field: None,
    };
    let kind = match args.predictor {
        PredictorName::Intensity => PredictorKind::Intensity,
        PredictorName::Oracle => PredictorKind::Oracle {
            a: args.oracle_a,
            b: args.oracle_b,
            sigma: args.oracle_sigma,
            seed: args.seed,
        },
    };
    if kind != PredictorKind::Intensity && args.gt.is_none() {
        return Err(CliError::Usage("--predictor oracle needs --gt".into()));
    }
    let image = IntensityImage::from_raster(read_grid(&args.image)?)?;
    let (w, h) = image.shape();
    let sparse = read_sparse(&args.sparse, w, h)?;
    let gt = args.gt.as_deref().map(read_depth).transpose()?;
    let predictor: Box<dyn DepthPredictor> = kind.build(gt.as_ref())?;
    print_config(format!(
        "complete image={} sparse={} points={} predictor={} {} out={} dump_intermediates={} preview={}",
        args.image.display(),
        args.sparse.display(),
        sparse.valid_count(),
        predictor.describe(),
        config.describe(),
        args.out.display(),
        args.dump_intermediates
            .as_ref()
            .map_or("none".into(), |d| d.display().to_string()),
        args.preview,
    ));
    let result = complete(&image, &sparse, predictor.as_ref(), &config)?;
    write_dense(&result.depth, &args.out, args.preview)?;
    if let Some(dir) = &args.dump_intermediates {
        dump_intermediates(&result, sparse.valid_count(), dir)?;
    }
    Ok(())
}

fn run_sample_pattern(args: SamplePatternArgs) -> CliResult<()> {
    let spec: PatternSpec = args.pattern.parse()?;
    print_config(format!(
        "sample-pattern gt={} pattern={spec} out={} preview={}",
        args.gt.display(),
        args.out.display(),
        args.preview
    ));
    let gt = read_depth(&args.gt)?;
    let sparse = match spec.pattern {
        Pattern::LidarLines {
            total_lines,
            kept_lines,
        } => {
            let intrinsics = CameraIntrinsics::nominal(gt.width(), gt.height());
            let scan = lidar_lines_from_gt(&gt, total_lines, &intrinsics)?;
            subsample_lidar_lines(&scan, &intrinsics, total_lines, kept_lines, spec.seed)?
        }
        _ => depthcomp::patterns::sample_pattern(&gt, &spec)?,
    };
    write_sparse(&sparse, &args.out, args.preview)?;
    eprintln!("points: {}", sparse.valid_count());
    Ok(())
}

fn run_pyramid(args: PyramidArgs) -> CliResult<()> {
    print_config(format!(
        "pyramid sparse={} out_prefix={} preview={}",
        args.sparse.display(),
        args.out_prefix.display(),
        args.preview
    ));
    let sparse = SparseDepthGrid::from_raster(read_grid(&args.sparse)?)?;
    let pyramid = build_pyramid(&sparse)?;
    for (level, grid) in pyramid.levels().iter().enumerate() {
        let path = with_suffix(&args.out_prefix, &format!("_{}.dgrid", 1 << level));
        write_sparse(grid, &path, args.preview)?;
        println!(
            "1/{} {}x{} points={} density={}",
            1 << level,
            grid.width(),
            grid.height(),
            grid.valid_count(),
            grid.density()
        );
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> CliResult<()> {
    print_config(format!(
        "evaluate pred={} gt={} mask=gt>0",
        args.pred.display(),
        args.gt.display()
    ));
    let pred = read_depth(&args.pred)?;
    let gt = read_depth(&args.gt)?;
    let report = metrics_valid(&pred, &gt)?;
    println!("{},{},{},{}", report.rmse, report.mae, report.rel, report.n);
    Ok(())
}

fn describe_sweep(config: &SweepConfig) -> String {
    let scenes: Vec<String> = config.scenes.iter().map(describe_scene).collect();
    let patterns: Vec<String> = config.patterns.iter().map(|p| p.to_string()).collect();
    format!(
        "scenes=[{}] patterns=[{}] predictor={:?} seeds={:?} {}",
        scenes.join(";"),
        patterns.join(";"),
        config.predictor,
        config.seeds,
        config.pipeline.describe()
    )
}

fn run_sweep(args: SweepArgs) -> CliResult<()> {
    let config = SweepFile::load(&args.config)?.to_config()?;
    print_config(format!(
        "sweep config={} out={} {}",
        args.config.display(),
        args.out.display(),
        describe_sweep(&config)
    ));
    let result = density_sweep(&config)?;
    save_sweep_csv(&result.rows, &args.out)?;
    println!("pattern,mean_density,rmse,mae,rel,runs");
    for s in &result.summary {
        println!(
            "{},{:.1},{:.6},{:.6},{:.6},{}",
            s.pattern, s.density, s.rmse, s.mae, s.rel, s.runs
        );
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let spec = parse_scene_spec(&args.spec)?;
    print_config(format!(
        "synth spec={} out_prefix={} preview={}",
        describe_scene(&spec),
        args.out_prefix.display(),
        args.preview
    ));
    let (gt, image) = generate(&spec)?;
    write_dense(&gt, &with_suffix(&args.out_prefix, "_depth.dgrid"), args.preview)?;
    write_dense(&image, &with_suffix(&args.out_prefix, "_image.dgrid"), args.preview)?;
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    if !(args.tolerance > 0.0) || args.step.is_some_and(|s| !(s > 0.0)) || args.instances == 0 {
        return Err(CliError::Usage("tolerance, step and instances must be positive".into()));
    }
    let fit_step = args.step.unwrap_or(SCALE_FIT_STEP);
    let loss_step = args.step.unwrap_or(LOSS_STEP);
    print_config(format!(
        "gradcheck tolerance={} instances={} seed={} fit_step={fit_step} loss_step={loss_step}",
        args.tolerance, args.instances, args.seed
    ));
    let reports = [
        check_scale_gradients(args.instances, args.seed, fit_step)?,
        check_loss_gradient(
            args.instances,
            args.seed.wrapping_add(1),
            loss_step,
            &LossConfig::default(),
        )?,
        check_loss_gradient(
            args.instances,
            args.seed.wrapping_add(2),
            loss_step,
            &LossConfig::kitti(),
        )?,
    ];
    let mut failed = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let status = if r.passes(args.tolerance) { "ok" } else { "FAIL" };
        println!(
            "{} {} instances={} partials={} max_relative_error={:e}",
            status,
            if i == 2 { "loss_confidence_kitti" } else { r.suite },
            r.instances,
            r.partials,
            r.max_relative_error
        );
        if !r.passes(args.tolerance) {
            failed.push(r.suite);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Complete(args) => run_complete(args),
        Command::SamplePattern(args) => run_sample_pattern(args),
        Command::Pyramid(args) => run_pyramid(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Synth(args) => run_synth(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
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
            ExitCode::from(e.exit_code())
        }
    }
}
