//! Command-line surface: train, eval, color-transfer and benchmark runs
//! driven by TOML configs or built-in presets.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use w2gn::checkpoint::{self, Checkpoint, CheckpointError};
use w2gn::config::{
    load_benchmark_config, load_config, BenchmarkConfig, ConfigError, DataSource,
    ExperimentConfig, Method, SummaryReport, SUMMARY_FORMAT_VERSION,
};
use w2gn::data::{
    export_palette_scatter, export_scatter, load_palette, save_palette, BatchSource, DataError,
    PaletteSampler, PixelPalette, Sampler, ToyDistribution,
};
use w2gn::icnn::{DenseIcnn, DenseIcnnSpec, IcnnError};
use w2gn::metrics::{corr_reference, energy_distance, monotonicity_violation_rate};
use w2gn::train::{
    self, cycle_reg_x, cycle_reg_y, train_minimax_baseline, train_single_discriminator,
    train_w2gn_with, IterRecord, RunReport, TrainConfig, TrainError, TrainState,
};

#[derive(Parser)]
#[command(name = "w2gn", about = "Wasserstein-2 generative networks", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    #[value(name = "toy-8gauss")]
    Toy8Gauss,
    #[value(name = "toy-25gauss")]
    Toy25Gauss,
    #[value(name = "toy-100gauss")]
    Toy100Gauss,
    #[value(name = "swiss-roll")]
    SwissRoll,
    #[value(name = "color-c5")]
    ColorC5,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a generative map between two distributions.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config out_dir or ./w2gn-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnostics for a saved checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a pixel-palette map between two images and apply it both ways.
    ColorTransfer {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several methods on one problem and emit a merged comparison table.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_CONFIG }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Io { .. } => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::Config(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError { message: e.to_string(), code: EXIT_DATA }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config(_) => EXIT_CONFIG,
            TrainError::Icnn(IcnnError::InvalidSpec(_)) => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<IcnnError> for CliError {
    fn from(e: IcnnError) -> Self {
        let code = match &e {
            IcnnError::InvalidSpec(_) => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { message: e.to_string(), code: EXIT_DATA }
    }
}

fn verbose() -> bool {
    !matches!(std::env::var("W2GN_LOG").as_deref(), Ok("quiet") | Ok("off"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train { config, preset, seed, out } => cmd_train(config, preset, seed, out),
        Cmd::Eval { checkpoint, config, preset, seed, out } => {
            cmd_eval(checkpoint, config, preset, seed, out)
        }
        Cmd::ColorTransfer { source, target, config, seed, out } => {
            cmd_color_transfer(source, target, config, seed, out)
        }
        Cmd::Benchmark { config, preset, seed, out } => cmd_benchmark(config, preset, seed, out),
    }
}

// --- presets -----------------------------------------------------------

fn toy_spec() -> DenseIcnnSpec {
    DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![128, 128, 64], beta: 1e-6, celu_alpha: 1.0 }
}

fn toy_train(iters: usize) -> TrainConfig {
    TrainConfig {
        spec: toy_spec(),
        lambda_y: 1.0,
        lambda_x: 1.0,
        lr: 1e-3,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        batch_size: 256,
        iters,
        l1_penalty: 1e-10,
        stop_gradient: true,
        smoothing_sigma: 0.0,
        seed: 0,
        pretrain_iters: 1000,
        pretrain_lr: 1e-2,
    }
}

fn preset_experiment(p: Preset) -> Result<ExperimentConfig, CliError> {
    let (target, iters) = match p {
        Preset::Toy8Gauss => {
            (ToyDistribution::GaussianRing { k: 8, radius: 4.0, sigma: None }, 8000)
        }
        Preset::Toy25Gauss => {
            (ToyDistribution::GaussianGrid { k: 5, spacing: 2.0, sigma: None }, 8000)
        }
        Preset::Toy100Gauss => {
            (ToyDistribution::GaussianGrid { k: 10, spacing: 2.0, sigma: None }, 12000)
        }
        Preset::SwissRoll => (ToyDistribution::SwissRoll { noise_sigma: 0.02 }, 4000),
        Preset::ColorC5 => {
            return Err(CliError::config(
                "the color-c5 preset only applies to the color-transfer subcommand",
            ))
        }
    };
    Ok(ExperimentConfig {
        method: Method::W2gn,
        source: DataSource::Toy(ToyDistribution::StandardGaussian { dim: 2 }),
        target: DataSource::Toy(target),
        train: toy_train(iters),
        out_dir: None,
        log_interval: 100,
        checkpoint_interval: 0,
    })
}

/// The color-transfer defaults (network [3;128;128,64], lambda 3, 1024-pixel
/// batches, 5000 iterations, 1e-10 L1).
fn color_train_defaults() -> TrainConfig {
    TrainConfig {
        spec: DenseIcnnSpec {
            input_dim: 3,
            rank: 3,
            widths: vec![128, 128, 64],
            beta: 1e-6,
            celu_alpha: 1.0,
        },
        lambda_y: 3.0,
        lambda_x: 3.0,
        lr: 1e-3,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        batch_size: 1024,
        iters: 5000,
        l1_penalty: 1e-10,
        stop_gradient: true,
        smoothing_sigma: 0.0,
        seed: 0,
        pretrain_iters: 1000,
        pretrain_lr: 1e-2,
    }
}

// --- shared plumbing ---------------------------------------------------

fn resolve_experiment(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => load_config(&path)?,
        (None, Some(p)) => preset_experiment(p)?,
        (None, None) => return Err(CliError::config("pass --config or --preset")),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let out_dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("w2gn-out"));
    cfg.out_dir = Some(out_dir.clone());
    cfg.validate()?;
    Ok((cfg, out_dir))
}

fn make_source(src: &DataSource, seed: u64) -> Result<Box<dyn BatchSource>, CliError> {
    match src {
        DataSource::Toy(dist) => Ok(Box::new(Sampler::new(dist.clone(), seed)?)),
        DataSource::Palette { palette } => {
            Ok(Box::new(PaletteSampler::new(load_palette(palette)?, seed)))
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text)?;
    Ok(())
}

fn jsonl_line(file: &mut std::fs::File, rec: &IterRecord) {
    let line = serde_json::to_string(rec).expect("serializable");
    let _ = writeln!(file, "{line}");
}

fn push_map(net: &DenseIcnn, palette: &PixelPalette) -> Result<PixelPalette, CliError> {
    let mapped = net.push(&palette.pixels.view())?.mapv(|v| v.clamp(0.0, 1.0));
    Ok(PixelPalette { pixels: mapped, width: palette.width, height: palette.height })
}

fn summary_from(
    cfg: &ExperimentConfig,
    report: &RunReport,
) -> SummaryReport {
    let last = report.records.last();
    let tail: Vec<f64> = report
        .records
        .iter()
        .rev()
        .take(5)
        .map(|r| r.corr_hat)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let reference = match (cfg.source.gaussian_spec(), cfg.target.gaussian_spec()) {
        (Some(p), Some(q)) if cfg.method == Method::W2gn => corr_reference(&p, &q).ok(),
        _ => None,
    };
    SummaryReport {
        format_version: SUMMARY_FORMAT_VERSION,
        config: cfg.clone(),
        pretrain_mse: report.pretrain_mse,
        final_ed_forward: last.map_or(f64::NAN, |r| r.ed_forward),
        final_ed_inverse: last.map_or(f64::NAN, |r| r.ed_inverse),
        final_r_y: last.map_or(f64::NAN, |r| r.r_y),
        final_r_x: last.map_or(f64::NAN, |r| r.r_x),
        corr_hat_tail: tail,
        corr_reference: reference,
        eps_hat: reference.map(|c| report.final_corr_hat - c),
        wall_total_ms: report.wall_total_ms,
        iters_per_sec: report.iters_per_sec,
    }
}

fn export_2d_scatters(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    theta: &DenseIcnn,
    omega: &DenseIcnn,
) -> Result<(), CliError> {
    if cfg.source.dim() != 2 {
        return Ok(());
    }
    let n = 2048;
    let mut p = make_source(&cfg.source, cfg.train.seed.wrapping_add(11))?;
    let mut q = make_source(&cfg.target, cfg.train.seed.wrapping_add(12))?;
    let x = p.sample(n);
    let y = q.sample(n);
    let pushed = theta.push(&x.view())?;
    let inverse = omega.push(&y.view())?;
    export_scatter(&x.view(), &out_dir.join("source.csv"))?;
    export_scatter(&y.view(), &out_dir.join("target.csv"))?;
    export_scatter(&pushed.view(), &out_dir.join("pushed.csv"))?;
    export_scatter(&inverse.view(), &out_dir.join("inverse.csv"))?;
    Ok(())
}

// --- train -------------------------------------------------------------

fn cmd_train(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, out_dir) = resolve_experiment(config, preset, seed, out)?;
    std::fs::create_dir_all(&out_dir)?;
    if let Some(w) = cfg.train.lambda_beta_warning() {
        if verbose() && cfg.method == Method::W2gn {
            eprintln!("warning: {w}");
        }
    }
    let mut p = make_source(&cfg.source, cfg.train.seed.wrapping_add(1))?;
    let mut q = make_source(&cfg.target, cfg.train.seed.wrapping_add(2))?;
    let mut log = std::fs::File::create(out_dir.join("log.jsonl"))?;

    let (theta, omega, iteration, report) = match cfg.method {
        Method::W2gn => {
            let ckpt_every = cfg.checkpoint_interval;
            let out_for_ckpt = out_dir.clone();
            let (state, report) = train_w2gn_with(
                &cfg.train,
                &mut p,
                &mut q,
                cfg.log_interval,
                |state: &TrainState, rec: &IterRecord| {
                    jsonl_line(&mut log, rec);
                    if verbose() {
                        eprintln!(
                            "iter {:>6}  loss {:+.4e}  R_Y {:.3e}  ED fwd {:.4}",
                            rec.iteration, rec.loss, rec.r_y, rec.ed_forward
                        );
                    }
                    if ckpt_every > 0 && (rec.iteration as usize) % ckpt_every == 0 {
                        let snap = Checkpoint {
                            theta: state.theta.clone(),
                            omega: state.omega.clone(),
                            iteration: rec.iteration,
                        };
                        let path = out_for_ckpt.join(format!("ckpt-{:06}.ckpt", rec.iteration));
                        if let Err(e) = checkpoint::save(&snap, &path) {
                            eprintln!("warning: checkpoint write failed: {e}");
                        }
                    }
                },
            )?;
            (state.theta, state.omega, state.iteration, report)
        }
        Method::Minimax => {
            let (state, report) =
                train_minimax_baseline(&cfg.train, &mut p, &mut q, cfg.log_interval)?;
            for rec in &report.records {
                jsonl_line(&mut log, rec);
            }
            (state.theta, state.omega, state.iteration, report)
        }
        Method::SingleDisc => {
            let (net, report) =
                train_single_discriminator(&cfg.train, &mut p, &mut q, cfg.log_interval)?;
            for rec in &report.records {
                jsonl_line(&mut log, rec);
            }
            let omega = net.clone();
            (net, omega, cfg.train.iters as u64, report)
        }
    };

    checkpoint::save(
        &Checkpoint { theta: theta.clone(), omega: omega.clone(), iteration },
        &out_dir.join("checkpoint.ckpt"),
    )?;
    write_json(&out_dir.join("summary.json"), &summary_from(&cfg, &report))?;
    export_2d_scatters(&out_dir, &cfg, &theta, &omega)?;
    if verbose() {
        eprintln!("done: {} iterations, artifacts in {}", iteration, out_dir.display());
    }
    Ok(())
}

// --- eval --------------------------------------------------------------

#[derive(serde::Serialize)]
struct EvalReport {
    iteration: u64,
    convexity_theta: f64,
    convexity_omega: f64,
    monotonicity_violation_rate: f64,
    r_y: f64,
    r_x: f64,
    ed_forward: f64,
    ed_inverse: f64,
    corr_hat: f64,
    corr_reference: Option<f64>,
    eps_hat: Option<f64>,
}

fn cmd_eval(
    ckpt_path: PathBuf,
    config: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&ckpt_path)?;
    let dim = ckpt.theta.spec().input_dim;
    let (cfg, lambda) = match (config, preset) {
        (None, None) => {
            let dist = DataSource::Toy(ToyDistribution::StandardGaussian { dim });
            (
                ExperimentConfig {
                    method: Method::W2gn,
                    source: dist.clone(),
                    target: dist,
                    train: toy_train(1),
                    out_dir: None,
                    log_interval: 100,
                    checkpoint_interval: 0,
                },
                1.0,
            )
        }
        (config, preset) => {
            let mut cfg = match config {
                Some(path) => load_config(&path)?,
                None => preset_experiment(preset.expect("checked"))?,
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if cfg.source.dim() != dim {
                return Err(CliError::config(format!(
                    "checkpoint input dimension {dim} does not match the config's {}",
                    cfg.source.dim()
                )));
            }
            let lambda = cfg.train.lambda_y;
            (cfg, lambda)
        }
    };

    let eval_seed = seed.unwrap_or(cfg.train.seed);
    let mut p = make_source(&cfg.source, eval_seed.wrapping_add(21))?;
    let mut q = make_source(&cfg.target, eval_seed.wrapping_add(22))?;
    let x = p.sample(512);
    let y = q.sample(512);

    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed.wrapping_add(23));
    let convexity_theta = ckpt.theta.convexity_check(10_000, &mut rng);
    let convexity_omega = ckpt.omega.convexity_check(10_000, &mut rng);
    let theta = &ckpt.theta;
    let mono = monotonicity_violation_rate(
        |b: &ArrayView2<f64>| theta.push(b).expect("finite map"),
        &x.view(),
        10_000,
        &mut rng,
    );
    let r_y = cycle_reg_y(&ckpt.theta, &ckpt.omega, &y.view())?;
    let r_x = cycle_reg_x(&ckpt.theta, &ckpt.omega, &x.view())?;
    let fwd = ckpt.theta.push(&x.view())?;
    let inv = ckpt.omega.push(&y.view())?;
    let ed_forward = energy_distance(&fwd.view(), &y.view()).map_err(TrainError::from)?;
    let ed_inverse = energy_distance(&inv.view(), &x.view()).map_err(TrainError::from)?;
    let (tx, ty) = train::corr_terms(&ckpt.theta, &ckpt.omega, &x.view(), &y.view())?;
    let corr_hat = tx + ty + 0.5 * lambda * r_y;
    let reference = match (cfg.source.gaussian_spec(), cfg.target.gaussian_spec()) {
        (Some(ps), Some(qs)) => corr_reference(&ps, &qs).ok(),
        _ => None,
    };

    let report = EvalReport {
        iteration: ckpt.iteration,
        convexity_theta,
        convexity_omega,
        monotonicity_violation_rate: mono,
        r_y,
        r_x,
        ed_forward,
        ed_inverse,
        corr_hat,
        corr_reference: reference,
        eps_hat: reference.map(|c| corr_hat - c),
    };
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    println!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("eval.json"), text)?;
    }
    Ok(())
}

// --- color transfer ----------------------------------------------------

fn cmd_color_transfer(
    source: PathBuf,
    target: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut train_cfg = match config {
        Some(path) => {
            let cfg = load_config(&path)?;
            if cfg.train.spec.input_dim != 3 {
                return Err(CliError::config("color transfer needs a 3-input network"));
            }
            cfg.train
        }
        None => color_train_defaults(),
    };
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from("w2gn-color-out"));
    std::fs::create_dir_all(&out_dir)?;

    let src_palette = load_palette(&source)?;
    let tgt_palette = load_palette(&target)?;
    let mut p = PaletteSampler::new(src_palette.clone(), train_cfg.seed.wrapping_add(1));
    let mut q = PaletteSampler::new(tgt_palette.clone(), train_cfg.seed.wrapping_add(2));

    let mut log = std::fs::File::create(out_dir.join("log.jsonl"))?;
    let (state, report) = train_w2gn_with(
        &train_cfg,
        &mut p,
        &mut q,
        100,
        |_: &TrainState, rec: &IterRecord| {
            jsonl_line(&mut log, rec);
            if verbose() {
                eprintln!(
                    "iter {:>6}  loss {:+.4e}  R_Y {:.3e}  ED fwd {:.4}",
                    rec.iteration, rec.loss, rec.r_y, rec.ed_forward
                );
            }
        },
    )?;

    let transferred = push_map(&state.theta, &src_palette)?;
    let inverse = push_map(&state.omega, &tgt_palette)?;
    save_palette(&transferred, &out_dir.join("transferred.png"))?;
    save_palette(&inverse, &out_dir.join("inverse-transferred.png"))?;

    let scatter_seed = train_cfg.seed.wrapping_add(3);
    export_palette_scatter(&src_palette, 3000, scatter_seed, &out_dir.join("source-palette.csv"))?;
    export_palette_scatter(&tgt_palette, 3000, scatter_seed, &out_dir.join("target-palette.csv"))?;
    export_palette_scatter(
        &transferred,
        3000,
        scatter_seed,
        &out_dir.join("transferred-palette.csv"),
    )?;
    export_palette_scatter(&inverse, 3000, scatter_seed, &out_dir.join("inverse-palette.csv"))?;

    let cfg_echo = ExperimentConfig {
        method: Method::W2gn,
        source: DataSource::Palette { palette: source },
        target: DataSource::Palette { palette: target },
        train: train_cfg,
        out_dir: Some(out_dir.clone()),
        log_interval: 100,
        checkpoint_interval: 0,
    };
    checkpoint::save(
        &Checkpoint {
            theta: state.theta.clone(),
            omega: state.omega.clone(),
            iteration: state.iteration,
        },
        &out_dir.join("checkpoint.ckpt"),
    )?;
    write_json(&out_dir.join("summary.json"), &summary_from(&cfg_echo, &report))?;
    if verbose() {
        eprintln!("done: artifacts in {}", out_dir.display());
    }
    Ok(())
}

// --- benchmark ---------------------------------------------------------

fn preset_benchmark(p: Preset) -> Result<BenchmarkConfig, CliError> {
    let exp = preset_experiment(p)?;
    Ok(BenchmarkConfig {
        methods: vec![Method::W2gn, Method::Minimax],
        source: exp.source,
        target: exp.target,
        train: exp.train,
        out_dir: None,
        log_interval: exp.log_interval,
    })
}

#[derive(serde::Serialize)]
struct BenchmarkEntry {
    method: String,
    iterations: u64,
    iters_per_sec: f64,
    wall_total_ms: f64,
    final_ed_forward: f64,
}

fn cmd_benchmark(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => load_benchmark_config(&path)?,
        (None, Some(p)) => preset_benchmark(p)?,
        (None, None) => return Err(CliError::config("pass --config or --preset")),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let out_dir = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("w2gn-benchmark-out"));
    std::fs::create_dir_all(&out_dir)?;

    let mut merged = String::from("method,iteration,wall_ms,ed_forward\n");
    let mut entries = Vec::new();
    for &method in &cfg.methods {
        let exp = cfg.experiment_for(method);
        let mut p = make_source(&exp.source, exp.train.seed.wrapping_add(1))?;
        let mut q = make_source(&exp.target, exp.train.seed.wrapping_add(2))?;
        if verbose() {
            eprintln!("benchmark: running {method}");
        }
        let report = match method {
            Method::W2gn => {
                train_w2gn_with(&exp.train, &mut p, &mut q, exp.log_interval, |_, _| {})?.1
            }
            Method::Minimax => {
                train_minimax_baseline(&exp.train, &mut p, &mut q, exp.log_interval)?.1
            }
            Method::SingleDisc => {
                train_single_discriminator(&exp.train, &mut p, &mut q, exp.log_interval)?.1
            }
        };
        let mut log = std::fs::File::create(out_dir.join(format!("log-{method}.jsonl")))?;
        for rec in &report.records {
            jsonl_line(&mut log, rec);
            merged.push_str(&format!(
                "{method},{},{},{}\n",
                rec.iteration, rec.wall_ms, rec.ed_forward
            ));
        }
        let last = report.records.last();
        entries.push(BenchmarkEntry {
            method: method.to_string(),
            iterations: exp.train.iters as u64,
            iters_per_sec: report.iters_per_sec,
            wall_total_ms: report.wall_total_ms,
            final_ed_forward: last.map_or(f64::NAN, |r| r.ed_forward),
        });
    }
    std::fs::write(out_dir.join("benchmark.csv"), merged)?;
    write_json(&out_dir.join("benchmark-summary.json"), &entries)?;
    if verbose() {
        for e in &entries {
            eprintln!(
                "{:>12}: {:.1} iters/s, final ED {:.4}",
                e.method, e.iters_per_sec, e.final_ed_forward
            );
        }
        if entries.len() == 2 && entries[1].iters_per_sec > 0.0 {
            eprintln!(
                "iteration-rate ratio {:.2}x",
                entries[0].iters_per_sec / entries[1].iters_per_sec
            );
        }
    }
    Ok(())
}
