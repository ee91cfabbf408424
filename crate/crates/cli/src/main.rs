//! `bwlc`: experiment driver. Every subcommand reads one JSON config
//! (`--config`) and writes its artifacts into the configured output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use bwlc::autodiff::{load_checkpoint, save_checkpoint, GradCheckOptions};
use bwlc::channels::{BandwidthLimitedSpec, ChannelSpec, GaussianChannelSpec};
use bwlc::config::{ExperimentConfig, TrainMode};
use bwlc::evaluation::{evaluate_pipeline, reconstruct, PipelineMetrics, PipelineMode};
use bwlc::experiments::{
    compare_joint_separate, sweep_bandwidth, sweep_beta, sweep_snr, SweepContext,
};
use bwlc::image::save_pgm_grid;
use bwlc::metrics::{format_float, save_metrics, write_trace, MetricsRecord, METRICS_FILE, TRACE_FILE};
use bwlc::mmd::{median_pairwise_distance, mmd_statistic, KernelBandwidth};
use bwlc::models::ModelBundle;
use bwlc::training::{build_bundle, check_gradients, train_on};
use bwlc::{seeded_rng, Error, Result};

const CHECKPOINT_FILE: &str = "model.ckpt";
const CONFIG_FILE: &str = "config.json";
const BEST_FILE: &str = "best_v1.csv";
const SAMPLES_FILE: &str = "samples.pgm";
const EVAL_STREAM: u64 = 0x6576_616c_0000;
/// Images per objective in `gradcheck`.
const GRADCHECK_IMAGES: usize = 4;
const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "bwlc", version, about = "Learned source-channel coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compare every objective's gradients against finite differences.
    Gradcheck(ConfigArg),
    /// Train the configured system and evaluate it on the held-out split.
    Train(ConfigArg),
    /// Evaluate the saved model at every SNR of `eval.snr_grid`.
    Eval(ConfigArg),
    /// Train and evaluate one model per SNR.
    SweepSnr(ConfigArg),
    /// β sweep per SNR for the joint and the separate system.
    CompareJointSeparate(ConfigArg),
    /// Both priors with and without the auxiliary latent, evaluated at every bandwidth.
    SweepBandwidth(ConfigArg),
    /// One model per β of `objective.beta_grid`.
    SweepBeta(ConfigArg),
    /// Reconstruction grid across bandwidths as a PGM image.
    Sample(ConfigArg),
    /// MMD of reconstructions against held-out sources.
    Mmd(ConfigArg),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<String> {
    let (arg, f): (&ConfigArg, fn(&ExperimentConfig, &Path) -> Result<String>) = match &command {
        Command::Gradcheck(a) => (a, gradcheck),
        Command::Train(a) => (a, train),
        Command::Eval(a) => (a, eval),
        Command::SweepSnr(a) => (a, snr_sweep),
        Command::CompareJointSeparate(a) => (a, compare),
        Command::SweepBandwidth(a) => (a, bandwidth_sweep),
        Command::SweepBeta(a) => (a, beta_sweep),
        Command::Sample(a) => (a, sample),
        Command::Mmd(a) => (a, mmd),
    };
    let cfg = ExperimentConfig::load(&arg.config)?;
    let dir = cfg.output.directory.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_json())?;
    f(&cfg, &dir)
}

fn pipeline_mode(cfg: &ExperimentConfig) -> PipelineMode {
    match cfg.objective.mode {
        TrainMode::Separate => PipelineMode::Separate,
        TrainMode::Joint | TrainMode::Alv => PipelineMode::Joint,
    }
}

fn record(cfg: &ExperimentConfig, run_id: &str, bandwidth: Option<usize>, snr: f64, m: &PipelineMetrics, wall: f64) -> MetricsRecord {
    MetricsRecord {
        run_id: run_id.to_string(),
        seed: cfg.training.seed,
        mode: cfg.objective.mode.as_str().to_string(),
        snr,
        bandwidth,
        beta: cfg.objective.beta,
        steps: cfg.training.steps,
        distortion_l2: m.distortion_l2,
        rate_bits: m.rate.to_bits().mean,
        transmission_bits: m.transmission.to_bits().mean,
        mmd: m.mmd,
        wall_seconds: wall,
    }
}

fn elapsed(cfg: &ExperimentConfig, start: Instant) -> f64 {
    if cfg.output.wall_clock {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// Trains the configured system and saves its checkpoint and trace.
fn train_and_save(cfg: &ExperimentConfig, ctx: &SweepContext, dir: &Path) -> Result<ModelBundle<f64>> {
    let outcome = train_on::<f64>(&cfg.train_config(), &ctx.train)?;
    save_checkpoint(&outcome.bundle.store, &dir.join(CHECKPOINT_FILE))?;
    write_trace(&outcome.trace, std::fs::File::create(dir.join(TRACE_FILE))?)?;
    Ok(outcome.bundle)
}

/// The saved model when the output directory holds one, otherwise a freshly
/// trained one. The second value tells which.
fn trained_model(cfg: &ExperimentConfig, ctx: &SweepContext, dir: &Path) -> Result<(ModelBundle<f64>, bool)> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Ok((train_and_save(cfg, ctx, dir)?, false));
    }
    let mut bundle = build_bundle::<f64>(&cfg.train_config(), ctx.train.dim())?;
    let loaded = load_checkpoint::<f64>(&path)?;
    let matches = loaded.len() == bundle.store.len()
        && bundle
            .store
            .iter()
            .all(|(n, t)| loaded.get(n).is_ok_and(|l| l.shape() == t.shape()));
    if !matches {
        return Err(Error::InvalidArgument(format!(
            "{} does not match the configured model; remove it to retrain",
            path.display()
        )));
    }
    bundle.store = loaded;
    Ok((bundle, true))
}

fn gradcheck(cfg: &ExperimentConfig, _dir: &Path) -> Result<String> {
    let data = cfg.dataset.load()?;
    let reports = check_gradients(&cfg.train_config(), &data, GRADCHECK_IMAGES, &GradCheckOptions::default())?;
    let (worst, err) = reports
        .iter()
        .map(|(n, r)| (*n, r.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a });
    let coords: usize = reports.iter().map(|(_, r)| r.coordinates).sum();
    let line = format!(
        "gradcheck: {} objectives, {coords} coordinates, max relative error {} ({worst})",
        reports.len(),
        format_float(err)
    );
    if err < GRADCHECK_TOLERANCE {
        Ok(line)
    } else {
        Err(Error::InvalidArgument(format!("{line} exceeds {GRADCHECK_TOLERANCE:e}")))
    }
}

fn train(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let start = Instant::now();
    let ctx = SweepContext::from_config(cfg)?;
    let bundle = train_and_save(cfg, &ctx, dir)?;
    let channel = cfg.train_config().channel_spec()?;
    let mut rng = seeded_rng(cfg.training.seed ^ EVAL_STREAM);
    let m = evaluate_pipeline(&bundle, &channel, &ctx.eval, pipeline_mode(cfg), &ctx.options, &mut rng)?;
    let row = record(cfg, "train", None, channel.snr().unwrap_or(f64::NAN), &m, elapsed(cfg, start));
    save_metrics(&[row], dir, METRICS_FILE)?;
    Ok(format!(
        "train: {} for {} steps, held-out distortion {}, rate {} bits -> {}",
        cfg.objective.mode.as_str(),
        cfg.training.steps,
        format_float(m.distortion_l2),
        format_float(m.rate.to_bits().mean),
        dir.display()
    ))
}

fn eval(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let start = Instant::now();
    let ctx = SweepContext::from_config(cfg)?;
    let (bundle, loaded) = trained_model(cfg, &ctx, dir)?;
    let mut rng = seeded_rng(cfg.training.seed ^ EVAL_STREAM);
    let mut rows = Vec::new();
    for &snr in &cfg.eval.snr_grid {
        let channel = cfg.channel.with_snr(snr).to_spec(&cfg.model.partition()?)?;
        let m = evaluate_pipeline(&bundle, &channel, &ctx.eval, pipeline_mode(cfg), &ctx.options, &mut rng)?;
        rows.push(record(cfg, &format!("eval-snr{snr:e}"), None, snr, &m, elapsed(cfg, start)));
    }
    save_metrics(&rows, dir, METRICS_FILE)?;
    let best = rows.iter().map(|r| r.distortion_l2).fold(f64::INFINITY, f64::min);
    Ok(format!(
        "eval: {} model at {} SNRs, lowest distortion {}",
        if loaded { "saved" } else { "newly trained" },
        rows.len(),
        format_float(best)
    ))
}

fn snr_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let ctx = SweepContext::from_config(cfg)?;
    let rows = sweep_snr(cfg, &ctx)?;
    save_metrics(&rows, dir, METRICS_FILE)?;
    Ok(format!("sweep-snr: {} runs -> {}", rows.len(), dir.join(METRICS_FILE).display()))
}

fn compare(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let ctx = SweepContext::from_config(cfg)?;
    let report = compare_joint_separate(cfg, &ctx)?;
    save_metrics(&report.rows, dir, METRICS_FILE)?;
    let best: Vec<MetricsRecord> = report.best.iter().filter_map(|b| b.record.clone()).collect();
    save_metrics(&best, dir, BEST_FILE)?;
    let wins: Vec<String> = cfg
        .eval
        .snr_grid
        .iter()
        .map(|&s| {
            let (w, n) = report.joint_wins(s);
            format!("{s}:{w}/{n}")
        })
        .collect();
    Ok(format!(
        "compare-joint-separate: {} runs, joint best at or below separate per SNR {}",
        report.rows.len(),
        wins.join(" ")
    ))
}

fn bandwidth_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let ctx = SweepContext::from_config(cfg)?;
    let report = sweep_bandwidth(cfg, &ctx)?;
    let rows = report.rows();
    save_metrics(&rows, dir, METRICS_FILE)?;
    Ok(format!(
        "sweep-bandwidth: {} curves, {} rows -> {}",
        report.curves.len(),
        rows.len(),
        dir.join(METRICS_FILE).display()
    ))
}

fn beta_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let ctx = SweepContext::from_config(cfg)?;
    let sweeps = sweep_beta(cfg, &ctx)?;
    let rows: Vec<MetricsRecord> = sweeps.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    save_metrics(&rows, dir, METRICS_FILE)?;
    let best: Vec<MetricsRecord> = sweeps.iter().filter_map(|s| s.best.map(|i| s.rows[i].clone())).collect();
    save_metrics(&best, dir, BEST_FILE)?;
    let betas: Vec<String> = best.iter().map(|r| format!("{:e}", r.beta)).collect();
    Ok(format!("sweep-beta: {} runs, best β per repetition {}", rows.len(), betas.join(" ")))
}

/// Grid rows: the first eval images, then their reconstructions at `B = 0..=T`
/// over the bandwidth-limited channel at the configured SNR.
fn sample(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let start = Instant::now();
    let ctx = SweepContext::from_config(cfg)?;
    let (bundle, _) = trained_model(cfg, &ctx, dir)?;
    let partition = cfg.model.partition()?;
    let snr = cfg.channel.snr().unwrap_or(1.0);
    let inner = GaussianChannelSpec::new(snr)?;
    let shown = ctx.eval.head(cfg.eval.sample_images);
    if shown.is_empty() {
        return Err(Error::config("eval.sample_images", "no eval images to show"));
    }
    let x = shown.to_tensor::<f64>();
    let mut grid = vec![shown.iter().map(<[f64]>::to_vec).collect::<Vec<_>>()];
    let mut rows = Vec::new();
    let mut rng = seeded_rng(cfg.training.seed ^ EVAL_STREAM);
    for b in 0..=partition.slots() {
        let ch = ChannelSpec::BandwidthLimited(BandwidthLimitedSpec::point_mass(partition.clone(), inner, b)?);
        let rec = reconstruct(&bundle, &x, Some(&ch), pipeline_mode(cfg), &mut rng)?;
        grid.push(rec.data().chunks_exact(shown.dim()).map(<[f64]>::to_vec).collect());
        let m = evaluate_pipeline(&bundle, &ch, &ctx.eval, pipeline_mode(cfg), &ctx.options, &mut rng)?;
        rows.push(record(cfg, &format!("sample-b{b}"), Some(b), snr, &m, elapsed(cfg, start)));
    }
    let path = dir.join(SAMPLES_FILE);
    save_pgm_grid(&path, &grid, shown.height(), shown.width())?;
    save_metrics(&rows, dir, METRICS_FILE)?;
    Ok(format!(
        "sample: {} images at {} bandwidths -> {}",
        shown.len(),
        partition.slots() + 1,
        path.display()
    ))
}

/// Reconstructions through the configured channel against held-out sources,
/// next to the train-versus-eval statistic of the data itself.
fn mmd(cfg: &ExperimentConfig, dir: &Path) -> Result<String> {
    let start = Instant::now();
    let ctx = SweepContext::from_config(cfg)?;
    let (bundle, _) = trained_model(cfg, &ctx, dir)?;
    let channel = cfg.train_config().channel_spec()?;
    let mut rng = seeded_rng(cfg.training.seed ^ EVAL_STREAM);
    let options = &ctx.options;
    if options.mmd_samples < 2 {
        return Err(Error::config("eval.mmd_samples", "must be at least 2 for this subcommand"));
    }
    let m = evaluate_pipeline(&bundle, &channel, &ctx.eval, pipeline_mode(cfg), options, &mut rng)?;

    let n = options.mmd_samples.min(ctx.eval.len()).min(ctx.train.len());
    let eval: Vec<&[f64]> = ctx.eval.iter().take(n).collect();
    let train: Vec<&[f64]> = ctx.train.iter().take(n).collect();
    let bw = match options.mmd_bandwidth {
        KernelBandwidth::Auto => KernelBandwidth::Fixed(median_pairwise_distance(&eval)),
        fixed => fixed,
    };
    let reference = mmd_statistic(&train, &eval, bw)?;
    let row = record(cfg, "mmd", None, channel.snr().unwrap_or(f64::NAN), &m, elapsed(cfg, start));
    save_metrics(&[row], dir, METRICS_FILE)?;
    Ok(format!(
        "mmd: reconstructions {}, train vs eval reference {}",
        m.mmd.map(format_float).unwrap_or_default(),
        format_float(reference)
    ))
}
