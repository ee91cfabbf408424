//! Sweeps over SNR, β and bandwidth, and the joint-versus-separate comparison.
//!
//! Every training run in a sweep is a job with its own seed
//! `training.seed ^ k`, where `k` is the job's position in the sweep's job
//! list. Jobs run on a rayon pool and their rows are collected in job order,
//! so results do not depend on scheduling.

use std::time::Instant;

use rayon::prelude::*;

use crate::channels::{BandwidthLimitedSpec, ChannelSpec, GaussianChannelSpec};
use crate::config::{ChannelConfig, ExperimentConfig, TrainConfig, TrainMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_pipeline, EvalOptions, PipelineMetrics, PipelineMode};
use crate::metrics::MetricsRecord;
use crate::models::PriorKind;
use crate::seeded_rng;
use crate::training::train_on;

const EVAL_STREAM: u64 = 0x6576_616c_0000;

pub fn seed_for(root: u64, index: usize) -> u64 {
    root ^ index as u64
}

/// Data and evaluation settings shared by every job of a sweep.
#[derive(Clone, Debug)]
pub struct SweepContext {
    pub train: Dataset,
    pub eval: Dataset,
    pub options: EvalOptions,
    /// Upper bound on concurrent jobs; rayon's global pool when `None`.
    pub workers: Option<usize>,
    /// Measure run times; otherwise `wall_seconds` is 0.
    pub wall_clock: bool,
}

impl SweepContext {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, eval) = cfg.dataset.load_split()?;
        Ok(SweepContext {
            train,
            eval,
            options: EvalOptions {
                mmd_samples: cfg.eval.mmd_samples,
                mmd_bandwidth: cfg.eval.mmd_bandwidth,
                max_images: cfg.eval.max_eval_images,
            },
            workers: cfg.eval.workers,
            wall_clock: cfg.output.wall_clock,
        })
    }
}

/// One training run followed by evaluation at each listed channel.
#[derive(Clone, Debug)]
pub struct Job {
    pub run_id: String,
    pub label: String,
    pub config: TrainConfig,
    pub evals: Vec<(Option<usize>, ChannelSpec)>,
}

fn pipeline_mode(mode: TrainMode) -> PipelineMode {
    match mode {
        TrainMode::Separate => PipelineMode::Separate,
        TrainMode::Joint | TrainMode::Alv => PipelineMode::Joint,
    }
}

fn record(job: &Job, bandwidth: Option<usize>, channel: &ChannelSpec, steps: usize, m: &PipelineMetrics, wall: f64) -> MetricsRecord {
    MetricsRecord {
        run_id: job.run_id.clone(),
        seed: job.config.training.seed,
        mode: job.label.clone(),
        snr: channel.snr().unwrap_or(f64::NAN),
        bandwidth,
        beta: job.config.objective.beta,
        steps,
        distortion_l2: m.distortion_l2,
        rate_bits: m.rate.to_bits().mean,
        transmission_bits: m.transmission.to_bits().mean,
        mmd: m.mmd,
        wall_seconds: wall,
    }
}

/// Trains and evaluates one job. A diverged run yields NaN rows whose `steps`
/// is the step at which training stopped.
pub fn run_job(job: &Job, ctx: &SweepContext) -> Result<Vec<MetricsRecord>> {
    let start = Instant::now();
    let wall = |s: Instant| if ctx.wall_clock { s.elapsed().as_secs_f64() } else { 0.0 };
    let outcome = match train_on::<f64>(&job.config, &ctx.train) {
        Ok(o) => o,
        Err(Error::Diverged { step, .. }) => {
            let nan = PipelineMetrics {
                distortion_l2: f64::NAN,
                rate: crate::objectives::McEstimate::from_samples::<f64>(&[]),
                transmission: crate::objectives::McEstimate::from_samples::<f64>(&[]),
                mmd: None,
            };
            let w = wall(start);
            return Ok(job.evals.iter().map(|(b, ch)| record(job, *b, ch, step, &nan, w)).collect());
        }
        Err(e) => return Err(e),
    };
    let mut rng = seeded_rng(job.config.training.seed ^ EVAL_STREAM);
    let mode = pipeline_mode(job.config.objective.mode);
    let mut rows = Vec::with_capacity(job.evals.len());
    for (b, ch) in &job.evals {
        let m = evaluate_pipeline(&outcome.bundle, ch, &ctx.eval, mode, &ctx.options, &mut rng)?;
        rows.push(record(job, *b, ch, job.config.training.steps, &m, wall(start)));
    }
    Ok(rows)
}

/// Runs jobs concurrently and returns their rows in job order.
pub fn run_jobs(jobs: &[Job], ctx: &SweepContext) -> Result<Vec<Vec<MetricsRecord>>> {
    let go = || jobs.par_iter().map(|j| run_job(j, ctx)).collect::<Result<Vec<_>>>();
    match ctx.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Index of the smallest finite distortion; the first one wins ties.
pub fn argmin_distortion(rows: &[MetricsRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.distortion_l2.is_nan() {
            continue;
        }
        if best.is_none_or(|b| r.distortion_l2 < rows[b].distortion_l2) {
            best = Some(i);
        }
    }
    best
}

fn fmt_num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Clone, Debug)]
pub struct BetaSweep {
    pub rows: Vec<MetricsRecord>,
    /// Index into `rows` of the lowest distortion, if any run finished.
    pub best: Option<usize>,
}

fn beta_jobs(base: &TrainConfig, grid: &[f64], prefix: &str, first_index: usize) -> Result<Vec<Job>> {
    let channel = base.channel_spec()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &beta)| {
            let mut config = base.clone();
            config.objective.beta = beta;
            config.training.seed = seed_for(base.training.seed, first_index + i);
            Job {
                run_id: format!("{prefix}-beta{}", fmt_num(beta)),
                label: base.objective.mode.as_str().to_string(),
                config,
                evals: vec![(None, channel.clone())],
            }
        })
        .collect())
}

/// One model per β, each evaluated through the training channel.
pub fn beta_sweep(base: &TrainConfig, grid: &[f64], ctx: &SweepContext) -> Result<BetaSweep> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("beta grid is empty".into()));
    }
    let jobs = beta_jobs(base, grid, "sweep", 0)?;
    let rows: Vec<MetricsRecord> = run_jobs(&jobs, ctx)?.into_iter().flatten().collect();
    let best = argmin_distortion(&rows);
    Ok(BetaSweep { rows, best })
}

/// `beta_sweep` repeated `eval.seeds` times; repetition `r` starts from seed
/// `training.seed ^ (r · |grid|)`.
pub fn sweep_beta(cfg: &ExperimentConfig, ctx: &SweepContext) -> Result<Vec<BetaSweep>> {
    let grid = &cfg.objective.beta_grid;
    let mut jobs = Vec::new();
    for r in 0..cfg.eval.seeds {
        jobs.extend(beta_jobs(&cfg.train_config(), grid, &format!("beta-r{r}"), r * grid.len())?);
    }
    let rows = run_jobs(&jobs, ctx)?;
    Ok(rows
        .chunks(grid.len())
        .map(|c| {
            let rows: Vec<MetricsRecord> = c.iter().flatten().cloned().collect();
            let best = argmin_distortion(&rows);
            BetaSweep { rows, best }
        })
        .collect())
}

/// The configured system trained and evaluated at every SNR of the grid.
pub fn sweep_snr(cfg: &ExperimentConfig, ctx: &SweepContext) -> Result<Vec<MetricsRecord>> {
    let base = cfg.train_config();
    let mut jobs = Vec::new();
    for r in 0..cfg.eval.seeds {
        for &snr in &cfg.eval.snr_grid {
            let mut config = base.clone();
            config.channel = base.channel.with_snr(snr);
            config.training.seed = seed_for(base.training.seed, jobs.len());
            let channel = config.channel_spec()?;
            jobs.push(Job {
                run_id: format!("snr-r{r}-snr{}", fmt_num(snr)),
                label: base.objective.mode.as_str().to_string(),
                config,
                evals: vec![(None, channel)],
            });
        }
    }
    Ok(run_jobs(&jobs, ctx)?.into_iter().flatten().collect())
}

/// Best-β row of one (repetition, SNR, mode) cell.
#[derive(Clone, Debug)]
pub struct BestPoint {
    pub repetition: usize,
    pub snr: f64,
    pub mode: TrainMode,
    pub record: Option<MetricsRecord>,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub rows: Vec<MetricsRecord>,
    pub best: Vec<BestPoint>,
}

impl CompareReport {
    /// Per SNR: repetitions where the joint best distortion is at most the
    /// separate one, and the number of repetitions compared.
    pub fn joint_wins(&self, snr: f64) -> (usize, usize) {
        let cell = |rep: usize, mode: TrainMode| {
            self.best
                .iter()
                .find(|b| b.repetition == rep && b.snr == snr && b.mode == mode)
                .and_then(|b| b.record.as_ref())
                .map(|r| r.distortion_l2)
        };
        let reps = self.best.iter().map(|b| b.repetition).max().map_or(0, |m| m + 1);
        let mut wins = 0;
        let mut total = 0;
        for r in 0..reps {
            if let (Some(j), Some(s)) = (cell(r, TrainMode::Joint), cell(r, TrainMode::Separate)) {
                total += 1;
                if j <= s {
                    wins += 1;
                }
            }
        }
        (wins, total)
    }
}

/// β sweep per SNR per mode (joint and separate), all evaluated on the same
/// held-out split, with the best-β row of every cell.
pub fn compare_joint_separate(cfg: &ExperimentConfig, ctx: &SweepContext) -> Result<CompareReport> {
    let grid = &cfg.objective.beta_grid;
    let mut jobs = Vec::new();
    let mut cells = Vec::new();
    for r in 0..cfg.eval.seeds {
        for &snr in &cfg.eval.snr_grid {
            for mode in [TrainMode::Joint, TrainMode::Separate] {
                let mut base = cfg.train_config();
                base.objective.mode = mode;
                base.model.alv = false;
                base.channel = base.channel.with_snr(snr);
                let prefix = format!("cmp-r{r}-snr{}-{}", fmt_num(snr), mode.as_str());
                jobs.extend(beta_jobs(&base, grid, &prefix, jobs.len())?);
                cells.push((r, snr, mode));
            }
        }
    }
    let results = run_jobs(&jobs, ctx)?;
    let mut rows = Vec::new();
    let mut best = Vec::new();
    for ((repetition, snr, mode), chunk) in cells.into_iter().zip(results.chunks(grid.len())) {
        let cell: Vec<MetricsRecord> = chunk.iter().flatten().cloned().collect();
        best.push(BestPoint {
            repetition,
            snr,
            mode,
            record: argmin_distortion(&cell).map(|i| cell[i].clone()),
        });
        rows.extend(cell);
    }
    Ok(CompareReport { rows, best })
}

/// Prior kind and auxiliary-latent switch of one bandwidth-sweep model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub prior: PriorKind,
    pub alv: bool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { prior: PriorKind::Standard, alv: false },
        Variant { prior: PriorKind::Autoregressive, alv: false },
        Variant { prior: PriorKind::Standard, alv: true },
        Variant { prior: PriorKind::Autoregressive, alv: true },
    ];

    pub fn label(self) -> String {
        let prior = match self.prior {
            PriorKind::Standard => "standard",
            PriorKind::Autoregressive => "autoregressive",
        };
        format!("{}:{prior}", if self.alv { "alv" } else { "joint" })
    }
}

#[derive(Clone, Debug)]
pub struct BandwidthCurve {
    pub repetition: usize,
    pub variant: Variant,
    /// One row per evaluated bandwidth, in grid order.
    pub rows: Vec<MetricsRecord>,
}

#[derive(Clone, Debug)]
pub struct BandwidthReport {
    pub curves: Vec<BandwidthCurve>,
}

impl BandwidthReport {
    pub fn rows(&self) -> Vec<MetricsRecord> {
        self.curves.iter().flat_map(|c| c.rows.iter().cloned()).collect()
    }

    pub fn curve(&self, repetition: usize, variant: Variant) -> Option<&BandwidthCurve> {
        self.curves.iter().find(|c| c.repetition == repetition && c.variant == variant)
    }
}

/// Trains every variant on the bandwidth-limited channel and evaluates each at
/// every bandwidth of the grid. A non-bandwidth channel in the config is
/// replaced by the bandwidth-limited one at SNR 1.
pub fn sweep_bandwidth(cfg: &ExperimentConfig, ctx: &SweepContext) -> Result<BandwidthReport> {
    let train_channel = match &cfg.channel {
        c @ ChannelConfig::BandwidthLimited { .. } => c.clone(),
        _ => ChannelConfig::BandwidthLimited {
            snr: 1.0,
            probs: None,
            marginalization: crate::channels::Marginalization::FullSum,
        },
    };
    let snr = train_channel.snr().expect("bandwidth channel has an SNR");
    let partition = cfg
        .model
        .partition()
        .map_err(|e| Error::config("model.slots", e.to_string()))?;
    let grid: Vec<usize> = match &cfg.eval.bandwidths {
        Some(g) => g.clone(),
        None => (0..=partition.slots()).collect(),
    };
    if grid.is_empty() {
        return Err(Error::config("eval.bandwidths", "must not be empty"));
    }
    let inner = GaussianChannelSpec::new(snr)?;
    let evals = grid
        .iter()
        .map(|&b| {
            BandwidthLimitedSpec::point_mass(partition.clone(), inner, b)
                .map(|s| (Some(b), ChannelSpec::BandwidthLimited(s)))
                .map_err(|e| Error::config("eval.bandwidths", e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    let mut keys = Vec::new();
    for r in 0..cfg.eval.seeds {
        for variant in Variant::ALL {
            let mut config = cfg.train_config();
            config.channel = train_channel.clone();
            config.model.prior = variant.prior;
            config.model.alv = variant.alv;
            config.objective.mode = if variant.alv { TrainMode::Alv } else { TrainMode::Joint };
            config.training.seed = seed_for(cfg.training.seed, jobs.len());
            jobs.push(Job {
                run_id: format!("bw-r{r}-{}", variant.label()),
                label: variant.label(),
                config,
                evals: evals.clone(),
            });
            keys.push((r, variant));
        }
    }
    let results = run_jobs(&jobs, ctx)?;
    Ok(BandwidthReport {
        curves: keys
            .into_iter()
            .zip(results)
            .map(|((repetition, variant), rows)| BandwidthCurve {
                repetition,
                variant,
                rows,
            })
            .collect(),
    })
}
