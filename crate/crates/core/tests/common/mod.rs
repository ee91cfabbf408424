//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use bwlc::channels::{marginalize_bandwidth, BandwidthLimitedSpec, GaussianChannelSpec, Marginalization};
use bwlc::config::{ChannelConfig, DatasetConfig, ObjectiveConfig, TrainConfig, TrainingConfig};
use bwlc::data::Dataset;
use bwlc::models::{AlvComponents, DecoderNet, EncoderNet, ModelBundle, ModelConfig, PriorKind};
use bwlc::objectives::{rate_terms, McEstimate};
use bwlc::scalar::log_sum_exp;
use bwlc::training::train_on;
use bwlc::{seeded_rng, ParameterStore, Result, Tape, Tensor};

/// One random linear-Gaussian model `y ~ N(0,1)`, `x | y ~ N(a·y + b, σ²)`
/// with a linear Gaussian encoder, scored at one random `x`.
pub struct ElboTrial {
    /// Library ELBO, one reparameterized sample per row.
    pub elbo: McEstimate,
    /// The same ELBO in closed form from the encoder's mean and scale.
    pub elbo_exact: f64,
    /// `log N(x; b, a² + σ²)`.
    pub log_likelihood: f64,
}

pub fn elbo_toy_trial(seed: u64, rows: usize) -> Result<ElboTrial> {
    let mut rng = seeded_rng(seed);
    let sigma = rng.random_range(0.2..2.0);
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
    let x = rng.random_range(-3.0..3.0);
    let enc = EncoderNet::new("enc", 1, &[], 1)?;
    let dec = DecoderNet::new("dec", 1, 0, &[], 1, sigma)?;
    let mut store = ParameterStore::<f64>::new(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    store.insert("enc.l0.w", Tensor::new(vec![1, 2], vec![u(-2.0, 2.0), u(-1.0, 1.0)])?)?;
    store.insert("enc.l0.b", Tensor::new(vec![2], vec![u(-2.0, 2.0), u(-1.0, 1.0)])?)?;
    store.insert("dec.l0.w", Tensor::new(vec![1, 1], vec![a])?)?;
    store.insert("dec.l0.b", Tensor::new(vec![1], vec![b])?)?;

    let mut tape = Tape::new(&store);
    let xv = tape.constant(Tensor::full(&[rows, 1], x))?;
    let q = enc.encode(&mut tape, xv)?;
    let y = q.sample(&mut tape, &mut rng)?;
    let x_hat = dec.decode(&mut tape, y, None)?;
    let nll = dec.nll(&mut tape, xv, x_hat)?;
    let kl = q.kl_to_standard(&mut tape)?;
    let per_row: Vec<f64> = tape.value(nll).iter().zip(tape.value(kl)).map(|(n, k)| -(n + k)).collect();

    let m = tape.value(q.mean)[0];
    let s = tape.value(q.log_std)[0].exp();
    let var = sigma * sigma;
    let elbo_exact = -0.5 * (2.0 * std::f64::consts::PI * var).ln()
        - ((x - a * m - b).powi(2) + a * a * s * s) / (2.0 * var)
        - 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    let marginal = Normal::new(b, (a * a + var).sqrt()).expect("valid normal");
    Ok(ElboTrial {
        elbo: McEstimate::from_samples(&per_row),
        elbo_exact,
        log_likelihood: marginal.ln_pdf(x),
    })
}

/// Auxiliary-latent distortion bound at one `(x, z)` against the distortion
/// marginalized over `v ~ P(V)` by plain averaging of the likelihood.
pub struct AlvTrial {
    pub bound: McEstimate,
    pub marginal: f64,
}

pub fn alv_bound_trial(seed: u64, bound_rows: usize, marginal_samples: usize) -> Result<AlvTrial> {
    let (x_dim, latent, v_dim) = (3, 2, 2);
    let mut rng = seeded_rng(seed);
    let alv = AlvComponents::new("alv", x_dim, latent, v_dim, &[6], false)?;
    let dec = DecoderNet::new("dec", latent, v_dim, &[6], x_dim, 0.3)?;
    let mut store = ParameterStore::<f64>::new(seed);
    alv.init(&mut store, &mut rng)?;
    dec.init(&mut store, &mut rng)?;
    let x: Vec<f64> = (0..x_dim).map(|_| rng.random()).collect();
    let z: Vec<f64> = (0..latent).map(|_| rng.random_range(-1.5..1.5)).collect();
    let repeat = |row: &[f64], n: usize| Tensor::from_rows(&vec![row.to_vec(); n]);

    let mut tape = Tape::new(&store);
    let xv = tape.constant(repeat(&x, bound_rows)?)?;
    let zv = tape.constant(repeat(&z, bound_rows)?)?;
    let (v, kl) = alv.infer(&mut tape, xv, None, zv, &mut rng)?;
    let x_hat = dec.decode(&mut tape, zv, Some(v))?;
    let nll = dec.nll(&mut tape, xv, x_hat)?;
    let bound: Vec<f64> = tape.value(nll).iter().zip(tape.value(kl)).map(|(n, k)| n + k).collect();

    let xv = tape.constant(repeat(&x, marginal_samples)?)?;
    let zv = tape.constant(repeat(&z, marginal_samples)?)?;
    let v = alv.prior_sample(&mut tape, marginal_samples, &mut rng)?;
    let x_hat = dec.decode(&mut tape, zv, Some(v))?;
    let nll = dec.nll(&mut tape, xv, x_hat)?;
    let log_lik: Vec<f64> = tape.value(nll).iter().map(|n| -n).collect();
    let marginal = -(log_sum_exp(&log_lik) - (marginal_samples as f64).ln());
    Ok(AlvTrial {
        bound: McEstimate::from_samples(&bound),
        marginal,
    })
}

pub const SYMBOLS: usize = 16;

/// Symbol probabilities (a discretized Gaussian bump) and bin centres in `[0, 1]`.
pub fn discretized_source() -> (Vec<f64>, Vec<f64>) {
    let w: Vec<f64> = (0..SYMBOLS).map(|k| (-(k as f64 - 6.5).powi(2) / 18.0).exp()).collect();
    let total: f64 = w.iter().sum();
    let probs = w.iter().map(|v| v / total).collect();
    let centres = (0..SYMBOLS).map(|k| (k as f64 + 0.5) / SYMBOLS as f64).collect();
    (probs, centres)
}

pub fn entropy_nats(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `−log P(k | mean)` for the decoder Gaussian integrated over symbol `k`'s
/// bin; the outer bins extend to ±∞ so the symbol probabilities sum to one.
pub fn bin_nll(k: usize, mean: f64, scale: f64) -> f64 {
    let n = Normal::new(mean, scale).expect("valid normal");
    let lo = if k == 0 { 0.0 } else { n.cdf(k as f64 / SYMBOLS as f64) };
    let hi = if k + 1 == SYMBOLS { 1.0 } else { n.cdf((k + 1) as f64 / SYMBOLS as f64) };
    -(hi - lo).max(f64::MIN_POSITIVE).ln()
}

pub struct EntropyTrial {
    pub entropy: f64,
    /// `Σ_k p_k (R_k + D_k)` with the standard error of the weighted sum.
    pub rate_plus_distortion: McEstimate,
}

/// Trains a one-pixel model on the discretized source for `steps` steps, then
/// estimates rate against the prior and the bin-integrated distortion.
pub fn entropy_bound_trial(seed: u64, prior: PriorKind, steps: usize, rows: usize) -> Result<EntropyTrial> {
    let (probs, centres) = discretized_source();
    let mut rng = seeded_rng(seed);
    let cdf: Vec<f64> = probs.iter().scan(0.0, |acc, p| {
        *acc += p;
        Some(*acc)
    }).collect();
    let pixels: Vec<f64> = (0..2000)
        .map(|_| {
            let u: f64 = rng.random();
            centres[cdf.iter().position(|&c| u < c).unwrap_or(SYMBOLS - 1)]
        })
        .collect();
    let data = Dataset::new(1, 1, pixels)?;
    let scale = 1.0 / SYMBOLS as f64;
    let config = TrainConfig {
        dataset: DatasetConfig::gauss_blobs(1, 4, 0),
        model: ModelConfig {
            latent_dim: 2,
            slots: 1,
            hidden: vec![16],
            prior,
            prior_hidden: vec![8],
            obs_scale: scale,
            ..ModelConfig::default()
        },
        channel: ChannelConfig::Gaussian { snr: 1e4 },
        objective: ObjectiveConfig::default(),
        training: TrainingConfig {
            steps,
            batch_size: 32,
            learning_rate: 1e-3,
            ..TrainingConfig::with_seed(seed)
        },
    };
    let bundle = train_on::<f64>(&config, &data)?.bundle;

    let mut total = 0.0;
    let mut var = 0.0;
    for (k, (&p, &c)) in probs.iter().zip(&centres).enumerate() {
        let mut tape = Tape::new(&bundle.store);
        let xv = tape.constant(Tensor::full(&[rows, 1], c))?;
        let q = bundle.encoder.encode(&mut tape, xv)?;
        let y = q.sample(&mut tape, &mut rng)?;
        let rate = rate_terms(&mut tape, &q, y, &bundle.prior)?;
        let x_hat = bundle.decoder.decode(&mut tape, y, None)?;
        let terms: Vec<f64> = rate
            .iter()
            .zip(tape.value(x_hat))
            .map(|(r, &m)| r + bin_nll(k, m, scale))
            .collect();
        let e = McEstimate::from_samples(&terms);
        total += p * e.mean;
        var += (p * e.std_err).powi(2);
    }
    Ok(EntropyTrial {
        entropy: entropy_nats(&probs),
        rate_plus_distortion: McEstimate {
            mean: total,
            std_err: var.sqrt(),
            samples: rows * SYMBOLS,
        },
    })
}

/// Reconstruction term of a small autoregressive-prior model summed exactly
/// over the bandwidth (repeated over channel noise), against one Monte Carlo
/// estimate with `k` bandwidth draws.
pub fn marginalization_trial(seed: u64, k: usize, repeats: usize) -> Result<(McEstimate, McEstimate)> {
    let cfg = ModelConfig {
        latent_dim: 4,
        slots: 2,
        hidden: vec![8],
        prior: PriorKind::Autoregressive,
        prior_hidden: vec![4],
        ..ModelConfig::default()
    };
    let bundle = ModelBundle::<f64>::joint(&cfg, 9, seed)?;
    let mut rng = seeded_rng(seed);
    let x = Tensor::new(vec![4, 9], (0..36).map(|_| rng.random()).collect())?;
    let inner = GaussianChannelSpec::new(1.0)?;
    let full = BandwidthLimitedSpec::new(cfg.partition()?, vec![0.2, 0.3, 0.5], inner, Marginalization::FullSum)?;
    let mc = full.clone().with_marginalization(Marginalization::MonteCarlo { samples: k })?;

    let mut tape = Tape::new(&bundle.store);
    let xv = tape.constant(x)?;
    let q = bundle.encoder.encode(&mut tape, xv)?;
    let y = q.sample(&mut tape, &mut rng)?;
    let mut integrand = |t: &mut Tape<'_, f64>, out: &bwlc::channels::ChannelOutput| {
        let x_hat = bundle.decoder.decode(t, out.z, None)?;
        let nll = bundle.decoder.nll(t, xv, x_hat)?;
        t.mean(nll)
    };
    let mut exact = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let m = marginalize_bandwidth(&mut tape, y, q.mean, &full, &bundle.prior, &mut rng, &mut integrand)?;
        exact.push(tape.item(m.value));
    }
    let m = marginalize_bandwidth(&mut tape, y, q.mean, &mc, &bundle.prior, &mut rng, &mut integrand)?;
    let draws: Vec<f64> = m.draws.iter().map(|d| d.1).collect();
    Ok((McEstimate::from_samples(&draws), McEstimate::from_samples(&exact)))
}
