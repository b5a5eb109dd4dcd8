//! Monte Carlo estimation of subjective divergence.
//!
//! Both branches reduce a sample to a log estimated weight
//! `log ŵ = log p(z, x*) + log m(y; z, x*) - log q(y, z; x*)`. Reference
//! replicates draw `z ~ r` and `y ~ m(·; z)`; inference replicates draw
//! `(y, z) ~ q` jointly. The estimate is the difference of the two means.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Branch, Error, Result};
use crate::math::mean_and_variance;
use crate::program::{AssessableInference, Dataset, InferenceProgram, MetaInferenceProgram, Model, ReferenceProgram};
use crate::rng::replicate_rng;

/// Replicate counts and master seed for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replicates {
    /// Reference replicates `N`.
    pub n_ref: usize,
    /// Inference replicates `M`.
    pub n_inf: usize,
    pub seed: u64,
}

impl Replicates {
    pub fn new(n_ref: usize, n_inf: usize, seed: u64) -> Self {
        Replicates { n_ref, n_inf, seed }
    }

    fn check(&self) -> Result<()> {
        let n = self.n_ref.min(self.n_inf);
        if n < 2 {
            return Err(Error::InsufficientSamples(n));
        }
        Ok(())
    }
}

/// Wall-clock time spent in each stage, summed over replicates.
///
/// Replicates may run concurrently, so the sum can exceed elapsed time.
/// Absolute values depend on the machine.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub reference: Duration,
    pub meta: Duration,
    pub inference: Duration,
    pub weight: Duration,
}

impl StageTimings {
    fn add(&mut self, other: &StageTimings) {
        self.reference += other.reference;
        self.meta += other.meta;
        self.inference += other.inference;
        self.weight += other.weight;
    }
}

/// A subjective divergence estimate together with its raw log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceEstimate {
    /// `mean(ref_log_weights) - mean(inf_log_weights)`, nats.
    pub estimate: f64,
    /// `sqrt(var(ref)/N + var(inf)/M)` with unbiased sample variances.
    pub stderr: f64,
    pub n_reference: usize,
    pub n_inference: usize,
    pub ref_log_weights: Vec<f64>,
    pub inf_log_weights: Vec<f64>,
    pub timings: StageTimings,
}

impl DivergenceEstimate {
    /// Builds an estimate from raw log weights.
    pub fn from_log_weights(ref_log_weights: Vec<f64>, inf_log_weights: Vec<f64>) -> Result<Self> {
        let (ref_mean, ref_se) = summarize_log_weights(&ref_log_weights)?;
        let (inf_mean, inf_se) = summarize_log_weights(&inf_log_weights)?;
        Ok(DivergenceEstimate {
            estimate: ref_mean - inf_mean,
            stderr: ref_se.hypot(inf_se),
            n_reference: ref_log_weights.len(),
            n_inference: inf_log_weights.len(),
            ref_log_weights,
            inf_log_weights,
            timings: StageTimings::default(),
        })
    }

    /// Mean of the reference log weights.
    pub fn reference_term(&self) -> f64 {
        mean_and_variance(&self.ref_log_weights).0
    }

    /// Mean of the inference log weights.
    pub fn inference_term(&self) -> f64 {
        mean_and_variance(&self.inf_log_weights).0
    }
}

/// Sample mean and standard error `sqrt(s² / n)` of a list of log weights.
pub fn summarize_log_weights(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(samples.len()));
    }
    let (mean, var) = mean_and_variance(samples);
    Ok((mean, (var / samples.len() as f64).sqrt()))
}

fn finite_or(label: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::support(format!("{label} is {value}")))
    }
}

/// `log ŵ_y(z) = log p(z, x*) + log m(y; z, x*) - log q(y, z; x*)`.
pub fn log_weight_estimate<M, I, Mt>(
    model: &M,
    data: &Dataset<M::Obs>,
    z: &M::Latent,
    y: &I::History,
    inf: &I,
    meta: &Mt,
) -> Result<f64>
where
    M: Model,
    I: InferenceProgram<Latent = M::Latent>,
    Mt: MetaInferenceProgram<Latent = M::Latent, History = I::History>,
{
    let log_p = finite_or("log p(z, x*)", model.log_joint(z, data))?;
    let log_m = finite_or("log m(y; z, x*)", meta.log_density(y, z)?)?;
    let log_q = finite_or("log q(y, z; x*)", inf.log_joint_density(y, z)?)?;
    Ok(log_p + log_m - log_q)
}

struct Sampled {
    log_weight: f64,
    timings: StageTimings,
}

fn collect_branch<F>(branch: Branch, n: usize, seed: u64, f: F) -> Result<(Vec<f64>, StageTimings)>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<Sampled> + Sync,
{
    let sampled: Vec<Sampled> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, branch, i);
            f(&mut rng).map_err(|e| e.in_replicate(branch, i))
        })
        .collect::<Result<_>>()?;
    let mut timings = StageTimings::default();
    let weights = sampled
        .iter()
        .map(|s| {
            timings.add(&s.timings);
            s.log_weight
        })
        .collect();
    Ok((weights, timings))
}

/// General estimator with a caller-supplied weight function.
///
/// `log_weight(y, z)` must equal [`log_weight_estimate`] for the same
/// programs; it exists so that programs with closed-form weights (the AIS
/// telescoping product, the particle filter's `Ẑ`) avoid evaluating
/// densities that are expensive or unavailable.
pub fn estimate_subjective_divergence_with<I, Mt, R, W>(
    inf: &I,
    meta: &Mt,
    reference: &R,
    reps: Replicates,
    log_weight: W,
) -> Result<DivergenceEstimate>
where
    I: InferenceProgram,
    Mt: MetaInferenceProgram<Latent = I::Latent, History = I::History>,
    R: ReferenceProgram<Latent = I::Latent>,
    W: Fn(&I::History, &I::Latent) -> Result<f64> + Sync,
{
    reps.check()?;
    let (ref_w, ref_t) = collect_branch(Branch::Reference, reps.n_ref, reps.seed, |rng| {
        let t0 = Instant::now();
        let z = reference.sample(rng)?;
        let t1 = Instant::now();
        let y = meta.run(&z, rng)?;
        let t2 = Instant::now();
        let log_weight = log_weight(&y, &z)?;
        let t3 = Instant::now();
        Ok(Sampled {
            log_weight,
            timings: StageTimings {
                reference: t1 - t0,
                meta: t2 - t1,
                weight: t3 - t2,
                ..Default::default()
            },
        })
    })?;
    let (inf_w, inf_t) = collect_branch(Branch::Inference, reps.n_inf, reps.seed, |rng| {
        let t0 = Instant::now();
        let (y, z) = inf.run(rng)?;
        let t1 = Instant::now();
        let log_weight = log_weight(&y, &z)?;
        let t2 = Instant::now();
        Ok(Sampled {
            log_weight,
            timings: StageTimings {
                inference: t1 - t0,
                weight: t2 - t1,
                ..Default::default()
            },
        })
    })?;
    let mut est = DivergenceEstimate::from_log_weights(ref_w, inf_w)?;
    est.timings = ref_t;
    est.timings.add(&inf_t);
    Ok(est)
}

/// Subjective divergence estimate for a general inference program using the
/// single-sample importance-sampling (reference branch) and harmonic-mean
/// (inference branch) marginal density estimators.
pub fn estimate_subjective_divergence_general<M, I, Mt, R>(
    model: &M,
    data: &Dataset<M::Obs>,
    inf: &I,
    meta: &Mt,
    reference: &R,
    reps: Replicates,
) -> Result<DivergenceEstimate>
where
    M: Model,
    I: InferenceProgram<Latent = M::Latent>,
    Mt: MetaInferenceProgram<Latent = M::Latent, History = I::History>,
    R: ReferenceProgram<Latent = M::Latent>,
{
    estimate_subjective_divergence_with(inf, meta, reference, reps, |y, z| {
        log_weight_estimate(model, data, z, y, inf, meta)
    })
}

/// Subjective divergence estimate for an assessable inference program:
/// both branches use the exact weight `log p(z, x*) - log q(z; x*)`.
pub fn estimate_subjective_divergence_assessable<M, A, R>(
    model: &M,
    data: &Dataset<M::Obs>,
    q: &A,
    reference: &R,
    reps: Replicates,
) -> Result<DivergenceEstimate>
where
    M: Model,
    A: AssessableInference<Latent = M::Latent>,
    R: ReferenceProgram<Latent = M::Latent>,
{
    reps.check()?;
    let weight = |z: &M::Latent| -> Result<f64> {
        let log_p = finite_or("log p(z, x*)", model.log_joint(z, data))?;
        let log_q = finite_or("log q(z; x*)", q.log_density(z))?;
        Ok(log_p - log_q)
    };
    let (ref_w, ref_t) = collect_branch(Branch::Reference, reps.n_ref, reps.seed, |rng| {
        let t0 = Instant::now();
        let z = reference.sample(rng)?;
        let t1 = Instant::now();
        let log_weight = weight(&z)?;
        Ok(Sampled {
            log_weight,
            timings: StageTimings {
                reference: t1 - t0,
                weight: t1.elapsed(),
                ..Default::default()
            },
        })
    })?;
    let (inf_w, inf_t) = collect_branch(Branch::Inference, reps.n_inf, reps.seed, |rng| {
        let t0 = Instant::now();
        let z = q.sample(rng);
        let t1 = Instant::now();
        let log_weight = weight(&z)?;
        Ok(Sampled {
            log_weight,
            timings: StageTimings {
                inference: t1 - t0,
                weight: t1.elapsed(),
                ..Default::default()
            },
        })
    })?;
    let mut est = DivergenceEstimate::from_log_weights(ref_w, inf_w)?;
    est.timings = ref_t;
    est.timings.add(&inf_t);
    Ok(est)
}
