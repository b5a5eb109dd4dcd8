//! Brute-force enumeration oracles over finite latent and history spaces.
//!
//! Everything here is exact summation in log space; nothing samples. These
//! functions are the ground truth that the Monte Carlo code is tested
//! against, so they favour directness over speed.
//!
//! Enumerations are capped at [`MAX_ENUMERATION`] states.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::math::{logaddexp, logsumexp, sample_categorical};
use crate::program::{
    AssessableInference, Assessed, Dataset, EnumerableModel, InferenceProgram, MetaInferenceProgram, Model, TrivialMeta,
};

/// Largest joint space any oracle will enumerate.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Normalization slack accepted when a density is enumerated.
const NORMALIZATION_TOL: f64 = 1e-9;

pub(crate) fn check_enumeration_size(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION {
        Err(Error::EnumerationTooLarge(n))
    } else {
        Ok(())
    }
}

/// `base^exp`, saturating at `usize::MAX`.
pub(crate) fn checked_space_size(base: usize, exp: usize) -> usize {
    (0..exp)
        .try_fold(1usize, |acc, _| acc.checked_mul(base))
        .unwrap_or(usize::MAX)
}

/// A normalized distribution over a finite, totally ordered support.
///
/// Zero-probability values are never stored, so two distributions have
/// equal support exactly when their stored values agree.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution<T> {
    support: Vec<T>,
    log_probs: Vec<f64>,
}

impl<T: Ord + Clone> FiniteDistribution<T> {
    /// Normalizes arbitrary log weights. Duplicate values are merged and
    /// `-inf` entries dropped.
    pub fn from_log_weights<I>(weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, f64)>,
    {
        let mut merged: BTreeMap<T, f64> = BTreeMap::new();
        for (value, lw) in weights {
            if lw.is_nan() {
                return Err(Error::InvalidArgument("NaN log weight".into()));
            }
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let slot = merged.entry(value).or_insert(f64::NEG_INFINITY);
            *slot = logaddexp(*slot, lw);
        }
        let lse = logsumexp(&merged.values().copied().collect::<Vec<_>>());
        if !lse.is_finite() {
            return Err(Error::NotNormalized(lse));
        }
        let (support, log_probs) = merged.into_iter().map(|(v, lw)| (v, lw - lse)).unzip();
        Ok(FiniteDistribution { support, log_probs })
    }

    /// Like [`from_log_weights`](Self::from_log_weights) but first checks that
    /// the weights already sum to one.
    pub fn from_normalized<I>(weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, f64)>,
    {
        let weights: Vec<(T, f64)> = weights.into_iter().collect();
        let lse = logsumexp(&weights.iter().map(|w| w.1).collect::<Vec<_>>());
        if !(lse.abs() <= NORMALIZATION_TOL) {
            return Err(Error::NotNormalized(lse));
        }
        Self::from_log_weights(weights)
    }

    /// Uniform distribution over the distinct values given.
    pub fn uniform<I: IntoIterator<Item = T>>(values: I) -> Result<Self> {
        Self::from_log_weights(values.into_iter().map(|v| (v, 0.0)))
    }

    /// A point mass.
    pub fn point(value: T) -> Self {
        FiniteDistribution {
            support: vec![value],
            log_probs: vec![0.0],
        }
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&T, f64)> {
        self.support.iter().zip(self.log_probs.iter().copied())
    }

    /// Log probability of `value`; `-inf` outside the support.
    pub fn log_prob(&self, value: &T) -> f64 {
        match self.support.binary_search(value) {
            Ok(i) => self.log_probs[i],
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn prob(&self, value: &T) -> f64 {
        self.log_prob(value).exp()
    }

    /// `E[f(X)]`.
    pub fn expect<F: FnMut(&T) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(v, lp)| lp.exp() * f(v)).sum()
    }

    /// Distribution of `f(X)`.
    pub fn map<U: Ord + Clone, F: FnMut(&T) -> U>(&self, mut f: F) -> FiniteDistribution<U> {
        FiniteDistribution::from_log_weights(self.iter().map(|(v, lp)| (f(v), lp)))
            .expect("pushforward of a normalized distribution is normalized")
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.support == other.support
    }

    /// Total variation distance; supports may differ.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut keys: Vec<&T> = self.support.iter().chain(other.support.iter()).collect();
        keys.sort();
        keys.dedup();
        0.5 * keys
            .into_iter()
            .map(|k| (self.prob(k) - other.prob(k)).abs())
            .sum::<f64>()
    }
}

impl<T: Ord + Clone + Send + Sync> AssessableInference for FiniteDistribution<T> {
    type Latent = T;

    fn sample(&self, rng: &mut dyn RngCore) -> T {
        let probs: Vec<f64> = self.log_probs.iter().map(|lp| lp.exp()).collect();
        let i = sample_categorical(&probs, rng).expect("distribution is normalized");
        self.support[i].clone()
    }

    fn log_density(&self, z: &T) -> f64 {
        self.log_prob(z)
    }
}

/// `KL(p || q) = Σ p (log p - log q)`. Supports must be identical.
pub fn exact_kl<T: Ord + Clone>(p: &FiniteDistribution<T>, q: &FiniteDistribution<T>) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::SupportMismatch);
    }
    Ok(p.log_probs
        .iter()
        .zip(&q.log_probs)
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum())
}

/// `KL(p || q) + KL(q || p)`.
pub fn exact_symmetrized_kl<T: Ord + Clone>(p: &FiniteDistribution<T>, q: &FiniteDistribution<T>) -> Result<f64> {
    Ok(exact_kl(p, q)? + exact_kl(q, p)?)
}

/// Pearson chi-square divergence `χ²(p || q) = Σ p ((q/p)² - 1)`.
pub fn chi_square_divergence<T: Ord + Clone>(p: &FiniteDistribution<T>, q: &FiniteDistribution<T>) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::SupportMismatch);
    }
    Ok(p.log_probs
        .iter()
        .zip(&q.log_probs)
        .map(|(&lp, &lq)| lp.exp() * ((2.0 * (lq - lp)).exp() - 1.0))
        .sum())
}

/// Exact posterior `p(z | x*)` of an enumerable model.
pub fn exact_posterior<M>(model: &M, data: &Dataset<M::Obs>) -> Result<FiniteDistribution<M::Latent>>
where
    M: EnumerableModel,
    M::Latent: Ord,
{
    let latents = model.enumerate_latents();
    check_enumeration_size(latents.len())?;
    let weighted = latents.into_iter().map(|z| {
        let lj = model.log_joint(&z, data);
        (z, lj)
    });
    FiniteDistribution::from_log_weights(weighted).map_err(|e| match e {
        Error::NotNormalized(_) => Error::ZeroEvidence,
        e => e,
    })
}

/// Exact prior `p(z)` of an enumerable model.
pub fn exact_prior<M>(model: &M) -> Result<FiniteDistribution<M::Latent>>
where
    M: EnumerableModel,
    M::Latent: Ord,
{
    let latents = model.enumerate_latents();
    check_enumeration_size(latents.len())?;
    FiniteDistribution::from_normalized(latents.into_iter().map(|z| {
        let lp = model.log_prior(&z);
        (z, lp)
    }))
}

/// Exact `log p(x*)` by summing the joint over the latent space.
pub fn exact_log_marginal_likelihood<M>(model: &M, data: &Dataset<M::Obs>) -> Result<f64>
where
    M: EnumerableModel,
    M::Latent: Ord,
{
    let latents = model.enumerate_latents();
    check_enumeration_size(latents.len())?;
    let lj: Vec<f64> = latents.iter().map(|z| model.log_joint(z, data)).collect();
    let lse = logsumexp(&lj);
    if lse == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidence);
    }
    Ok(lse)
}

/// An inference program whose joint `(history, output)` support is finite.
pub trait EnumerableInference: InferenceProgram
where
    Self::History: Ord + Clone,
    Self::Latent: Ord,
{
    /// Every `(y, z)` with possibly positive `q(y, z; x*)`. Entries with zero
    /// density are allowed and are dropped by the oracles.
    fn enumerate_joint(&self) -> Result<Vec<(Self::History, Self::Latent)>>;
}

/// A meta-inference program whose history support given `z` is finite.
pub trait EnumerableMeta: MetaInferenceProgram
where
    Self::History: Ord + Clone,
    Self::Latent: Ord,
{
    fn enumerate_histories(&self, z: &Self::Latent) -> Result<Vec<Self::History>>;
}

impl<A> EnumerableInference for Assessed<FiniteDistribution<A>>
where
    A: Ord + Clone + Send + Sync,
{
    fn enumerate_joint(&self) -> Result<Vec<((), A)>> {
        Ok(self.0.support().iter().map(|z| ((), z.clone())).collect())
    }
}

impl<Z: Ord + Clone + Send + Sync> EnumerableMeta for TrivialMeta<Z> {
    fn enumerate_histories(&self, _: &Z) -> Result<Vec<()>> {
        Ok(vec![()])
    }
}

/// The exact joint `q(y, z; x*)`, checked to be normalized.
pub fn exact_joint<I>(inf: &I) -> Result<FiniteDistribution<(I::History, I::Latent)>>
where
    I: EnumerableInference,
    I::History: Ord + Clone,
    I::Latent: Ord,
{
    let entries = inf.enumerate_joint()?;
    check_enumeration_size(entries.len())?;
    let weighted = entries
        .into_iter()
        .map(|(y, z)| {
            let lq = inf.log_joint_density(&y, &z)?;
            Ok(((y, z), lq))
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteDistribution::from_normalized(weighted)
}

/// The inference output marginal `q(z; x*) = Σ_y q(y, z; x*)`.
pub fn exact_marginal_output<I>(inf: &I) -> Result<FiniteDistribution<I::Latent>>
where
    I: EnumerableInference,
    I::History: Ord + Clone,
    I::Latent: Ord,
{
    Ok(exact_joint(inf)?.map(|(_, z)| z.clone()))
}

/// `q(y | z; x*)` from an already enumerated joint.
pub fn conditional_history<H: Ord + Clone, Z: Ord + Clone>(
    joint: &FiniteDistribution<(H, Z)>,
    z: &Z,
) -> Result<FiniteDistribution<H>> {
    let entries: Vec<(H, f64)> = joint
        .iter()
        .filter(|((_, zz), _)| zz == z)
        .map(|((y, _), lp)| (y.clone(), lp))
        .collect();
    if entries.is_empty() {
        return Err(Error::support("output has zero probability under q(z; x*)"));
    }
    FiniteDistribution::from_log_weights(entries)
}

/// `m(y; z, x*)`, checked to be normalized.
pub fn exact_meta_distribution<Mt>(meta: &Mt, z: &Mt::Latent) -> Result<FiniteDistribution<Mt::History>>
where
    Mt: EnumerableMeta,
    Mt::History: Ord + Clone,
    Mt::Latent: Ord,
{
    let histories = meta.enumerate_histories(z)?;
    check_enumeration_size(histories.len())?;
    let weighted = histories
        .into_iter()
        .map(|y| {
            let lm = meta.log_density(&y, z)?;
            Ok((y, lm))
        })
        .collect::<Result<Vec<_>>>()?;
    FiniteDistribution::from_normalized(weighted)
}

/// The two expected log weights whose difference is the subjective
/// divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactTerms {
    /// `E_{z~r} E_{y~m(·;z)} [log ŵ_y(z)]`.
    pub reference: f64,
    /// `E_{(y,z)~q} [log ŵ_y(z)]`.
    pub inference: f64,
}

impl ExactTerms {
    pub fn divergence(&self) -> f64 {
        self.reference - self.inference
    }
}

fn finite_log(label: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::support(format!("{label} is {v} where mass exists")))
    }
}

/// Exact expectations of both branches of the estimator.
pub fn exact_branch_terms<M, I, Mt>(
    model: &M,
    data: &Dataset<M::Obs>,
    inf: &I,
    meta: &Mt,
    reference: &FiniteDistribution<M::Latent>,
) -> Result<ExactTerms>
where
    M: Model,
    M::Latent: Ord,
    I: EnumerableInference<Latent = M::Latent>,
    I::History: Ord + Clone,
    Mt: EnumerableMeta<Latent = M::Latent, History = I::History>,
{
    let joint = exact_joint(inf)?;
    let mut inference = 0.0;
    for ((y, z), lq) in joint.iter() {
        let lp = finite_log("log p(z, x*)", model.log_joint(z, data))?;
        let lm = finite_log("log m(y; z)", meta.log_density(y, z)?)?;
        inference += lq.exp() * (lp + lm - lq);
    }
    let mut reference_term = 0.0;
    for (z, lr) in reference.iter() {
        let lp = finite_log("log p(z, x*)", model.log_joint(z, data))?;
        let m = exact_meta_distribution(meta, z)?;
        let mut inner = 0.0;
        for (y, lm) in m.iter() {
            let lq = finite_log("log q(y, z)", inf.log_joint_density(y, z)?)?;
            inner += lm.exp() * (lp + lm - lq);
        }
        reference_term += lr.exp() * inner;
    }
    Ok(ExactTerms {
        reference: reference_term,
        inference,
    })
}

/// Exact expected value of the subjective divergence estimator.
pub fn exact_subjective_divergence_expectation<M, I, Mt>(
    model: &M,
    data: &Dataset<M::Obs>,
    inf: &I,
    meta: &Mt,
    reference: &FiniteDistribution<M::Latent>,
) -> Result<f64>
where
    M: Model,
    M::Latent: Ord,
    I: EnumerableInference<Latent = M::Latent>,
    I::History: Ord + Clone,
    Mt: EnumerableMeta<Latent = M::Latent, History = I::History>,
{
    Ok(exact_branch_terms(model, data, inf, meta, reference)?.divergence())
}

/// Symmetrized conditional relative entropy between `q(y | z)` and `m(y; z)`:
/// `E_{z~q}[KL(q(y|z) || m(y;z))] + E_{z~p(z|x*)}[KL(m(y;z) || q(y|z))]`.
pub fn exact_metainference_gap<I, Mt>(inf: &I, meta: &Mt, posterior: &FiniteDistribution<I::Latent>) -> Result<f64>
where
    I: EnumerableInference,
    I::History: Ord + Clone,
    I::Latent: Ord,
    Mt: EnumerableMeta<Latent = I::Latent, History = I::History>,
{
    let joint = exact_joint(inf)?;
    let marginal = joint.map(|(_, z)| z.clone());
    let mut gap = 0.0;
    for (z, lq) in marginal.iter() {
        let cond = conditional_history(&joint, z)?;
        let m = exact_meta_distribution(meta, z)?;
        gap += lq.exp() * exact_kl(&cond, &m)?;
    }
    for (z, lp) in posterior.iter() {
        let cond = conditional_history(&joint, z)?;
        let m = exact_meta_distribution(meta, z)?;
        gap += lp.exp() * exact_kl(&m, &cond)?;
    }
    Ok(gap)
}

/// Exact moments of the single-sample marginal density estimators at one
/// output `z`, where `q̂ = q(y, z) / m(y; z)` with `y ~ m(·; z)` (IS) or
/// `y ~ q(y | z)` (HM).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorMoments {
    pub log_q: f64,
    /// `E[q̂_IS]`, equal to `q(z)` when the estimator is unbiased.
    pub mean_is: f64,
    /// `E[1 / q̂_HM]`, equal to `1 / q(z)` when unbiased in reciprocal.
    pub mean_inv_hm: f64,
    pub mean_log_is: f64,
    pub mean_log_hm: f64,
    /// `Var(q̂_IS / q(z))`.
    pub var_is_ratio: f64,
    /// `Var(q(z) / q̂_HM)`.
    pub var_inv_hm_ratio: f64,
}

/// Enumerates both estimators at `z`.
pub fn estimator_moments<I, Mt>(inf: &I, meta: &Mt, z: &I::Latent) -> Result<EstimatorMoments>
where
    I: EnumerableInference,
    I::History: Ord + Clone,
    I::Latent: Ord,
    Mt: EnumerableMeta<Latent = I::Latent, History = I::History>,
{
    let joint = exact_joint(inf)?;
    let log_q = joint
        .iter()
        .filter(|((_, zz), _)| zz == z)
        .map(|(_, lp)| lp)
        .collect::<Vec<_>>();
    let log_q = logsumexp(&log_q);
    if log_q == f64::NEG_INFINITY {
        return Err(Error::support("output has zero probability under q(z; x*)"));
    }

    let m = exact_meta_distribution(meta, z)?;
    let (mut mean_is, mut mean_log_is, mut second_is) = (0.0, 0.0, 0.0);
    for (y, lm) in m.iter() {
        let lq_joint = finite_log("log q(y, z)", inf.log_joint_density(y, z)?)?;
        let log_est = lq_joint - lm;
        let pm = lm.exp();
        mean_is += pm * log_est.exp();
        mean_log_is += pm * log_est;
        second_is += pm * (2.0 * (log_est - log_q)).exp();
    }
    let ratio_mean = mean_is / log_q.exp();

    let (mut mean_inv_hm, mut mean_log_hm, mut second_hm, mut inv_ratio_mean) = (0.0, 0.0, 0.0, 0.0);
    for ((y, zz), lq_joint) in joint.iter() {
        if zz != z {
            continue;
        }
        let lm = finite_log("log m(y; z)", meta.log_density(y, z)?)?;
        let log_est = lq_joint - lm;
        let p_cond = (lq_joint - log_q).exp();
        mean_inv_hm += p_cond * (-log_est).exp();
        mean_log_hm += p_cond * log_est;
        inv_ratio_mean += p_cond * (log_q - log_est).exp();
        second_hm += p_cond * (2.0 * (log_q - log_est)).exp();
    }

    Ok(EstimatorMoments {
        log_q,
        mean_is,
        mean_inv_hm,
        mean_log_is,
        mean_log_hm,
        var_is_ratio: second_is - ratio_mean * ratio_mean,
        var_inv_hm_ratio: second_hm - inv_ratio_mean * inv_ratio_mean,
    })
}
