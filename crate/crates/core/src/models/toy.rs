//! A one-latent Bernoulli model small enough to check by hand.
//!
//! `z ~ Bernoulli(prior)`, each observation `x_i | z ~ Bernoulli(lik[z])`.
//! With the default parameters and `x* = [true]` the posterior is
//! `p(z = 1 | x*) = 0.24 / 0.38` and `p(x*) = 0.38`.

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::exact::{exact_log_marginal_likelihood, exact_posterior, FiniteDistribution};
use crate::program::{Dataset, EnumerableModel, Model, SequentialModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyBernoulli {
    /// `p(z = 1)`.
    pub prior: f64,
    /// `p(x = 1 | z = 1)`.
    pub lik_on: f64,
    /// `p(x = 1 | z = 0)`.
    pub lik_off: f64,
}

impl Default for ToyBernoulli {
    fn default() -> Self {
        ToyBernoulli {
            prior: 0.3,
            lik_on: 0.8,
            lik_off: 0.2,
        }
    }
}

impl ToyBernoulli {
    /// Default model with the single observation `x* = true`.
    pub fn fixture() -> (Self, Dataset<bool>) {
        (ToyBernoulli::default(), Dataset::new(vec![true]).expect("non-empty"))
    }

    fn log_obs(&self, z: usize, x: bool) -> f64 {
        let p = if z == 1 { self.lik_on } else { self.lik_off };
        if x {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }
}

impl Model for ToyBernoulli {
    type Latent = usize;
    type Obs = bool;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> usize {
        usize::from(rng.random::<f64>() < self.prior)
    }

    fn log_prior(&self, z: &usize) -> f64 {
        match z {
            0 => (1.0 - self.prior).ln(),
            1 => self.prior.ln(),
            _ => f64::NEG_INFINITY,
        }
    }

    fn log_likelihood(&self, z: &usize, data: &Dataset<bool>) -> f64 {
        data.observations().iter().map(|&x| self.log_obs(*z, x)).sum()
    }
}

impl SequentialModel for ToyBernoulli {
    fn log_likelihood_at(&self, z: &usize, data: &Dataset<bool>, index: usize) -> f64 {
        self.log_obs(*z, data.observations()[index])
    }
}

impl EnumerableModel for ToyBernoulli {
    fn enumerate_latents(&self) -> Vec<usize> {
        vec![0, 1]
    }
}

/// The toy model with its exact posterior and log evidence.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub model: ToyBernoulli,
    pub data: Dataset<bool>,
    pub posterior: FiniteDistribution<usize>,
    pub log_evidence: f64,
}

pub fn toy_bernoulli_fixture() -> Result<ToyFixture> {
    let (model, data) = ToyBernoulli::fixture();
    Ok(ToyFixture {
        posterior: exact_posterior(&model, &data)?,
        log_evidence: exact_log_marginal_likelihood(&model, &data)?,
        model,
        data,
    })
}
