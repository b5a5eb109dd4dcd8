//! Finite models given by explicit probability tables.
//!
//! The latent state is a vector of sites with small domains, stored in
//! row-major order (last site fastest). Observations are iid given the
//! state and take values in `0..n_obs`.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::exact::{exact_posterior, exact_prior, FiniteDistribution};
use crate::kernels::target_fn;
use crate::math::sample_categorical;
use crate::program::{Dataset, EnumerableModel, Model, PriorSampler, SequentialModel};
use crate::seqdb::TargetSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    domains: Vec<usize>,
    prior: Vec<f64>,
    /// `likelihood[state][x]`.
    likelihood: Vec<Vec<f64>>,
}

impl TabularModel {
    /// `prior` has one entry per joint state and sums to one; each
    /// likelihood row is a distribution over observation values.
    pub fn new(domains: Vec<usize>, prior: Vec<f64>, likelihood: Vec<Vec<f64>>) -> Result<Self> {
        let n: usize = domains.iter().product();
        if domains.is_empty() || n == 0 {
            return Err(Error::InvalidArgument("every site needs a non-empty domain".into()));
        }
        if prior.len() != n || likelihood.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} prior entries and likelihood rows"
            )));
        }
        let bad = |p: &[f64]| p.iter().any(|x| !(0.0..=1.0).contains(x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12;
        if bad(&prior) {
            return Err(Error::InvalidArgument("prior is not a distribution".into()));
        }
        if likelihood
            .iter()
            .any(|row| bad(row) || row.len() != likelihood[0].len())
        {
            return Err(Error::InvalidArgument("likelihood rows are not distributions".into()));
        }
        Ok(TabularModel {
            domains,
            prior,
            likelihood,
        })
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn num_states(&self) -> usize {
        self.prior.len()
    }

    pub fn num_obs(&self) -> usize {
        self.likelihood[0].len()
    }

    /// Row-major index of `z`, or `None` outside the domains.
    pub fn index(&self, z: &[usize]) -> Option<usize> {
        if z.len() != self.domains.len() {
            return None;
        }
        z.iter()
            .zip(&self.domains)
            .try_fold(0, |acc, (&v, &d)| (v < d).then_some(acc * d + v))
    }

    pub fn state(&self, mut index: usize) -> Vec<usize> {
        let mut z = vec![0; self.domains.len()];
        for (slot, &d) in z.iter_mut().zip(&self.domains).rev() {
            *slot = index % d;
            index /= d;
        }
        z
    }

    pub fn log_observation(&self, z: &[usize], x: usize) -> f64 {
        self.index(z)
            .and_then(|i| self.likelihood[i].get(x))
            .map_or(f64::NEG_INFINITY, |p| p.ln())
    }
}

impl Model for TabularModel {
    type Latent = Vec<usize>;
    type Obs = usize;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<usize> {
        self.state(sample_categorical(&self.prior, rng).expect("prior has mass"))
    }

    fn log_prior(&self, z: &Vec<usize>) -> f64 {
        self.index(z).map_or(f64::NEG_INFINITY, |i| self.prior[i].ln())
    }

    fn log_likelihood(&self, z: &Vec<usize>, data: &Dataset<usize>) -> f64 {
        data.observations().iter().map(|&x| self.log_observation(z, x)).sum()
    }
}

impl SequentialModel for TabularModel {
    fn log_likelihood_at(&self, z: &Vec<usize>, data: &Dataset<usize>, index: usize) -> f64 {
        self.log_observation(z, data.observations()[index])
    }
}

impl EnumerableModel for TabularModel {
    fn enumerate_latents(&self) -> Vec<Vec<usize>> {
        (0..self.num_states()).map(|i| self.state(i)).collect()
    }
}

/// One three-valued latent with three binary observations; the partial
/// posteriors move steadily from the prior toward state 2.
pub fn three_state_fixture() -> (TabularModel, Dataset<usize>) {
    let model = TabularModel::new(
        vec![3],
        vec![0.5, 0.3, 0.2],
        vec![vec![0.8, 0.2], vec![0.5, 0.5], vec![0.15, 0.85]],
    )
    .expect("valid tables");
    (model, Dataset::new(vec![1, 1, 0]).expect("non-empty"))
}

/// Three binary sites `(a, b, c)`. The prior ties `a` and `b` together
/// and prefers `(0, 0)`; the observations favour `a = b = 1` and `c = 1`.
/// Single-site moves between `(0, 0)` and `(1, 1)` have to pass through an
/// unlikely mixed state, so Gibbs sweeps mix the pair slowly.
pub fn three_site_fixture() -> (TabularModel, Dataset<usize>) {
    let mut prior = vec![0.0; 8];
    let mut likelihood = vec![Vec::new(); 8];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let i = a * 4 + b * 2 + c;
                let pair = match (a, b) {
                    (0, 0) => 0.8,
                    (1, 1) => 0.1,
                    _ => 0.05,
                };
                prior[i] = pair * 0.5;
                let on = match (a, b, c) {
                    (1, 1, 1) => 0.9,
                    (1, 1, 0) => 0.6,
                    (_, _, 1) => 0.3,
                    _ => 0.15,
                };
                likelihood[i] = vec![1.0 - on, on];
            }
        }
    }
    let model = TabularModel::new(vec![2, 2, 2], prior, likelihood).expect("valid tables");
    (model, Dataset::new(vec![1, 1, 1, 1]).expect("non-empty"))
}

/// Targets that anneal only the marginal of `site`: starting from the
/// prior, `p_t(z) ∝ π(z_s)^{1-β_t} p(z_s | x*)^{β_t} p(z_rest | z_s, x*)`
/// with `β_t = t / steps`, so the final target is the joint.
///
/// Every intermediate target shares the posterior conditional of the other
/// sites, which makes the effect of a kernel that never updates `site` easy
/// to isolate.
pub fn site_marginal_bridge(
    model: &TabularModel,
    data: &Dataset<usize>,
    site: usize,
    steps: usize,
) -> Result<TargetSequence<Vec<usize>>> {
    if site >= model.domains().len() || steps == 0 {
        return Err(Error::InvalidArgument("bad site or zero steps".into()));
    }
    let prior = exact_prior(model)?;
    let posterior = exact_posterior(model, data)?;
    let d = model.domains()[site];
    let marginal = |dist: &FiniteDistribution<Vec<usize>>| {
        let mut m = vec![0.0; d];
        for (z, lp) in dist.iter() {
            m[z[site]] += lp.exp();
        }
        m.into_iter().map(f64::ln).collect::<Vec<f64>>()
    };
    let shift: Arc<Vec<f64>> = Arc::new(
        marginal(&prior)
            .iter()
            .zip(marginal(&posterior))
            .map(|(p, q)| p - q)
            .collect(),
    );
    let model = Arc::new(model.clone());
    let data = Arc::new(data.clone());
    let targets = (1..=steps)
        .map(|t| {
            let w = 1.0 - t as f64 / steps as f64;
            let (model, data, shift) = (Arc::clone(&model), Arc::clone(&data), Arc::clone(&shift));
            target_fn(move |z: &Vec<usize>| {
                let lp = model.log_joint(z, &data);
                if w == 0.0 || lp == f64::NEG_INFINITY {
                    lp
                } else {
                    lp + w * shift[z[site]]
                }
            })
        })
        .collect();
    let support = model.enumerate_latents();
    Ok(TargetSequence::new(Arc::new(PriorSampler(Arc::clone(&model))), targets)?.with_support(support))
}
