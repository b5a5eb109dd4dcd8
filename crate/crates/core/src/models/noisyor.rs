//! Two-layer noisy-or networks of binary causes and findings.
//!
//! Cause `i` is on with probability `cause_prior[i]`. Finding `j` is on
//! with probability `1 - (1 - leak) ∏ (1 - transmission)` over the edges
//! into `j` whose cause is on. The dataset holds one observation per
//! finding, in finding order.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::exact::MAX_ENUMERATION;
use crate::kernels::{target_fn, SharedTarget};
use crate::program::{Dataset, EnumerableModel, Model, PriorSampler, SequentialModel};
use crate::rng::stream;
use crate::seqdb::TargetSequence;

const FIXTURE_TAG: u64 = 0x4e4f_4953_594f;

/// Leak probability of the relaxed target at the start of annealing.
pub const RELAXED_LEAK: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub cause: usize,
    pub finding: usize,
    pub transmission: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOrNetwork {
    cause_prior: Vec<f64>,
    /// `parents[j]`: the edges into finding `j`.
    parents: Vec<Vec<Edge>>,
    leak: f64,
}

fn is_probability(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

impl NoisyOrNetwork {
    pub fn new(cause_prior: Vec<f64>, n_findings: usize, edges: &[Edge], leak: f64) -> Result<Self> {
        if cause_prior.is_empty() || n_findings == 0 {
            return Err(Error::InvalidArgument("need at least one cause and one finding".into()));
        }
        if !cause_prior.iter().all(|&p| is_probability(p)) || !is_probability(leak) {
            return Err(Error::InvalidArgument("probabilities must lie in (0, 1)".into()));
        }
        let mut parents = vec![Vec::new(); n_findings];
        for e in edges {
            if e.cause >= cause_prior.len() || e.finding >= n_findings || !is_probability(e.transmission) {
                return Err(Error::InvalidArgument(format!("invalid edge {e:?}")));
            }
            parents[e.finding].push(*e);
        }
        Ok(NoisyOrNetwork {
            cause_prior,
            parents,
            leak,
        })
    }

    pub fn num_causes(&self) -> usize {
        self.cause_prior.len()
    }

    pub fn num_findings(&self) -> usize {
        self.parents.len()
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }

    /// The same network with a different leak probability.
    pub fn with_leak(&self, leak: f64) -> Result<Self> {
        if !is_probability(leak) {
            return Err(Error::InvalidArgument("leak must lie in (0, 1)".into()));
        }
        Ok(NoisyOrNetwork { leak, ..self.clone() })
    }

    /// `p(finding j on | z)`.
    pub fn finding_probability(&self, z: &[usize], j: usize) -> f64 {
        let off: f64 = self.parents[j]
            .iter()
            .filter(|e| z[e.cause] == 1)
            .map(|e| 1.0 - e.transmission)
            .product();
        1.0 - (1.0 - self.leak) * off
    }

    fn log_finding(&self, z: &[usize], j: usize, on: bool) -> f64 {
        let p = self.finding_probability(z, j);
        if on {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn valid(&self, z: &[usize]) -> bool {
        z.len() == self.num_causes() && z.iter().all(|&v| v < 2)
    }

    /// Findings simulated for the causes `z`.
    pub fn simulate_findings(&self, z: &[usize], rng: &mut dyn RngCore) -> Vec<bool> {
        (0..self.num_findings())
            .map(|j| rng.random::<f64>() < self.finding_probability(z, j))
            .collect()
    }
}

impl Model for NoisyOrNetwork {
    type Latent = Vec<usize>;
    type Obs = bool;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<usize> {
        self.cause_prior
            .iter()
            .map(|&p| usize::from(rng.random::<f64>() < p))
            .collect()
    }

    fn log_prior(&self, z: &Vec<usize>) -> f64 {
        if !self.valid(z) {
            return f64::NEG_INFINITY;
        }
        z.iter()
            .zip(&self.cause_prior)
            .map(|(&v, &p)| if v == 1 { p.ln() } else { (1.0 - p).ln() })
            .sum()
    }

    fn log_likelihood(&self, z: &Vec<usize>, data: &Dataset<bool>) -> f64 {
        if !self.valid(z) || data.len() != self.num_findings() {
            return f64::NEG_INFINITY;
        }
        (0..data.len()).map(|j| self.log_likelihood_at(z, data, j)).sum()
    }
}

impl SequentialModel for NoisyOrNetwork {
    fn log_likelihood_at(&self, z: &Vec<usize>, data: &Dataset<bool>, index: usize) -> f64 {
        self.log_finding(z, index, data.observations()[index])
    }
}

impl EnumerableModel for NoisyOrNetwork {
    /// All `2^n` cause configurations; panics beyond the enumeration cap.
    fn enumerate_latents(&self) -> Vec<Vec<usize>> {
        let n = self.num_causes();
        assert!(
            n < usize::BITS as usize && (1usize << n) <= MAX_ENUMERATION,
            "too many causes to enumerate"
        );
        (0..1usize << n)
            .map(|bits| (0..n).map(|i| (bits >> i) & 1).collect())
            .collect()
    }
}

/// Desk-scale network: every cause-finding pair is linked with
/// probability `edge_prob`, then each finding without a parent gets one.
/// Cause priors 0.001, transmissions 0.9, leak 0.001. The findings are
/// simulated from two causes chosen at random and switched on.
pub fn noisyor_fixture(n_causes: usize, n_findings: usize, seed: u64) -> Result<(NoisyOrNetwork, Dataset<bool>)> {
    noisyor_fixture_with(n_causes, n_findings, 0.3, seed)
}

pub fn noisyor_fixture_with(
    n_causes: usize,
    n_findings: usize,
    edge_prob: f64,
    seed: u64,
) -> Result<(NoisyOrNetwork, Dataset<bool>)> {
    if n_causes == 0 || n_findings == 0 {
        return Err(Error::InvalidArgument("need at least one cause and one finding".into()));
    }
    let mut rng = stream(seed, FIXTURE_TAG, 0);
    let mut edges = Vec::new();
    for j in 0..n_findings {
        let before = edges.len();
        for i in 0..n_causes {
            if rng.random::<f64>() < edge_prob {
                edges.push(Edge {
                    cause: i,
                    finding: j,
                    transmission: 0.9,
                });
            }
        }
        if edges.len() == before {
            edges.push(Edge {
                cause: rng.random_range(0..n_causes),
                finding: j,
                transmission: 0.9,
            });
        }
    }
    let net = NoisyOrNetwork::new(vec![0.001; n_causes], n_findings, &edges, 0.001)?;
    let mut truth = vec![0; n_causes];
    for i in sample(&mut rng, n_causes, n_causes.min(2)) {
        truth[i] = 1;
    }
    let findings = net.simulate_findings(&truth, &mut rng);
    Ok((net, Dataset::new(findings)?))
}

/// Anneals the leak linearly from [`RELAXED_LEAK`] down to the network's
/// own value over `steps` equal steps.
///
/// `p_0` is the prior and the targets are the joints with leak
/// `λ_k = λ_relaxed + (λ - λ_relaxed) k / steps` for `k = 0..=steps`, so
/// there are `steps + 1` kernels and the last target is the true joint.
/// The state space is declared whenever it is small enough to enumerate.
pub fn noisyor_annealing_schedule(
    net: &NoisyOrNetwork,
    data: &Dataset<bool>,
    steps: usize,
) -> Result<TargetSequence<Vec<usize>>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("annealing needs at least one step".into()));
    }
    if data.len() != net.num_findings() {
        return Err(Error::InvalidArgument("one observation per finding is required".into()));
    }
    let data = Arc::new(data.clone());
    let targets: Vec<SharedTarget<Vec<usize>>> = (0..=steps)
        .map(|k| {
            let m = if k == steps {
                net.clone()
            } else {
                net.with_leak(RELAXED_LEAK + (net.leak - RELAXED_LEAK) * k as f64 / steps as f64)?
            };
            let d = Arc::clone(&data);
            Ok(target_fn(move |z: &Vec<usize>| m.log_joint(z, &d)))
        })
        .collect::<Result<_>>()?;
    let seq = TargetSequence::new(Arc::new(PriorSampler(net.clone())), targets)?;
    let n = net.num_causes();
    Ok(if n < usize::BITS as usize && (1usize << n) <= MAX_ENUMERATION {
        seq.with_support(net.enumerate_latents())
    } else {
        seq
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_prior;
    use crate::seqdb::asymptotic_gap;

    #[test]
    fn prior_normalizes() {
        let (net, _) = noisyor_fixture(6, 8, 1).unwrap();
        let p = exact_prior(&net).unwrap();
        assert_eq!(p.len(), 64);
    }

    #[test]
    fn finding_probability_combines_parents() {
        let edges = [
            Edge {
                cause: 0,
                finding: 0,
                transmission: 0.9,
            },
            Edge {
                cause: 1,
                finding: 0,
                transmission: 0.5,
            },
        ];
        let net = NoisyOrNetwork::new(vec![0.1, 0.1], 1, &edges, 0.01).unwrap();
        assert!((net.finding_probability(&[0, 0], 0) - 0.01).abs() < 1e-15);
        assert!((net.finding_probability(&[1, 1], 0) - (1.0 - 0.99 * 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        let (net, data) = noisyor_fixture(6, 8, 2).unwrap();
        let seq = noisyor_annealing_schedule(&net, &data, 1).unwrap();
        assert_eq!(seq.len(), 2);
        let z = vec![1, 0, 0, 0, 0, 1];
        let relaxed = net.with_leak(RELAXED_LEAK).unwrap().log_joint(&z, &data);
        assert_eq!(seq.log_target(1, &z), relaxed);
        assert_eq!(seq.log_target(2, &z), net.log_joint(&z, &data));
        let ten = noisyor_annealing_schedule(&net, &data, 10).unwrap();
        assert_eq!(ten.len(), 11);
    }

    #[test]
    fn finer_schedule_shrinks_gap() {
        let (net, data) = noisyor_fixture(6, 8, 3).unwrap();
        let gaps: Vec<f64> = [1, 2, 5, 10]
            .iter()
            .map(|&s| asymptotic_gap(&noisyor_annealing_schedule(&net, &data, s).unwrap()).unwrap())
            .collect();
        for w in gaps.windows(2) {
            assert!(w[1] < w[0], "{gaps:?}");
        }
    }
}
