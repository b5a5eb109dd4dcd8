//! Finite hidden Markov models with seeded random parameters.

use rand::RngCore;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::math::sample_categorical;
use crate::program::Dataset;
use crate::rng::stream;
use crate::smc::{forward_log_evidence, FiniteStateSpace, StateSpaceModel};

/// Stream tag for fixture generation, kept apart from estimator streams.
const FIXTURE_TAG: u64 = 0x4d4d_4649_5854;

#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    initial: Vec<f64>,
    /// `transition[i][j] = p(z_{t+1} = j | z_t = i)`.
    transition: Vec<Vec<f64>>,
    /// `emission[i][x] = p(x_t = x | z_t = i)`.
    emission: Vec<Vec<f64>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !(0.0..=1.0).contains(x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{what} is not a distribution")));
    }
    Ok(())
}

impl Hmm {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>) -> Result<Self> {
        let n = initial.len();
        if n < 2 {
            return Err(Error::InvalidArgument("an HMM needs at least two states".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        if transition.len() != n || emission.len() != n {
            return Err(Error::InvalidArgument(
                "need one transition and emission row per state".into(),
            ));
        }
        for row in &transition {
            if row.len() != n {
                return Err(Error::InvalidArgument("transition matrix is not square".into()));
            }
            check_distribution(row, "transition row")?;
        }
        for row in &emission {
            if row.len() != emission[0].len() {
                return Err(Error::InvalidArgument("emission rows differ in length".into()));
            }
            check_distribution(row, "emission row")?;
        }
        Ok(Hmm {
            initial,
            transition,
            emission,
        })
    }

    /// Uniform initial, transition and emission probabilities.
    pub fn uniform(n_states: usize, n_obs: usize) -> Result<Self> {
        let row = |k: usize| vec![1.0 / k as f64; k];
        Hmm::new(row(n_states), vec![row(n_states); n_states], vec![row(n_obs); n_states])
    }

    /// Rows drawn from a symmetric Dirichlet(1).
    pub fn random(n_states: usize, n_obs: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if n_obs == 0 {
            return Err(Error::InvalidArgument("need at least one observation value".into()));
        }
        let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
        let mut row = |k: usize| {
            let g: Vec<f64> = (0..k).map(|_| gamma.sample(&mut *rng)).collect();
            let s: f64 = g.iter().sum();
            let mut r: Vec<f64> = g.iter().map(|x| x / s).collect();
            // absorb rounding so rows sum to one exactly enough for validation
            let tail: f64 = r[..k - 1].iter().sum();
            r[k - 1] = (1.0 - tail).max(0.0);
            r
        };
        let initial = row(n_states);
        let transition = (0..n_states).map(|_| row(n_states)).collect();
        let emission = (0..n_states).map(|_| row(n_obs)).collect();
        Hmm::new(initial, transition, emission)
    }

    /// A fixed two-state, two-symbol model used by the enumeration checks.
    pub fn two_state_example() -> Self {
        Hmm::new(
            vec![0.6, 0.4],
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
        )
        .expect("valid tables")
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn num_obs(&self) -> usize {
        self.emission[0].len()
    }

    /// Hidden path and observations of length `steps`.
    pub fn simulate(&self, steps: usize, rng: &mut dyn RngCore) -> (Vec<usize>, Vec<usize>) {
        let mut hidden = Vec::with_capacity(steps);
        let mut obs = Vec::with_capacity(steps);
        for t in 0..steps {
            let z = if t == 0 {
                self.sample_initial(rng)
            } else {
                self.sample_transition(&hidden[t - 1], rng)
            };
            obs.push(sample_categorical(&self.emission[z], rng).expect("emission row has mass"));
            hidden.push(z);
        }
        (hidden, obs)
    }
}

fn log_entry(p: Option<&f64>) -> f64 {
    p.map_or(f64::NEG_INFINITY, |p| p.ln())
}

impl StateSpaceModel for Hmm {
    type State = usize;
    type Obs = usize;

    fn log_initial(&self, s: &usize) -> f64 {
        log_entry(self.initial.get(*s))
    }

    fn log_transition(&self, prev: &usize, next: &usize) -> f64 {
        log_entry(self.transition.get(*prev).and_then(|r| r.get(*next)))
    }

    fn log_observation(&self, s: &usize, x: &usize) -> f64 {
        log_entry(self.emission.get(*s).and_then(|r| r.get(*x)))
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> usize {
        sample_categorical(&self.initial, rng).expect("initial distribution has mass")
    }

    fn sample_transition(&self, prev: &usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(&self.transition[*prev], rng).expect("transition row has mass")
    }
}

impl FiniteStateSpace for Hmm {
    fn states(&self) -> Vec<usize> {
        (0..self.num_states()).collect()
    }
}

/// A seeded HMM together with data simulated from it.
#[derive(Debug, Clone)]
pub struct HmmFixture {
    pub model: Hmm,
    pub data: Dataset<usize>,
    /// The simulated hidden path.
    pub hidden: Vec<usize>,
    /// `log p(x*)` by the forward recursion.
    pub log_evidence: f64,
}

/// Random parameters and a simulated dataset, both determined by `seed`.
pub fn hmm_fixture(n_states: usize, n_obs: usize, steps: usize, seed: u64) -> Result<HmmFixture> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let mut rng = stream(seed, FIXTURE_TAG, 0);
    let model = Hmm::random(n_states, n_obs, &mut rng)?;
    let (hidden, obs) = model.simulate(steps, &mut rng);
    let data = Dataset::new(obs)?;
    let log_evidence = forward_log_evidence(&model, &data)?;
    Ok(HmmFixture {
        model,
        data,
        hidden,
        log_evidence,
    })
}

/// The shape used for the particle-filter profiles: 40 steps, 2 hidden
/// states, 3 observation symbols.
pub fn default_hmm_fixture(seed: u64) -> Result<HmmFixture> {
    hmm_fixture(2, 3, 40, seed)
}

/// [`Hmm::two_state_example`] with `steps` observations drawn from it.
pub fn two_state_fixture(steps: usize, seed: u64) -> Result<HmmFixture> {
    let model = Hmm::two_state_example();
    let mut rng = stream(seed, FIXTURE_TAG, 1);
    let (hidden, obs) = model.simulate(steps, &mut rng);
    let data = Dataset::new(obs)?;
    let log_evidence = forward_log_evidence(&model, &data)?;
    Ok(HmmFixture {
        model,
        data,
        hidden,
        log_evidence,
    })
}
