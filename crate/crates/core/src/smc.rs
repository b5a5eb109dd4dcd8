//! Particle filtering with conditional-SMC meta-inference.
//!
//! The filter resamples every step by drawing each ancestor independently
//! from the normalized previous weights, then draws the output index from
//! the final weights. The matching meta-inference is one conditional SMC
//! sweep with the retained path placed at an ancestry chosen uniformly from
//! the `K^T` possibilities. With these two programs the estimated weight
//! `p(z, x*) m(y; z) / q(y, z)` collapses to the filter's own evidence
//! estimate `Ẑ`, which is what [`pf_log_weight_estimate`] returns; the full
//! density route is kept for testing.
//!
//! SIR is the single-step special case with a prior proposal and gets its own
//! small implementation. FFBS provides exact posterior paths for finite
//! hidden Markov models.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::exact::{check_enumeration_size, EnumerableInference, EnumerableMeta, FiniteDistribution};
use crate::math::{log_mean_exp, logsumexp, normalize_log_weights, sample_log_categorical, LogCategorical};
use crate::program::{Dataset, EnumerableModel, InferenceProgram, MetaInferenceProgram, Model, ReferenceProgram};

/// `p(z_1) ∏ p(z_t | z_{t-1}) ∏ p(x_t | z_t)`. Observation `t` is
/// `data.observations()[t]`.
pub trait StateSpaceModel: Sync {
    type State: Clone + PartialEq + Send + Sync;
    type Obs: Sync;

    fn log_initial(&self, state: &Self::State) -> f64;

    fn log_transition(&self, prev: &Self::State, next: &Self::State) -> f64;

    fn log_observation(&self, state: &Self::State, obs: &Self::Obs) -> f64;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Self::State;

    fn sample_transition(&self, prev: &Self::State, rng: &mut dyn RngCore) -> Self::State;
}

/// A state-space model with a finite, listable state space.
pub trait FiniteStateSpace: StateSpaceModel {
    fn states(&self) -> Vec<Self::State>;
}

/// `log p(z_{1:T}, x_{1:T})`.
pub fn path_log_joint<Sm: StateSpaceModel>(model: &Sm, path: &[Sm::State], data: &Dataset<Sm::Obs>) -> f64 {
    if path.len() != data.len() {
        return f64::NEG_INFINITY;
    }
    let obs = data.observations();
    let mut lp = 0.0;
    for (t, z) in path.iter().enumerate() {
        lp += if t == 0 {
            model.log_initial(z)
        } else {
            model.log_transition(&path[t - 1], z)
        };
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp += model.log_observation(z, &obs[t]);
    }
    lp
}

/// A state-space model viewed as a [`Model`] over whole paths of fixed
/// length.
#[derive(Debug, Clone)]
pub struct PathModel<Sm> {
    pub ssm: Sm,
    pub steps: usize,
}

impl<Sm: StateSpaceModel> Model for PathModel<Sm> {
    type Latent = Vec<Sm::State>;
    type Obs = Sm::Obs;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<Sm::State> {
        let mut path = Vec::with_capacity(self.steps);
        let mut z = self.ssm.sample_initial(rng);
        for _ in 1..self.steps {
            let next = self.ssm.sample_transition(&z, rng);
            path.push(z);
            z = next;
        }
        path.push(z);
        path
    }

    fn log_prior(&self, z: &Vec<Sm::State>) -> f64 {
        if z.len() != self.steps || z.is_empty() {
            return f64::NEG_INFINITY;
        }
        let mut lp = self.ssm.log_initial(&z[0]);
        for w in z.windows(2) {
            lp += self.ssm.log_transition(&w[0], &w[1]);
        }
        lp
    }

    fn log_likelihood(&self, z: &Vec<Sm::State>, data: &Dataset<Sm::Obs>) -> f64 {
        if z.len() != data.len() {
            return f64::NEG_INFINITY;
        }
        z.iter()
            .zip(data.observations())
            .map(|(s, x)| self.ssm.log_observation(s, x))
            .sum()
    }
}

fn all_paths<S: Clone>(states: &[S], steps: usize) -> Result<Vec<Vec<S>>> {
    check_enumeration_size(crate::exact::checked_space_size(states.len(), steps))?;
    let mut paths: Vec<Vec<S>> = vec![Vec::new()];
    for _ in 0..steps {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                states.iter().map(move |s| {
                    let mut q = p.clone();
                    q.push(s.clone());
                    q
                })
            })
            .collect();
    }
    Ok(paths)
}

impl<Sm> EnumerableModel for PathModel<Sm>
where
    Sm: FiniteStateSpace,
    Sm::State: Ord,
{
    /// Every path; panics beyond the enumeration cap.
    fn enumerate_latents(&self) -> Vec<Vec<Sm::State>> {
        all_paths(&self.ssm.states(), self.steps).expect("path space exceeds the enumeration cap")
    }
}

/// Proposal family `M_1(u_1)`, `M_t(u_t ; u_{t-1})`. `prev` is `None` at the
/// first step.
pub trait SmcProposal<Sm: StateSpaceModel>: Sync {
    fn sample(&self, model: &Sm, prev: Option<&Sm::State>, obs: &Sm::Obs, rng: &mut dyn RngCore) -> Result<Sm::State>;

    fn log_density(&self, model: &Sm, prev: Option<&Sm::State>, next: &Sm::State, obs: &Sm::Obs) -> f64;
}

/// Propose from the model dynamics (bootstrap filter).
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorProposal;

impl<Sm: StateSpaceModel> SmcProposal<Sm> for PriorProposal {
    fn sample(&self, model: &Sm, prev: Option<&Sm::State>, _: &Sm::Obs, rng: &mut dyn RngCore) -> Result<Sm::State> {
        Ok(match prev {
            None => model.sample_initial(rng),
            Some(p) => model.sample_transition(p, rng),
        })
    }

    fn log_density(&self, model: &Sm, prev: Option<&Sm::State>, next: &Sm::State, _: &Sm::Obs) -> f64 {
        match prev {
            None => model.log_initial(next),
            Some(p) => model.log_transition(p, next),
        }
    }
}

/// Locally optimal proposal for finite state spaces:
/// `M_t(u ; u_{t-1}) ∝ p(u | u_{t-1}) p(x_t | u)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConditionalProposal;

impl ConditionalProposal {
    fn log_probs<Sm: FiniteStateSpace>(
        model: &Sm,
        prev: Option<&Sm::State>,
        obs: &Sm::Obs,
    ) -> (Vec<Sm::State>, Vec<f64>) {
        let states = model.states();
        let mut lw: Vec<f64> = states
            .iter()
            .map(|s| {
                let dyn_lp = match prev {
                    None => model.log_initial(s),
                    Some(p) => model.log_transition(p, s),
                };
                if dyn_lp == f64::NEG_INFINITY {
                    dyn_lp
                } else {
                    dyn_lp + model.log_observation(s, obs)
                }
            })
            .collect();
        if normalize_log_weights(&mut lw).is_none() {
            lw.iter_mut().for_each(|w| *w = f64::NEG_INFINITY);
        }
        (states, lw)
    }
}

impl<Sm: FiniteStateSpace> SmcProposal<Sm> for ConditionalProposal {
    fn sample(&self, model: &Sm, prev: Option<&Sm::State>, obs: &Sm::Obs, rng: &mut dyn RngCore) -> Result<Sm::State> {
        let (states, lw) = Self::log_probs(model, prev, obs);
        let i = sample_log_categorical(&lw, rng).ok_or_else(|| Error::support("conditional proposal has no mass"))?;
        Ok(states[i].clone())
    }

    fn log_density(&self, model: &Sm, prev: Option<&Sm::State>, next: &Sm::State, obs: &Sm::Obs) -> f64 {
        let (states, lw) = Self::log_probs(model, prev, obs);
        states
            .iter()
            .position(|s| s == next)
            .map_or(f64::NEG_INFINITY, |i| lw[i])
    }
}

/// Everything a particle filter or CSMC sweep decided.
///
/// Equality and ordering consider only the random choices (particles,
/// ancestors, final index); the remaining fields are derived from them.
#[derive(Debug, Clone)]
pub struct ParticleFilterHistory<S> {
    /// `particles[t][i]`.
    pub particles: Vec<Vec<S>>,
    /// `ancestors[t][i]`: index at step `t` of the parent of particle `i` at
    /// step `t + 1`.
    pub ancestors: Vec<Vec<usize>>,
    pub final_index: usize,
    /// `I_1..I_T` with `I_T = final_index` and `I_t = ancestors[t][I_{t+1}]`.
    pub ancestry: Vec<usize>,
    /// Unnormalized log weights `log w_t^i`.
    pub log_weights: Vec<Vec<f64>>,
    /// `Σ_t [logsumexp_i log w_t^i - log K]`.
    pub log_z_hat: f64,
}

impl<S: PartialEq> PartialEq for ParticleFilterHistory<S> {
    fn eq(&self, other: &Self) -> bool {
        self.particles == other.particles && self.ancestors == other.ancestors && self.final_index == other.final_index
    }
}

impl<S: Eq> Eq for ParticleFilterHistory<S> {}

impl<S: Ord> PartialOrd for ParticleFilterHistory<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Ord> Ord for ParticleFilterHistory<S> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.particles, &self.ancestors, self.final_index).cmp(&(
            &other.particles,
            &other.ancestors,
            other.final_index,
        ))
    }
}

fn trace_ancestry(ancestors: &[Vec<usize>], final_index: usize) -> Vec<usize> {
    let t_len = ancestors.len() + 1;
    let mut ancestry = vec![final_index; t_len];
    for t in (0..t_len - 1).rev() {
        ancestry[t] = ancestors[t][ancestry[t + 1]];
    }
    ancestry
}

impl<S: Clone> ParticleFilterHistory<S> {
    /// Number of particles `K`.
    pub fn num_particles(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    /// The path `u_t^{I_t}` selected by the ancestry.
    pub fn output(&self) -> Vec<S> {
        self.ancestry
            .iter()
            .enumerate()
            .map(|(t, &i)| self.particles[t][i].clone())
            .collect()
    }
}

/// Fields shared by the filter and its meta-inference.
pub struct ParticleFilter<'a, Sm: StateSpaceModel, P> {
    pub model: &'a Sm,
    pub data: &'a Dataset<Sm::Obs>,
    pub proposal: P,
    pub particles: usize,
}

impl<Sm: StateSpaceModel, P: Clone> Clone for ParticleFilter<'_, Sm, P> {
    fn clone(&self) -> Self {
        ParticleFilter {
            model: self.model,
            data: self.data,
            proposal: self.proposal.clone(),
            particles: self.particles,
        }
    }
}

impl<Sm: StateSpaceModel, P: Copy> Copy for ParticleFilter<'_, Sm, P> {}

/// Conditional-SMC meta-inference for a [`ParticleFilter`].
#[derive(Clone)]
pub struct CsmcMeta<'a, Sm: StateSpaceModel, P> {
    pub filter: ParticleFilter<'a, Sm, P>,
}

impl<'a, Sm: StateSpaceModel, P: SmcProposal<Sm>> ParticleFilter<'a, Sm, P> {
    pub fn new(model: &'a Sm, data: &'a Dataset<Sm::Obs>, proposal: P, particles: usize) -> Result<Self> {
        if particles == 0 {
            return Err(Error::InvalidArgument("need at least one particle".into()));
        }
        Ok(ParticleFilter {
            model,
            data,
            proposal,
            particles,
        })
    }

    pub fn meta(&self) -> CsmcMeta<'a, Sm, P>
    where
        P: Clone,
    {
        CsmcMeta { filter: self.clone() }
    }

    fn steps(&self) -> usize {
        self.data.len()
    }

    fn obs(&self, t: usize) -> &Sm::Obs {
        &self.data.observations()[t]
    }

    fn log_proposal(&self, t: usize, prev: Option<&Sm::State>, u: &Sm::State) -> f64 {
        self.proposal.log_density(self.model, prev, u, self.obs(t))
    }

    /// `log w_t = log p(u | prev) + log p(x_t | u) - log M_t(u ; prev)`.
    fn log_weight(&self, t: usize, prev: Option<&Sm::State>, u: &Sm::State) -> f64 {
        let dyn_lp = match prev {
            None => self.model.log_initial(u),
            Some(p) => self.model.log_transition(p, u),
        };
        if dyn_lp == f64::NEG_INFINITY {
            return dyn_lp;
        }
        let lm = self.log_proposal(t, prev, u);
        if lm == f64::NEG_INFINITY {
            return f64::NAN;
        }
        dyn_lp + self.model.log_observation(u, self.obs(t)) - lm
    }

    fn sample_proposal(&self, t: usize, prev: Option<&Sm::State>, rng: &mut dyn RngCore) -> Result<Sm::State> {
        self.proposal.sample(self.model, prev, self.obs(t), rng)
    }

    fn step_weights(&self, t: usize, particles: &[Vec<Sm::State>], ancestors: &[Vec<usize>]) -> Vec<f64> {
        particles[t]
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let prev = (t > 0).then(|| &particles[t - 1][ancestors[t - 1][i]]);
                self.log_weight(t, prev, u)
            })
            .collect()
    }

    /// Rebuilds the derived fields of a history from its random choices.
    pub fn history_from_choices(
        &self,
        particles: Vec<Vec<Sm::State>>,
        ancestors: Vec<Vec<usize>>,
        final_index: usize,
    ) -> Result<ParticleFilterHistory<Sm::State>> {
        self.check_shape(&particles, &ancestors, final_index)?;
        let log_weights: Vec<Vec<f64>> = (0..self.steps())
            .map(|t| self.step_weights(t, &particles, &ancestors))
            .collect();
        let log_z_hat = log_weights.iter().map(|w| log_mean_exp(w)).sum();
        Ok(ParticleFilterHistory {
            ancestry: trace_ancestry(&ancestors, final_index),
            particles,
            ancestors,
            final_index,
            log_weights,
            log_z_hat,
        })
    }

    fn check_shape(&self, particles: &[Vec<Sm::State>], ancestors: &[Vec<usize>], final_index: usize) -> Result<()> {
        let (t_len, k) = (self.steps(), self.particles);
        if particles.len() != t_len || particles.iter().any(|p| p.len() != k) {
            return Err(Error::InconsistentHistory("particle array has the wrong shape"));
        }
        if ancestors.len() + 1 != t_len || ancestors.iter().any(|a| a.len() != k || a.iter().any(|&i| i >= k)) {
            return Err(Error::InconsistentHistory("ancestor array has the wrong shape"));
        }
        if final_index >= k {
            return Err(Error::InconsistentHistory("final index out of range"));
        }
        Ok(())
    }

    /// Runs the filter.
    pub fn run_filter(&self, rng: &mut dyn RngCore) -> Result<(ParticleFilterHistory<Sm::State>, Vec<Sm::State>)> {
        let (t_len, k) = (self.steps(), self.particles);
        let mut particles: Vec<Vec<Sm::State>> = Vec::with_capacity(t_len);
        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
        let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut step = Vec::with_capacity(k);
            let mut parents = Vec::with_capacity(k);
            if t == 0 {
                for _ in 0..k {
                    step.push(self.sample_proposal(0, None, rng)?);
                }
            } else {
                let table = LogCategorical::new(&log_weights[t - 1]).ok_or(Error::AllWeightsZero(t))?;
                for _ in 0..k {
                    let a = table.sample(rng);
                    step.push(self.sample_proposal(t, Some(&particles[t - 1][a]), rng)?);
                    parents.push(a);
                }
                ancestors.push(parents);
            }
            particles.push(step);
            let w = self.step_weights(t, &particles, &ancestors);
            if w.iter().any(|x| x.is_nan()) {
                return Err(Error::support("proposal density is zero at its own sample"));
            }
            if logsumexp(&w) == f64::NEG_INFINITY {
                return Err(Error::AllWeightsZero(t + 1));
            }
            log_weights.push(w);
        }
        let final_index = sample_log_categorical(&log_weights[t_len - 1], rng).ok_or(Error::AllWeightsZero(t_len))?;
        let log_z_hat = log_weights.iter().map(|w| log_mean_exp(w)).sum();
        let history = ParticleFilterHistory {
            ancestry: trace_ancestry(&ancestors, final_index),
            particles,
            ancestors,
            final_index,
            log_weights,
            log_z_hat,
        };
        let z = history.output();
        Ok((history, z))
    }

    /// `log p(z, x*) + log m(y; z) - log q(y, z)` from the full densities.
    pub fn slow_log_weight(&self, history: &ParticleFilterHistory<Sm::State>, z: &[Sm::State]) -> Result<f64>
    where
        P: Clone,
    {
        let lp = path_log_joint(self.model, z, self.data);
        let lm = self.meta().log_meta_density(history, z)?;
        let lq = self.log_density(history, z)?;
        for (label, v) in [("log p(z, x*)", lp), ("log m(y; z)", lm), ("log q(y, z)", lq)] {
            if !v.is_finite() {
                return Err(Error::support(format!("{label} is {v}")));
            }
        }
        Ok(lp + lm - lq)
    }

    /// `log q(y, z; x*)`.
    pub fn log_density(&self, history: &ParticleFilterHistory<Sm::State>, z: &[Sm::State]) -> Result<f64> {
        let ParticleFilterHistory {
            particles,
            ancestors,
            final_index,
            ..
        } = history;
        self.check_shape(particles, ancestors, *final_index)?;
        let ancestry = trace_ancestry(ancestors, *final_index);
        if ancestry.iter().enumerate().any(|(t, &i)| particles[t][i] != z[t]) || z.len() != particles.len() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lq = 0.0;
        let mut prev_norm: Vec<f64> = Vec::new();
        for t in 0..self.steps() {
            for (i, u) in particles[t].iter().enumerate() {
                if t == 0 {
                    lq += self.log_proposal(0, None, u);
                } else {
                    let a = ancestors[t - 1][i];
                    lq += prev_norm[a] + self.log_proposal(t, Some(&particles[t - 1][a]), u);
                }
            }
            let mut w = self.step_weights(t, particles, ancestors);
            if normalize_log_weights(&mut w).is_none() {
                return Ok(f64::NEG_INFINITY);
            }
            prev_norm = w;
        }
        Ok(lq + prev_norm[*final_index])
    }
}

impl<'a, Sm: StateSpaceModel, P: SmcProposal<Sm> + Clone> CsmcMeta<'a, Sm, P> {
    /// One conditional SMC sweep retaining `z` along a uniformly drawn
    /// ancestry.
    pub fn run_conditional(&self, z: &[Sm::State], rng: &mut dyn RngCore) -> Result<ParticleFilterHistory<Sm::State>> {
        let f = &self.filter;
        let (t_len, k) = (f.steps(), f.particles);
        if z.len() != t_len {
            return Err(Error::InvalidArgument("path length does not match the data".into()));
        }
        let retained: Vec<usize> = (0..t_len).map(|_| rng.random_range(0..k)).collect();
        let mut particles: Vec<Vec<Sm::State>> = Vec::with_capacity(t_len);
        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
        let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut step = Vec::with_capacity(k);
            let mut parents = Vec::with_capacity(k);
            let table = if t > 0 {
                LogCategorical::new(&log_weights[t - 1])
            } else {
                None
            };
            for i in 0..k {
                if i == retained[t] {
                    step.push(z[t].clone());
                    if t > 0 {
                        parents.push(retained[t - 1]);
                    }
                } else if t == 0 {
                    step.push(f.sample_proposal(0, None, rng)?);
                } else {
                    let a = table.as_ref().ok_or(Error::AllWeightsZero(t))?.sample(rng);
                    step.push(f.sample_proposal(t, Some(&particles[t - 1][a]), rng)?);
                    parents.push(a);
                }
            }
            if t > 0 {
                ancestors.push(parents);
            }
            particles.push(step);
            let w = f.step_weights(t, &particles, &ancestors);
            if logsumexp(&w) == f64::NEG_INFINITY {
                return Err(Error::AllWeightsZero(t + 1));
            }
            log_weights.push(w);
        }
        let final_index = retained[t_len - 1];
        let log_z_hat = log_weights.iter().map(|w| log_mean_exp(w)).sum();
        Ok(ParticleFilterHistory {
            ancestry: retained,
            particles,
            ancestors,
            final_index,
            log_weights,
            log_z_hat,
        })
    }

    /// `log m(y; z, x*)`.
    pub fn log_meta_density(&self, history: &ParticleFilterHistory<Sm::State>, z: &[Sm::State]) -> Result<f64> {
        let f = &self.filter;
        let ParticleFilterHistory {
            particles,
            ancestors,
            final_index,
            ..
        } = history;
        f.check_shape(particles, ancestors, *final_index)?;
        let retained = trace_ancestry(ancestors, *final_index);
        if z.len() != particles.len() || retained.iter().enumerate().any(|(t, &i)| particles[t][i] != z[t]) {
            return Ok(f64::NEG_INFINITY);
        }
        let t_len = f.steps();
        let mut lm = -(t_len as f64) * (f.particles as f64).ln();
        let mut prev_norm: Vec<f64> = Vec::new();
        for t in 0..t_len {
            for (i, u) in particles[t].iter().enumerate() {
                if i == retained[t] {
                    continue;
                }
                if t == 0 {
                    lm += f.log_proposal(0, None, u);
                } else {
                    let a = ancestors[t - 1][i];
                    lm += prev_norm[a] + f.log_proposal(t, Some(&particles[t - 1][a]), u);
                }
            }
            let mut w = f.step_weights(t, particles, ancestors);
            if normalize_log_weights(&mut w).is_none() {
                return Ok(f64::NEG_INFINITY);
            }
            prev_norm = w;
        }
        Ok(lm)
    }
}

/// Runs the particle filter once.
pub fn run_particle_filter<Sm: StateSpaceModel, P: SmcProposal<Sm>>(
    filter: &ParticleFilter<'_, Sm, P>,
    rng: &mut dyn RngCore,
) -> Result<(ParticleFilterHistory<Sm::State>, Vec<Sm::State>)> {
    filter.run_filter(rng)
}

/// Runs conditional-SMC meta-inference once.
pub fn run_csmc_metainference<Sm: StateSpaceModel, P: SmcProposal<Sm> + Clone>(
    meta: &CsmcMeta<'_, Sm, P>,
    z: &[Sm::State],
    rng: &mut dyn RngCore,
) -> Result<ParticleFilterHistory<Sm::State>> {
    meta.run_conditional(z, rng)
}

/// The estimated weight of a filter or CSMC history: its stored `log Ẑ`,
/// after checking the history is internally consistent and selects `z`.
pub fn pf_log_weight_estimate<S: PartialEq>(history: &ParticleFilterHistory<S>, z: &[S]) -> Result<f64> {
    let t_len = history.particles.len();
    let k = history.particles.first().map_or(0, Vec::len);
    if t_len == 0 || k == 0 {
        return Err(Error::InconsistentHistory("empty history"));
    }
    if history.ancestors.len() + 1 != t_len
        || history.log_weights.len() != t_len
        || history.ancestry.len() != t_len
        || z.len() != t_len
    {
        return Err(Error::InconsistentHistory("arrays disagree on the number of steps"));
    }
    if history.final_index >= k || history.ancestry[t_len - 1] != history.final_index {
        return Err(Error::InconsistentHistory("ancestry does not end at the final index"));
    }
    for t in 0..t_len - 1 {
        let a = history.ancestors[t]
            .get(history.ancestry[t + 1])
            .ok_or(Error::InconsistentHistory("ancestor index out of range"))?;
        if *a != history.ancestry[t] {
            return Err(Error::InconsistentHistory("ancestry does not follow the ancestors"));
        }
    }
    for t in 0..t_len {
        if history.particles[t].get(history.ancestry[t]) != Some(&z[t]) {
            return Err(Error::InconsistentHistory("output is not the selected path"));
        }
    }
    let recomputed: f64 = history.log_weights.iter().map(|w| log_mean_exp(w)).sum();
    if !(recomputed == history.log_z_hat) {
        return Err(Error::InconsistentHistory("stored log Ẑ disagrees with the weights"));
    }
    if !history.log_z_hat.is_finite() {
        return Err(Error::support(format!("log Ẑ is {}", history.log_z_hat)));
    }
    Ok(history.log_z_hat)
}

impl<'a, Sm: StateSpaceModel, P: SmcProposal<Sm>> InferenceProgram for ParticleFilter<'a, Sm, P> {
    type Latent = Vec<Sm::State>;
    type History = ParticleFilterHistory<Sm::State>;

    fn run(&self, rng: &mut dyn RngCore) -> Result<(Self::History, Vec<Sm::State>)> {
        self.run_filter(rng)
    }

    fn log_joint_density(&self, history: &Self::History, z: &Vec<Sm::State>) -> Result<f64> {
        self.log_density(history, z)
    }
}

impl<'a, Sm: StateSpaceModel, P: SmcProposal<Sm> + Clone> MetaInferenceProgram for CsmcMeta<'a, Sm, P> {
    type Latent = Vec<Sm::State>;
    type History = ParticleFilterHistory<Sm::State>;

    fn run(&self, z: &Vec<Sm::State>, rng: &mut dyn RngCore) -> Result<Self::History> {
        self.run_conditional(z, rng)
    }

    fn log_density(&self, history: &Self::History, z: &Vec<Sm::State>) -> Result<f64> {
        self.log_meta_density(history, z)
    }
}

/// All `K`-tuples over `options(i)`.
fn tuples<T: Clone>(k: usize, options: impl Fn(usize) -> Vec<T>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for i in 0..k {
        let opts = options(i);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o.clone());
                    p
                })
            })
            .collect();
    }
    out
}

impl<'a, Sm, P> ParticleFilter<'a, Sm, P>
where
    Sm: FiniteStateSpace,
    Sm::State: Ord,
    P: SmcProposal<Sm>,
{
    fn proposal_support(&self, t: usize, prev: Option<&Sm::State>) -> Vec<Sm::State> {
        self.model
            .states()
            .into_iter()
            .filter(|s| self.log_proposal(t, prev, s) > f64::NEG_INFINITY)
            .collect()
    }

    /// Enumerates `(particles, ancestors)` prefixes step by step. At each
    /// step, slots listed in `fixed` keep the given `(parent, state)`.
    fn enumerate_choices(
        &self,
        fixed: Option<(&[usize], &[Sm::State])>,
    ) -> Result<Vec<(Vec<Vec<Sm::State>>, Vec<Vec<usize>>)>> {
        let k = self.particles;
        let mut partial: Vec<(Vec<Vec<Sm::State>>, Vec<Vec<usize>>)> = vec![(Vec::new(), Vec::new())];
        for t in 0..self.steps() {
            let mut next = Vec::new();
            for (particles, ancestors) in &partial {
                let norm = if t == 0 {
                    Vec::new()
                } else {
                    let mut w = self.step_weights(t - 1, particles, ancestors);
                    if normalize_log_weights(&mut w).is_none() {
                        continue;
                    }
                    w
                };
                let slot_options = |i: usize| -> Vec<(usize, Sm::State)> {
                    if let Some((retained, z)) = fixed {
                        if i == retained[t] {
                            let parent = if t == 0 { 0 } else { retained[t - 1] };
                            return vec![(parent, z[t].clone())];
                        }
                    }
                    if t == 0 {
                        self.proposal_support(0, None).into_iter().map(|s| (0, s)).collect()
                    } else {
                        (0..k)
                            .filter(|&a| norm[a] > f64::NEG_INFINITY)
                            .flat_map(|a| {
                                self.proposal_support(t, Some(&particles[t - 1][a]))
                                    .into_iter()
                                    .map(move |s| (a, s))
                            })
                            .collect()
                    }
                };
                for choice in tuples(k, slot_options) {
                    let (parents, states): (Vec<usize>, Vec<Sm::State>) = choice.into_iter().unzip();
                    let mut p = particles.clone();
                    p.push(states);
                    let mut a = ancestors.clone();
                    if t > 0 {
                        a.push(parents);
                    }
                    next.push((p, a));
                }
                check_enumeration_size(next.len())?;
            }
            partial = next;
        }
        Ok(partial)
    }
}

impl<'a, Sm, P> EnumerableInference for ParticleFilter<'a, Sm, P>
where
    Sm: FiniteStateSpace,
    Sm::State: Ord,
    P: SmcProposal<Sm>,
{
    fn enumerate_joint(&self) -> Result<Vec<(ParticleFilterHistory<Sm::State>, Vec<Sm::State>)>> {
        let mut out = Vec::new();
        for (particles, ancestors) in self.enumerate_choices(None)? {
            for k in 0..self.particles {
                let h = self.history_from_choices(particles.clone(), ancestors.clone(), k)?;
                if h.log_weights.last().expect("T ≥ 1")[k] == f64::NEG_INFINITY {
                    continue;
                }
                let z = h.output();
                out.push((h, z));
            }
            check_enumeration_size(out.len())?;
        }
        Ok(out)
    }
}

impl<'a, Sm, P> EnumerableMeta for CsmcMeta<'a, Sm, P>
where
    Sm: FiniteStateSpace,
    Sm::State: Ord,
    P: SmcProposal<Sm> + Clone,
{
    fn enumerate_histories(&self, z: &Vec<Sm::State>) -> Result<Vec<ParticleFilterHistory<Sm::State>>> {
        let f = &self.filter;
        let t_len = f.steps();
        let mut out = Vec::new();
        for retained in all_paths(&(0..f.particles).collect::<Vec<_>>(), t_len)? {
            for (particles, ancestors) in f.enumerate_choices(Some((&retained, z)))? {
                out.push(f.history_from_choices(particles, ancestors, retained[t_len - 1])?);
            }
            check_enumeration_size(out.len())?;
        }
        Ok(out)
    }
}

/// Likelihood-weighting SIR: `K` prior draws weighted by the likelihood,
/// one returned in proportion to its weight.
pub struct Sir<'a, M: Model> {
    pub model: &'a M,
    pub data: &'a Dataset<M::Obs>,
    pub particles: usize,
}

impl<M: Model> Clone for Sir<'_, M> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<M: Model> Copy for Sir<'_, M> {}

/// Particles and the returned index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SirHistory<Z> {
    pub particles: Vec<Z>,
    pub index: usize,
}

/// SIR meta-inference: `z` goes into a uniformly chosen slot, the others are
/// fresh prior draws.
#[derive(Clone, Copy)]
pub struct SirMeta<'a, M: Model> {
    pub sir: Sir<'a, M>,
}

impl<'a, M: Model> Sir<'a, M>
where
    M::Latent: PartialEq,
{
    pub fn new(model: &'a M, data: &'a Dataset<M::Obs>, particles: usize) -> Result<Self> {
        if particles == 0 {
            return Err(Error::InvalidArgument("need at least one particle".into()));
        }
        Ok(Sir { model, data, particles })
    }

    pub fn meta(&self) -> SirMeta<'a, M> {
        SirMeta { sir: *self }
    }

    fn log_likelihoods(&self, particles: &[M::Latent]) -> Vec<f64> {
        particles
            .iter()
            .map(|u| self.model.log_likelihood(u, self.data))
            .collect()
    }

    /// `log((1/K) Σ_i p(x* | u_i))`, the closed-form weight.
    pub fn log_weight(&self, history: &SirHistory<M::Latent>, z: &M::Latent) -> Result<f64> {
        if history.particles.len() != self.particles || history.particles.get(history.index) != Some(z) {
            return Err(Error::InconsistentHistory("SIR output is not the selected particle"));
        }
        let lw = log_mean_exp(&self.log_likelihoods(&history.particles));
        if lw.is_finite() {
            Ok(lw)
        } else {
            Err(Error::support(format!("SIR weight is {lw}")))
        }
    }
}

/// Runs SIR once.
pub fn run_sir<M: Model>(sir: &Sir<'_, M>, rng: &mut dyn RngCore) -> Result<(SirHistory<M::Latent>, M::Latent)>
where
    M::Latent: PartialEq,
{
    let particles: Vec<M::Latent> = (0..sir.particles).map(|_| sir.model.sample_prior(rng)).collect();
    let lw = sir.log_likelihoods(&particles);
    let index = sample_log_categorical(&lw, rng).ok_or(Error::AllWeightsZero(1))?;
    let z = particles[index].clone();
    Ok((SirHistory { particles, index }, z))
}

impl<'a, M: Model> InferenceProgram for Sir<'a, M>
where
    M::Latent: PartialEq,
{
    type Latent = M::Latent;
    type History = SirHistory<M::Latent>;

    fn run(&self, rng: &mut dyn RngCore) -> Result<(Self::History, M::Latent)> {
        run_sir(self, rng)
    }

    /// `Σ_i log p(u_i) + log w̄_k`, with `z = u_k`.
    fn log_joint_density(&self, history: &Self::History, z: &M::Latent) -> Result<f64> {
        if history.particles.len() != self.particles || history.particles.get(history.index) != Some(z) {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lw = self.log_likelihoods(&history.particles);
        if normalize_log_weights(&mut lw).is_none() {
            return Ok(f64::NEG_INFINITY);
        }
        let prior: f64 = history.particles.iter().map(|u| self.model.log_prior(u)).sum();
        Ok(prior + lw[history.index])
    }
}

impl<'a, M: Model> MetaInferenceProgram for SirMeta<'a, M>
where
    M::Latent: PartialEq,
{
    type Latent = M::Latent;
    type History = SirHistory<M::Latent>;

    fn run(&self, z: &M::Latent, rng: &mut dyn RngCore) -> Result<Self::History> {
        let k = self.sir.particles;
        let index = rng.random_range(0..k);
        let particles = (0..k)
            .map(|i| {
                if i == index {
                    z.clone()
                } else {
                    self.sir.model.sample_prior(rng)
                }
            })
            .collect();
        Ok(SirHistory { particles, index })
    }

    /// `-log K + Σ_{i ≠ k} log p(u_i)`.
    fn log_density(&self, history: &Self::History, z: &M::Latent) -> Result<f64> {
        if history.particles.len() != self.sir.particles || history.particles.get(history.index) != Some(z) {
            return Ok(f64::NEG_INFINITY);
        }
        let others: f64 = history
            .particles
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != history.index)
            .map(|(_, u)| self.sir.model.log_prior(u))
            .sum();
        Ok(others - (self.sir.particles as f64).ln())
    }
}

impl<'a, M> EnumerableInference for Sir<'a, M>
where
    M: EnumerableModel,
    M::Latent: Ord,
{
    fn enumerate_joint(&self) -> Result<Vec<(SirHistory<M::Latent>, M::Latent)>> {
        let latents = self.model.enumerate_latents();
        check_enumeration_size(crate::exact::checked_space_size(latents.len(), self.particles))?;
        let mut out = Vec::new();
        for particles in tuples(self.particles, |_| latents.clone()) {
            for index in 0..self.particles {
                let z = particles[index].clone();
                out.push((
                    SirHistory {
                        particles: particles.clone(),
                        index,
                    },
                    z,
                ));
            }
        }
        Ok(out)
    }
}

impl<'a, M> EnumerableMeta for SirMeta<'a, M>
where
    M: EnumerableModel,
    M::Latent: Ord,
{
    fn enumerate_histories(&self, z: &M::Latent) -> Result<Vec<SirHistory<M::Latent>>> {
        let latents = self.sir.model.enumerate_latents();
        let k = self.sir.particles;
        check_enumeration_size(crate::exact::checked_space_size(latents.len(), k))?;
        let mut out = Vec::new();
        for index in 0..k {
            for particles in tuples(k, |i| if i == index { vec![z.clone()] } else { latents.clone() }) {
                out.push(SirHistory { particles, index });
            }
        }
        Ok(out)
    }
}

/// Log-space forward filter of a finite state-space model.
#[derive(Debug, Clone)]
pub struct ForwardFilter<S> {
    pub states: Vec<S>,
    /// `log p(z_t = s, x_{1:t})`, indexed `[t][state]`.
    pub log_alpha: Vec<Vec<f64>>,
    pub log_evidence: f64,
}

pub fn forward_filter<Sm: FiniteStateSpace>(model: &Sm, data: &Dataset<Sm::Obs>) -> Result<ForwardFilter<Sm::State>> {
    let states = model.states();
    let obs = data.observations();
    let mut log_alpha: Vec<Vec<f64>> = Vec::with_capacity(obs.len());
    for (t, x) in obs.iter().enumerate() {
        let row: Vec<f64> = states
            .iter()
            .map(|s| {
                let prior = if t == 0 {
                    model.log_initial(s)
                } else {
                    let terms: Vec<f64> = states
                        .iter()
                        .zip(&log_alpha[t - 1])
                        .map(|(p, la)| la + model.log_transition(p, s))
                        .collect();
                    logsumexp(&terms)
                };
                if prior == f64::NEG_INFINITY {
                    prior
                } else {
                    prior + model.log_observation(s, x)
                }
            })
            .collect();
        log_alpha.push(row);
    }
    let log_evidence = logsumexp(log_alpha.last().expect("dataset is non-empty"));
    if log_evidence == f64::NEG_INFINITY {
        return Err(Error::ZeroEvidence);
    }
    Ok(ForwardFilter {
        states,
        log_alpha,
        log_evidence,
    })
}

/// Exact `log p(x*)` by the forward recursion.
pub fn forward_log_evidence<Sm: FiniteStateSpace>(model: &Sm, data: &Dataset<Sm::Obs>) -> Result<f64> {
    Ok(forward_filter(model, data)?.log_evidence)
}

fn backward_sample<Sm: FiniteStateSpace>(
    model: &Sm,
    filter: &ForwardFilter<Sm::State>,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sm::State>> {
    let t_len = filter.log_alpha.len();
    let mut idx = vec![0usize; t_len];
    idx[t_len - 1] = sample_log_categorical(&filter.log_alpha[t_len - 1], rng).ok_or(Error::ZeroEvidence)?;
    for t in (0..t_len - 1).rev() {
        let next = &filter.states[idx[t + 1]];
        let lw: Vec<f64> = filter
            .states
            .iter()
            .zip(&filter.log_alpha[t])
            .map(|(s, la)| la + model.log_transition(s, next))
            .collect();
        idx[t] = sample_log_categorical(&lw, rng).ok_or(Error::ZeroEvidence)?;
    }
    Ok(idx.into_iter().map(|i| filter.states[i].clone()).collect())
}

/// One exact posterior path by forward filtering, backward sampling.
pub fn ffbs_sample<Sm: FiniteStateSpace>(
    model: &Sm,
    data: &Dataset<Sm::Obs>,
    rng: &mut dyn RngCore,
) -> Result<Vec<Sm::State>> {
    backward_sample(model, &forward_filter(model, data)?, rng)
}

/// FFBS as an oracle reference, with the forward pass done once.
#[derive(Debug, Clone)]
pub struct FfbsReference<'a, Sm: FiniteStateSpace> {
    model: &'a Sm,
    filter: ForwardFilter<Sm::State>,
}

impl<'a, Sm: FiniteStateSpace> FfbsReference<'a, Sm> {
    pub fn new(model: &'a Sm, data: &Dataset<Sm::Obs>) -> Result<Self> {
        Ok(FfbsReference {
            model,
            filter: forward_filter(model, data)?,
        })
    }

    pub fn log_evidence(&self) -> f64 {
        self.filter.log_evidence
    }
}

impl<'a, Sm: FiniteStateSpace> ReferenceProgram for FfbsReference<'a, Sm>
where
    Sm::State: Send,
    ForwardFilter<Sm::State>: Sync,
{
    type Latent = Vec<Sm::State>;

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<Sm::State>> {
        backward_sample(self.model, &self.filter, rng)
    }

    fn is_oracle(&self) -> bool {
        true
    }
}

/// Exact FFBS path distribution, computed from the backward-sampling
/// probabilities rather than from the joint.
pub fn ffbs_path_distribution<Sm>(model: &Sm, data: &Dataset<Sm::Obs>) -> Result<FiniteDistribution<Vec<Sm::State>>>
where
    Sm: FiniteStateSpace,
    Sm::State: Ord,
{
    let filter = forward_filter(model, data)?;
    let t_len = filter.log_alpha.len();
    let n = filter.states.len();
    let mut out = Vec::new();
    for path in all_paths(&(0..n).collect::<Vec<_>>(), t_len)? {
        let mut lp = filter.log_alpha[t_len - 1][path[t_len - 1]] - filter.log_evidence;
        for t in (0..t_len - 1).rev() {
            let next = &filter.states[path[t + 1]];
            let lw: Vec<f64> = filter
                .states
                .iter()
                .zip(&filter.log_alpha[t])
                .map(|(s, la)| la + model.log_transition(s, next))
                .collect();
            lp += lw[path[t]] - logsumexp(&lw);
        }
        out.push((path.into_iter().map(|i| filter.states[i].clone()).collect(), lp));
    }
    FiniteDistribution::from_normalized(out)
}
