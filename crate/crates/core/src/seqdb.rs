//! Sequential detailed-balance inference (annealed importance sampling with
//! a single particle) and its reversed-chain meta-inference.
//!
//! Inference draws `u_0 ~ p_0`, then `u_t ~ k_t(· ; u_{t-1})` for
//! `t = 1..T-1` and returns `z ~ k_T(· ; u_{T-1})`. The history is the chain
//! of intermediate states `u_0..u_{T-1}`; accept/reject decisions inside the
//! kernels are not recorded. Meta-inference runs the time-reversed kernels
//! backwards from `z`, and the estimated weight telescopes to
//! `Σ_t [log p̃_{t+1}(u_t) - log p̃_t(u_t)]`.
//!
//! The state-extension variant grows the state by a block `v_t` before each
//! kernel, with its own weight formula.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::exact::{
    check_enumeration_size, exact_symmetrized_kl, EnumerableInference, EnumerableMeta, FiniteDistribution,
};
use crate::kernels::{same_target, target_fn, SharedKernel, SharedTarget, State};
use crate::program::{
    AssessableInference, Dataset, InferenceProgram, MetaInferenceProgram, PriorSampler, SequentialModel,
};

/// Normalized initial distribution `p_0`: a sampler with its exact density.
pub type SharedInitial<S> = Arc<dyn AssessableInference<Latent = S> + Send>;

/// `p_0` followed by unnormalized targets `p̃_1..p̃_T`, where `p̃_T` is the
/// model joint `log p(z, x*)`.
#[derive(Clone)]
pub struct TargetSequence<S> {
    initial: SharedInitial<S>,
    targets: Vec<SharedTarget<S>>,
    support: Option<Vec<S>>,
}

impl<S: State> TargetSequence<S> {
    /// Needs at least one target after the initial distribution.
    pub fn new(initial: SharedInitial<S>, targets: Vec<SharedTarget<S>>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument(
                "a target sequence needs at least one target after p_0".into(),
            ));
        }
        Ok(TargetSequence {
            initial,
            targets,
            support: None,
        })
    }

    /// Declares a finite state space covering every target's support, which
    /// enables the exact oracles.
    pub fn with_support(mut self, support: Vec<S>) -> Self {
        self.support = Some(support);
        self
    }

    /// Geometric bridge `log p̃_t = (1 - β_t) log p_0 + β_t log p̃_final`
    /// with `β_t = t / steps`.
    pub fn geometric_bridge(initial: SharedInitial<S>, final_target: SharedTarget<S>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("bridge needs at least one step".into()));
        }
        let mut targets = Vec::with_capacity(steps);
        for t in 1..steps {
            let beta = t as f64 / steps as f64;
            let p0 = Arc::clone(&initial);
            let pt = Arc::clone(&final_target);
            targets.push(target_fn(move |s: &S| {
                let a = p0.log_density(s);
                let b = pt.log_density(s);
                if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (1.0 - beta) * a + beta * b
                }
            }));
        }
        targets.push(final_target);
        Self::new(initial, targets)
    }

    /// Number of kernels `T`.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn initial(&self) -> &SharedInitial<S> {
        &self.initial
    }

    /// `p̃_t` for `t = 1..=T`.
    pub fn target(&self, t: usize) -> &SharedTarget<S> {
        &self.targets[t - 1]
    }

    pub fn targets(&self) -> &[SharedTarget<S>] {
        &self.targets
    }

    pub fn support(&self) -> Option<&[S]> {
        self.support.as_deref()
    }

    /// `log p̃_t(u)` with `p̃_0` the initial density.
    pub fn log_target(&self, t: usize, u: &S) -> f64 {
        if t == 0 {
            self.initial.log_density(u)
        } else {
            self.targets[t - 1].log_density(u)
        }
    }
}

impl<S: State + Ord> TargetSequence<S> {
    /// Normalized `p_t` over the declared support.
    pub fn normalized(&self, t: usize) -> Result<FiniteDistribution<S>> {
        let support = self
            .support
            .as_ref()
            .ok_or(Error::DensityUnavailable("target sequence without declared support"))?;
        check_enumeration_size(support.len())?;
        FiniteDistribution::from_log_weights(support.iter().map(|s| (s.clone(), self.log_target(t, s))))
    }
}

/// Partial posteriors `p̃_t(z) = log p(z) + Σ_{i ≤ t} log p(x*_i | z)` with
/// observations added in the dataset's presentation order. `p̃_0` is the
/// prior and `p̃_T` is exactly `model.log_joint`.
pub fn sequential_observation_targets<M>(model: Arc<M>, data: Arc<Dataset<M::Obs>>) -> Result<TargetSequence<M::Latent>>
where
    M: SequentialModel + Send + 'static,
    M::Latent: State,
    M::Obs: Send + 'static,
{
    let order: Vec<usize> = data.ordered_indices().collect();
    let mut targets = Vec::with_capacity(order.len());
    for t in 1..order.len() {
        let prefix = order[..t].to_vec();
        let m = Arc::clone(&model);
        let d = Arc::clone(&data);
        targets.push(target_fn(move |z: &M::Latent| {
            let mut lp = m.log_prior(z);
            if lp == f64::NEG_INFINITY {
                return lp;
            }
            for &i in &prefix {
                lp += m.log_likelihood_at(z, &d, i);
            }
            lp
        }));
    }
    let m = Arc::clone(&model);
    let d = Arc::clone(&data);
    targets.push(target_fn(move |z: &M::Latent| m.log_joint(z, &d)));
    TargetSequence::new(Arc::new(PriorSampler(model)), targets)
}

/// `Σ_t symKL(p_t, p_{t+1})` over the declared support: the divergence that
/// perfectly mixing kernels would attain.
pub fn asymptotic_gap<S: State + Ord>(targets: &TargetSequence<S>) -> Result<f64> {
    let mut gap = 0.0;
    let mut prev = targets.normalized(0)?;
    for t in 1..=targets.len() {
        let next = targets.normalized(t)?;
        gap += exact_symmetrized_kl(&prev, &next)?;
        prev = next;
    }
    Ok(gap)
}

/// Intermediate states `u_0..u_{T-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeqDbHistory<S> {
    pub states: Vec<S>,
}

fn check_pairing<S: State>(targets: &TargetSequence<S>, kernels: &[SharedKernel<S>]) -> Result<()> {
    if kernels.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} kernels for {} targets",
            kernels.len(),
            targets.len()
        )));
    }
    for (index, k) in kernels.iter().enumerate() {
        if !same_target(k.target(), &targets.targets[index]) {
            return Err(Error::TargetMismatch { index });
        }
    }
    Ok(())
}

/// The sequential detailed-balance inference program.
#[derive(Clone)]
pub struct SeqDbInference<S> {
    targets: TargetSequence<S>,
    kernels: Vec<SharedKernel<S>>,
}

impl<S: State> SeqDbInference<S> {
    /// `kernels[t - 1]` must declare `targets.target(t)` as its target.
    pub fn new(targets: TargetSequence<S>, kernels: Vec<SharedKernel<S>>) -> Result<Self> {
        check_pairing(&targets, &kernels)?;
        Ok(SeqDbInference { targets, kernels })
    }

    pub fn targets(&self) -> &TargetSequence<S> {
        &self.targets
    }

    pub fn kernels(&self) -> &[SharedKernel<S>] {
        &self.kernels
    }

    /// The matching reversed-chain meta-inference program.
    pub fn meta(&self) -> SeqDbMeta<S> {
        SeqDbMeta {
            targets: self.targets.clone(),
            reversed: self.kernels.iter().map(|k| Arc::clone(k).reversed()).collect(),
        }
    }

    /// The closed-form weight for a history of this program.
    pub fn log_weight(&self, history: &SeqDbHistory<S>) -> Result<f64> {
        ais_log_weight(&self.targets, history)
    }
}

/// Runs the inference program once.
pub fn run_seqdb_inference<S: State>(
    program: &SeqDbInference<S>,
    rng: &mut dyn RngCore,
) -> Result<(SeqDbHistory<S>, S)> {
    let mut states = Vec::with_capacity(program.kernels.len());
    let mut u = program.targets.initial.sample(rng);
    for k in &program.kernels {
        let next = k.step(&u, rng)?;
        states.push(u);
        u = next;
    }
    Ok((SeqDbHistory { states }, u))
}

impl<S: State> InferenceProgram for SeqDbInference<S> {
    type Latent = S;
    type History = SeqDbHistory<S>;

    fn run(&self, rng: &mut dyn RngCore) -> Result<(SeqDbHistory<S>, S)> {
        run_seqdb_inference(self, rng)
    }

    /// `log p_0(u_0) + Σ_{t=1}^{T-1} log k_t(u_t ; u_{t-1}) + log k_T(z ; u_{T-1})`.
    fn log_joint_density(&self, history: &SeqDbHistory<S>, z: &S) -> Result<f64> {
        let states = &history.states;
        if states.len() != self.kernels.len() {
            return Err(Error::InvalidArgument("history length does not match T".into()));
        }
        let mut lq = self.targets.initial.log_density(&states[0]);
        for (t, k) in self.kernels.iter().enumerate() {
            let to = states.get(t + 1).unwrap_or(z);
            lq += k.transition_log_prob(&states[t], to)?;
        }
        Ok(lq)
    }
}

/// Reversed-chain meta-inference: `u_{T-1} ~ k̃_T(· ; z)`, then
/// `u_t ~ k̃_{t+1}(· ; u_{t+1})` down to `u_0`, where `k̃` is the time
/// reversal (the kernel itself under detailed balance).
#[derive(Clone)]
pub struct SeqDbMeta<S> {
    targets: TargetSequence<S>,
    reversed: Vec<SharedKernel<S>>,
}

impl<S: State> SeqDbMeta<S> {
    pub fn targets(&self) -> &TargetSequence<S> {
        &self.targets
    }

    pub fn new(targets: TargetSequence<S>, kernels: Vec<SharedKernel<S>>) -> Result<Self> {
        Ok(SeqDbInference::new(targets, kernels)?.meta())
    }
}

/// Runs the meta-inference program from output `z`.
pub fn run_seqdb_metainference<S: State>(meta: &SeqDbMeta<S>, z: &S, rng: &mut dyn RngCore) -> Result<SeqDbHistory<S>> {
    let t_len = meta.reversed.len();
    let mut states = vec![z.clone(); t_len];
    let mut u = z.clone();
    for t in (0..t_len).rev() {
        u = meta.reversed[t].step(&u, rng)?;
        states[t] = u.clone();
    }
    Ok(SeqDbHistory { states })
}

impl<S: State> MetaInferenceProgram for SeqDbMeta<S> {
    type Latent = S;
    type History = SeqDbHistory<S>;

    fn run(&self, z: &S, rng: &mut dyn RngCore) -> Result<SeqDbHistory<S>> {
        run_seqdb_metainference(self, z, rng)
    }

    fn log_density(&self, history: &SeqDbHistory<S>, z: &S) -> Result<f64> {
        let states = &history.states;
        if states.len() != self.reversed.len() {
            return Err(Error::InvalidArgument("history length does not match T".into()));
        }
        let mut lm = 0.0;
        for (t, k) in self.reversed.iter().enumerate() {
            let from = states.get(t + 1).unwrap_or(z);
            lm += k.transition_log_prob(from, &states[t])?;
        }
        Ok(lm)
    }
}

/// `Σ_{t=0}^{T-1} [log p̃_{t+1}(u_t) - log p̃_t(u_t)]`.
pub fn ais_log_weight<S: State>(targets: &TargetSequence<S>, history: &SeqDbHistory<S>) -> Result<f64> {
    if history.states.len() != targets.len() {
        return Err(Error::InvalidArgument("history length does not match T".into()));
    }
    let mut lw = 0.0;
    for (t, u) in history.states.iter().enumerate() {
        let num = targets.log_target(t + 1, u);
        let den = targets.log_target(t, u);
        if !num.is_finite() || !den.is_finite() {
            return Err(Error::support(format!(
                "intermediate state {t} has log targets {num} / {den}"
            )));
        }
        lw += num - den;
    }
    Ok(lw)
}

impl<S: State + Ord> EnumerableInference for SeqDbInference<S> {
    fn enumerate_joint(&self) -> Result<Vec<(SeqDbHistory<S>, S)>> {
        let support = self
            .targets
            .support()
            .ok_or(Error::DensityUnavailable("target sequence without declared support"))?;
        let mut paths: Vec<Vec<S>> = support
            .iter()
            .filter(|u| self.targets.initial.log_density(u) > f64::NEG_INFINITY)
            .map(|u| vec![u.clone()])
            .collect();
        for k in &self.kernels {
            let mut next = Vec::new();
            for path in &paths {
                for (u, _) in k.transition_row(path.last().expect("non-empty"))? {
                    let mut p = path.clone();
                    p.push(u);
                    next.push(p);
                }
            }
            check_enumeration_size(next.len())?;
            paths = next;
        }
        Ok(paths
            .into_iter()
            .map(|mut p| {
                let z = p.pop().expect("non-empty");
                (SeqDbHistory { states: p }, z)
            })
            .collect())
    }
}

impl<S: State + Ord> EnumerableMeta for SeqDbMeta<S> {
    fn enumerate_histories(&self, z: &S) -> Result<Vec<SeqDbHistory<S>>> {
        // built from z downwards, then reversed into u_0..u_{T-1} order
        let mut paths: Vec<Vec<S>> = vec![vec![z.clone()]];
        for k in self.reversed.iter().rev() {
            let mut next = Vec::new();
            for path in &paths {
                for (u, _) in k.transition_row(path.last().expect("non-empty"))? {
                    let mut p = path.clone();
                    p.push(u);
                    next.push(p);
                }
            }
            check_enumeration_size(next.len())?;
            paths = next;
        }
        Ok(paths
            .into_iter()
            .map(|mut p| {
                p.remove(0);
                p.reverse();
                SeqDbHistory { states: p }
            })
            .collect())
    }
}

/// A sampler for the block `v_t` appended to the state before kernel `t`,
/// conditioned on the current state `u_{t-1}` (empty for `t = 1`).
pub trait Extension<V>: Send + Sync {
    fn sample(&self, prefix: &[V], rng: &mut dyn RngCore) -> Vec<V>;

    /// `log q(v | prefix)`; an empty block has log density 0.
    fn log_density(&self, prefix: &[V], block: &[V]) -> f64;

    /// Every block with positive density, when finite.
    fn support(&self, _prefix: &[V]) -> Option<Vec<Vec<V>>> {
        None
    }
}

/// Adds nothing.
pub struct NoExtension;

impl<V> Extension<V> for NoExtension {
    fn sample(&self, _: &[V], _: &mut dyn RngCore) -> Vec<V> {
        Vec::new()
    }

    fn log_density(&self, _: &[V], block: &[V]) -> f64 {
        if block.is_empty() {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    fn support(&self, _: &[V]) -> Option<Vec<Vec<V>>> {
        Some(vec![Vec::new()])
    }
}

/// Appends one value drawn independently of the prefix from a finite
/// distribution.
pub struct IndependentBlock<V: Ord> {
    pub distribution: FiniteDistribution<V>,
}

impl<V: State + Ord> Extension<V> for IndependentBlock<V> {
    fn sample(&self, _: &[V], rng: &mut dyn RngCore) -> Vec<V> {
        vec![self.distribution.sample(rng)]
    }

    fn log_density(&self, _: &[V], block: &[V]) -> f64 {
        match block {
            [v] => self.distribution.log_prob(v),
            _ => f64::NEG_INFINITY,
        }
    }

    fn support(&self, _: &[V]) -> Option<Vec<Vec<V>>> {
        Some(self.distribution.support().iter().map(|v| vec![v.clone()]).collect())
    }
}

/// Extension samplers `q(v_1)`, `q(v_t | u_{t-1})` and their fixed block
/// lengths.
#[derive(Clone)]
pub struct ExtensionSchedule<V> {
    pub extensions: Vec<Arc<dyn Extension<V>>>,
    /// Length of each block `v_t`.
    pub block_lengths: Vec<usize>,
}

impl<V> ExtensionSchedule<V> {
    /// Dimension of `u_t`.
    fn state_len(&self, t: usize) -> usize {
        self.block_lengths[..t].iter().sum()
    }
}

/// History of the extension variant: blocks `v_1..v_T` and intermediate
/// states `u_1..u_{T-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExtensionHistory<V> {
    pub blocks: Vec<Vec<V>>,
    pub states: Vec<Vec<V>>,
}

fn concat<V: Clone>(a: &[V], b: &[V]) -> Vec<V> {
    let mut out = a.to_vec();
    out.extend_from_slice(b);
    out
}

/// Sequential inference on a growing state: `v_1 ~ q(v_1)`,
/// `u_1 ~ k_1(· ; v_1)`, then `v_t ~ q(· | u_{t-1})` and
/// `u_t ~ k_t(· ; u_{t-1} ⊕ v_t)`. The output is `u_T`.
#[derive(Clone)]
pub struct ExtensionInference<V> {
    targets: Vec<SharedTarget<Vec<V>>>,
    schedule: ExtensionSchedule<V>,
    kernels: Vec<SharedKernel<Vec<V>>>,
}

impl<V: State> ExtensionInference<V> {
    /// `targets` are `p̃_1..p̃_T` on the growing spaces, the last being the
    /// model joint; `kernels[t - 1]` targets `p̃_t`.
    pub fn new(
        targets: Vec<SharedTarget<Vec<V>>>,
        schedule: ExtensionSchedule<V>,
        kernels: Vec<SharedKernel<Vec<V>>>,
    ) -> Result<Self> {
        let t = targets.len();
        if t == 0 || kernels.len() != t || schedule.extensions.len() != t || schedule.block_lengths.len() != t {
            return Err(Error::InvalidArgument(
                "targets, kernels and extensions must have the same non-zero length".into(),
            ));
        }
        for (index, k) in kernels.iter().enumerate() {
            if !same_target(k.target(), &targets[index]) {
                return Err(Error::TargetMismatch { index });
            }
        }
        Ok(ExtensionInference {
            targets,
            schedule,
            kernels,
        })
    }

    pub fn meta(&self) -> ExtensionMeta<V> {
        ExtensionMeta {
            inner: self.clone(),
            reversed: self.kernels.iter().map(|k| Arc::clone(k).reversed()).collect(),
        }
    }

    pub fn log_weight(&self, history: &ExtensionHistory<V>, z: &[V]) -> Result<f64> {
        extension_log_weight(&self.targets, &self.schedule, history, z)
    }

    fn check_shape(&self, history: &ExtensionHistory<V>, z: &[V]) -> Result<()> {
        let t = self.targets.len();
        let ok = history.blocks.len() == t
            && history.states.len() + 1 == t
            && history
                .blocks
                .iter()
                .zip(&self.schedule.block_lengths)
                .all(|(b, &n)| b.len() == n)
            && history
                .states
                .iter()
                .enumerate()
                .all(|(i, u)| u.len() == self.schedule.state_len(i + 1))
            && z.len() == self.schedule.state_len(t);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("extension history has the wrong shape".into()))
        }
    }
}

impl<V: State> InferenceProgram for ExtensionInference<V> {
    type Latent = Vec<V>;
    type History = ExtensionHistory<V>;

    fn run(&self, rng: &mut dyn RngCore) -> Result<(ExtensionHistory<V>, Vec<V>)> {
        let mut blocks = Vec::with_capacity(self.kernels.len());
        let mut states = Vec::with_capacity(self.kernels.len());
        let mut u: Vec<V> = Vec::new();
        for (t, k) in self.kernels.iter().enumerate() {
            let v = self.schedule.extensions[t].sample(&u, rng);
            let extended = concat(&u, &v);
            blocks.push(v);
            if t > 0 {
                states.push(std::mem::take(&mut u));
            }
            u = k.step(&extended, rng)?;
        }
        Ok((ExtensionHistory { blocks, states }, u))
    }

    fn log_joint_density(&self, history: &ExtensionHistory<V>, z: &Vec<V>) -> Result<f64> {
        self.check_shape(history, z)?;
        let empty: Vec<V> = Vec::new();
        let mut lq = 0.0;
        for (t, k) in self.kernels.iter().enumerate() {
            let prev = if t == 0 { &empty } else { &history.states[t - 1] };
            let v = &history.blocks[t];
            lq += self.schedule.extensions[t].log_density(prev, v);
            let next = history.states.get(t).unwrap_or(z);
            lq += k.transition_log_prob(&concat(prev, v), next)?;
        }
        Ok(lq)
    }
}

/// Reversed-chain meta-inference for [`ExtensionInference`]: from `u_T = z`
/// draw `(u_{t-1}, v_t) ~ k̃_t(· ; u_t)` for `t = T..1`.
#[derive(Clone)]
pub struct ExtensionMeta<V> {
    inner: ExtensionInference<V>,
    reversed: Vec<SharedKernel<Vec<V>>>,
}

impl<V: State> MetaInferenceProgram for ExtensionMeta<V> {
    type Latent = Vec<V>;
    type History = ExtensionHistory<V>;

    fn run(&self, z: &Vec<V>, rng: &mut dyn RngCore) -> Result<ExtensionHistory<V>> {
        let t_len = self.reversed.len();
        let mut blocks = vec![Vec::new(); t_len];
        let mut states = vec![Vec::new(); t_len - 1];
        let mut u = z.clone();
        for t in (0..t_len).rev() {
            let pair = self.reversed[t].step(&u, rng)?;
            let split = self.inner.schedule.state_len(t);
            if pair.len() != split + self.inner.schedule.block_lengths[t] {
                return Err(Error::InvalidArgument("kernel changed the state dimension".into()));
            }
            blocks[t] = pair[split..].to_vec();
            u = pair[..split].to_vec();
            if t > 0 {
                states[t - 1] = u.clone();
            }
        }
        Ok(ExtensionHistory { blocks, states })
    }

    fn log_density(&self, history: &ExtensionHistory<V>, z: &Vec<V>) -> Result<f64> {
        self.inner.check_shape(history, z)?;
        let empty: Vec<V> = Vec::new();
        let mut lm = 0.0;
        for (t, k) in self.reversed.iter().enumerate() {
            let prev = if t == 0 { &empty } else { &history.states[t - 1] };
            let from = history.states.get(t).unwrap_or(z);
            lm += k.transition_log_prob(from, &concat(prev, &history.blocks[t]))?;
        }
        Ok(lm)
    }
}

/// `log p̃_1(v_1) - log q(v_1)
///  + Σ_{t=1}^{T-1} [log p̃_{t+1}(u_t ⊕ v_{t+1}) - log p̃_t(u_t) - log q(v_{t+1} | u_t)]`.
pub fn extension_log_weight<V: State>(
    targets: &[SharedTarget<Vec<V>>],
    schedule: &ExtensionSchedule<V>,
    history: &ExtensionHistory<V>,
    _z: &[V],
) -> Result<f64> {
    let t_len = targets.len();
    if history.blocks.len() != t_len || history.states.len() + 1 != t_len {
        return Err(Error::InvalidArgument("extension history has the wrong shape".into()));
    }
    let finite = |label: &str, v: f64| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::support(format!("{label} is {v}")))
        }
    };
    let v1 = &history.blocks[0];
    let mut lw = finite("log p̃_1(v_1)", targets[0].log_density(v1))?
        - finite("log q(v_1)", schedule.extensions[0].log_density(&[], v1))?;
    for t in 1..t_len {
        let u = &history.states[t - 1];
        let v = &history.blocks[t];
        lw += finite("log p̃_{t+1}(u_t, v_{t+1})", targets[t].log_density(&concat(u, v)))?
            - finite("log p̃_t(u_t)", targets[t - 1].log_density(u))?
            - finite("log q(v_{t+1} | u_t)", schedule.extensions[t].log_density(u, v))?;
    }
    Ok(lw)
}

impl<V: State + Ord> EnumerableInference for ExtensionInference<V> {
    fn enumerate_joint(&self) -> Result<Vec<(ExtensionHistory<V>, Vec<V>)>> {
        // partial: (blocks, states so far, current u_t)
        let mut partial: Vec<(Vec<Vec<V>>, Vec<Vec<V>>, Vec<V>)> = vec![(Vec::new(), Vec::new(), Vec::new())];
        for (t, k) in self.kernels.iter().enumerate() {
            let ext = &self.schedule.extensions[t];
            let mut next = Vec::new();
            for (blocks, states, u) in &partial {
                let options = ext
                    .support(u)
                    .ok_or(Error::DensityUnavailable("extension without finite support"))?;
                for v in options {
                    for (u_next, _) in k.transition_row(&concat(u, &v))? {
                        let mut b = blocks.clone();
                        b.push(v.clone());
                        let mut s = states.clone();
                        if t > 0 {
                            s.push(u.clone());
                        }
                        next.push((b, s, u_next));
                    }
                }
            }
            check_enumeration_size(next.len())?;
            partial = next;
        }
        Ok(partial
            .into_iter()
            .map(|(blocks, states, z)| (ExtensionHistory { blocks, states }, z))
            .collect())
    }
}

impl<V: State + Ord> EnumerableMeta for ExtensionMeta<V> {
    fn enumerate_histories(&self, z: &Vec<V>) -> Result<Vec<ExtensionHistory<V>>> {
        let t_len = self.reversed.len();
        // partial: (blocks from T down, states from T-1 down, current u)
        let mut partial: Vec<(Vec<Vec<V>>, Vec<Vec<V>>, Vec<V>)> = vec![(Vec::new(), Vec::new(), z.clone())];
        for t in (0..t_len).rev() {
            let split = self.inner.schedule.state_len(t);
            let mut next = Vec::new();
            for (blocks, states, u) in &partial {
                for (pair, _) in self.reversed[t].transition_row(u)? {
                    let mut b = blocks.clone();
                    b.push(pair[split..].to_vec());
                    let prev = pair[..split].to_vec();
                    let mut s = states.clone();
                    if t > 0 {
                        s.push(prev.clone());
                    }
                    next.push((b, s, prev));
                }
            }
            check_enumeration_size(next.len())?;
            partial = next;
        }
        Ok(partial
            .into_iter()
            .map(|(mut blocks, mut states, _)| {
                blocks.reverse();
                states.reverse();
                ExtensionHistory { blocks, states }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_marginal_output, exact_meta_distribution, exact_posterior, exact_prior};
    use crate::kernels::{ExactResample, Identity, LatticeRandomWalk, MetropolisHastings};
    use crate::models::toy::ToyBernoulli;
    use crate::program::Model;
    use crate::rng::stream;

    fn toy_targets() -> TargetSequence<usize> {
        let (model, data) = ToyBernoulli::fixture();
        sequential_observation_targets(Arc::new(model), Arc::new(data))
            .unwrap()
            .with_support(vec![0, 1])
    }

    #[test]
    fn toy_weight_is_likelihood_ratio() {
        let targets = toy_targets();
        let w = ais_log_weight(&targets, &SeqDbHistory { states: vec![1] }).unwrap();
        assert!((w - 0.8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn posterior_initial_gives_evidence() {
        let (model, data) = ToyBernoulli::fixture();
        let post = exact_posterior(&model, &data).unwrap();
        let joint = target_fn(move |z: &usize| model.log_joint(z, &data));
        let targets = TargetSequence::new(Arc::new(post), vec![joint]).unwrap();
        for u in 0..2 {
            let w = ais_log_weight(&targets, &SeqDbHistory { states: vec![u] }).unwrap();
            assert!((w - 0.38f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn asymptotic_gap_of_single_step_is_prior_posterior_symkl() {
        let targets = toy_targets();
        let (model, data) = ToyBernoulli::fixture();
        let expected =
            exact_symmetrized_kl(&exact_prior(&model).unwrap(), &exact_posterior(&model, &data).unwrap()).unwrap();
        assert!((asymptotic_gap(&targets).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_has_no_gap() {
        let p0 = FiniteDistribution::from_log_weights([(0usize, 0.0), (1, 1.0)]).unwrap();
        let p = p0.clone();
        let t = target_fn(move |s: &usize| p.log_prob(s));
        let seq = TargetSequence::new(Arc::new(p0), vec![Arc::clone(&t), t])
            .unwrap()
            .with_support(vec![0, 1]);
        assert!(asymptotic_gap(&seq).unwrap().abs() < 1e-15);
    }

    #[test]
    fn identity_kernel_returns_initial_draw_and_meta_returns_output() {
        let targets = toy_targets();
        let k: SharedKernel<usize> = Arc::new(Identity::new(Arc::clone(targets.target(1))));
        let inf = SeqDbInference::new(targets, vec![k]).unwrap();
        let mut rng = stream(3, 0, 0);
        let (h, z) = inf.run(&mut rng).unwrap();
        assert_eq!(h.states, vec![z]);
        let meta = inf.meta();
        assert_eq!(meta.run(&1, &mut rng).unwrap().states, vec![1]);
    }

    #[test]
    fn mismatched_kernel_is_rejected() {
        let targets = toy_targets();
        let other = toy_targets();
        let k: SharedKernel<usize> = Arc::new(Identity::new(Arc::clone(other.target(1))));
        assert!(matches!(
            SeqDbInference::new(targets, vec![k]),
            Err(Error::TargetMismatch { index: 0 })
        ));
    }

    fn chain_fixture() -> SeqDbInference<usize> {
        let p0 = FiniteDistribution::from_log_weights([(0usize, 0.0), (1, 0.5), (2, -1.0)]).unwrap();
        let t1 = target_fn(|s: &usize| [0.1f64, 1.0, 0.3][*s].ln());
        let t2 = target_fn(|s: &usize| [0.05f64, 0.2, 0.9][*s].ln());
        let targets = TargetSequence::new(Arc::new(p0), vec![Arc::clone(&t1), Arc::clone(&t2)])
            .unwrap()
            .with_support(vec![0, 1, 2]);
        let k1: SharedKernel<usize> = Arc::new(MetropolisHastings::new(
            t1,
            Arc::new(LatticeRandomWalk { width: 1, size: 3 }),
        ));
        let k2: SharedKernel<usize> = Arc::new(MetropolisHastings::new(
            t2,
            Arc::new(LatticeRandomWalk { width: 2, size: 3 }),
        ));
        SeqDbInference::new(targets, vec![k1, k2]).unwrap()
    }

    #[test]
    fn output_marginal_is_matrix_product() {
        let inf = chain_fixture();
        let marginal = exact_marginal_output(&inf).unwrap();
        let p0 = inf.targets().normalized(0).unwrap();
        let mut dist: Vec<f64> = (0..3).map(|s| p0.prob(&s)).collect();
        for k in inf.kernels() {
            let mut next = vec![0.0; 3];
            for (i, pi) in dist.iter().enumerate() {
                for (j, lp) in k.transition_row(&i).unwrap() {
                    next[j] += pi * lp.exp();
                }
            }
            dist = next;
        }
        for (s, p) in dist.iter().enumerate() {
            assert!((marginal.prob(&s) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_density_weight_telescopes() {
        let inf = chain_fixture();
        let meta = inf.meta();
        let final_t = Arc::clone(inf.targets().target(2));
        for (h, z) in inf.enumerate_joint().unwrap() {
            let slow =
                final_t.log_density(&z) + meta.log_density(&h, &z).unwrap() - inf.log_joint_density(&h, &z).unwrap();
            assert!((slow - inf.log_weight(&h).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_sampler_matches_meta_density() {
        let inf = chain_fixture();
        let meta = inf.meta();
        let m = exact_meta_distribution(&meta, &2).unwrap();
        let mut rng = stream(9, 9, 9);
        let n = 40_000;
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..n {
            *counts.entry(meta.run(&2, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        for (h, lp) in m.iter() {
            let f = *counts.get(h).unwrap_or(&0) as f64 / n as f64;
            assert!((f - lp.exp()).abs() < 0.01);
        }
    }

    #[test]
    fn perfect_final_kernel_outputs_the_posterior() {
        let targets = toy_targets();
        let k: SharedKernel<usize> = Arc::new(ExactResample::new(Arc::clone(targets.target(1)), &[0, 1]).unwrap());
        let inf = SeqDbInference::new(targets, vec![k]).unwrap();
        let (model, data) = ToyBernoulli::fixture();
        let post = exact_posterior(&model, &data).unwrap();
        assert!(exact_marginal_output(&inf).unwrap().total_variation(&post) < 1e-15);
    }

    #[test]
    fn data_order_changes_the_gap() {
        let model = Arc::new(ToyBernoulli::default());
        let obs = vec![true, false, true];
        let gap = |order: Vec<usize>| {
            let data = Arc::new(Dataset::with_ordering(obs.clone(), order).unwrap());
            asymptotic_gap(
                &sequential_observation_targets(Arc::clone(&model), data)
                    .unwrap()
                    .with_support(vec![0, 1]),
            )
            .unwrap()
        };
        let a = gap(vec![0, 1, 2]);
        let b = gap(vec![1, 0, 2]);
        assert!((a - b).abs() > 1e-3, "{a} vs {b}");
    }

    #[test]
    fn geometric_bridge_endpoints() {
        let prior = FiniteDistribution::uniform(0..3usize).unwrap();
        let fin = target_fn(|s: &usize| [1.0f64, 2.0, 3.0][*s].ln());
        let seq = TargetSequence::geometric_bridge(Arc::new(prior), Arc::clone(&fin), 4).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(same_target(seq.target(4), &fin));
        // halfway target is the geometric mean of the endpoints
        let mid = seq.target(2).log_density(&2);
        assert!((mid - 0.5 * ((1.0f64 / 3.0).ln() + 3f64.ln())).abs() < 1e-15);
    }
}
