//! The programs that take part in subjective divergence estimation.
//!
//! All densities are natural-log densities. Programs are bound to their
//! dataset when constructed; only the model takes the dataset explicitly so
//! that one model value can score several datasets (or prefixes of one).

use rand::RngCore;

use crate::error::{Error, Result};

/// Observed data `x*` with an explicit presentation order.
///
/// The order matters only for targets that add observations one at a time;
/// everything else sees `observations()` in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<X> {
    observations: Vec<X>,
    ordering: Vec<usize>,
}

impl<X> Dataset<X> {
    /// Dataset presented in storage order.
    pub fn new(observations: Vec<X>) -> Result<Self> {
        let ordering = (0..observations.len()).collect();
        Self::with_ordering(observations, ordering)
    }

    /// Dataset presented in `ordering`, which must be a permutation of
    /// `0..observations.len()`.
    pub fn with_ordering(observations: Vec<X>, ordering: Vec<usize>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        let mut seen = vec![false; observations.len()];
        if ordering.len() != observations.len() {
            return Err(Error::InvalidArgument(format!(
                "ordering has {} entries for {} observations",
                ordering.len(),
                observations.len()
            )));
        }
        for &i in &ordering {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument("ordering is not a permutation".into()));
            }
        }
        Ok(Dataset { observations, ordering })
    }

    pub fn observations(&self) -> &[X] {
        &self.observations
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observation indices in presentation order.
    pub fn ordered_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.ordering.iter().copied()
    }
}

/// A generative model `p(z) p(x | z)`.
pub trait Model: Sync {
    type Latent: Clone + Send + Sync;
    type Obs: Sync;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Self::Latent;

    fn log_prior(&self, z: &Self::Latent) -> f64;

    fn log_likelihood(&self, z: &Self::Latent, data: &Dataset<Self::Obs>) -> f64;

    /// `log p(z, x*)`. Finite or `-inf`, never NaN.
    fn log_joint(&self, z: &Self::Latent, data: &Dataset<Self::Obs>) -> f64 {
        let lp = self.log_prior(z);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(z, data)
    }
}

impl<M: Model + ?Sized> Model for &M {
    type Latent = M::Latent;
    type Obs = M::Obs;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> M::Latent {
        (**self).sample_prior(rng)
    }

    fn log_prior(&self, z: &M::Latent) -> f64 {
        (**self).log_prior(z)
    }

    fn log_likelihood(&self, z: &M::Latent, data: &Dataset<M::Obs>) -> f64 {
        (**self).log_likelihood(z, data)
    }

    fn log_joint(&self, z: &M::Latent, data: &Dataset<M::Obs>) -> f64 {
        (**self).log_joint(z, data)
    }
}

impl<M: Model + Send + ?Sized> Model for std::sync::Arc<M> {
    type Latent = M::Latent;
    type Obs = M::Obs;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> M::Latent {
        (**self).sample_prior(rng)
    }

    fn log_prior(&self, z: &M::Latent) -> f64 {
        (**self).log_prior(z)
    }

    fn log_likelihood(&self, z: &M::Latent, data: &Dataset<M::Obs>) -> f64 {
        (**self).log_likelihood(z, data)
    }

    fn log_joint(&self, z: &M::Latent, data: &Dataset<M::Obs>) -> f64 {
        (**self).log_joint(z, data)
    }
}

/// A model whose likelihood factorizes over observations, so that partial
/// posteriors `p(z | x*_{1:t})` are available as annealing targets.
pub trait SequentialModel: Model {
    /// `log p(x*_i | z)` for the observation stored at `index`.
    fn log_likelihood_at(&self, z: &Self::Latent, data: &Dataset<Self::Obs>, index: usize) -> f64;
}

/// A model with a finite latent space that can be listed.
pub trait EnumerableModel: Model
where
    Self::Latent: Ord,
{
    fn enumerate_latents(&self) -> Vec<Self::Latent>;
}

/// An approximate inference program `(y, z) ~ q(y, z; x*)`.
pub trait InferenceProgram: Sync {
    type Latent: Clone + Send + Sync;
    type History: Send;

    /// Runs the program and returns its execution history and output.
    fn run(&self, rng: &mut dyn RngCore) -> Result<(Self::History, Self::Latent)>;

    /// `log q(y, z; x*)` at the coarse granularity of `History`.
    ///
    /// Programs whose internal kernels have no evaluable transition density
    /// return [`Error::DensityUnavailable`]; such programs supply a closed
    /// form weight instead (see [`crate::divergence::estimate_subjective_divergence_with`]).
    fn log_joint_density(&self, history: &Self::History, z: &Self::Latent) -> Result<f64>;
}

/// A meta-inference program `y ~ m(y; z, x*)` approximating `q(y | z; x*)`.
pub trait MetaInferenceProgram: Sync {
    type Latent: Clone + Send + Sync;
    type History: Send;

    fn run(&self, z: &Self::Latent, rng: &mut dyn RngCore) -> Result<Self::History>;

    fn log_density(&self, history: &Self::History, z: &Self::Latent) -> Result<f64>;
}

/// An inference program whose normalized output density `q(z; x*)` is
/// directly evaluable.
pub trait AssessableInference: Sync {
    type Latent: Clone + Send + Sync;

    fn sample(&self, rng: &mut dyn RngCore) -> Self::Latent;

    fn log_density(&self, z: &Self::Latent) -> f64;
}

/// The gold-standard sampler `r(z; x*)`.
pub trait ReferenceProgram: Sync {
    type Latent: Clone + Send + Sync;

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Self::Latent>;

    /// Whether the sampler is claimed to draw exactly from `p(z | x*)`.
    fn is_oracle(&self) -> bool {
        false
    }
}

/// Views an assessable program as an inference program with an empty
/// history. Pair it with [`TrivialMeta`].
#[derive(Debug, Clone)]
pub struct Assessed<A>(pub A);

impl<A: AssessableInference> InferenceProgram for Assessed<A> {
    type Latent = A::Latent;
    type History = ();

    fn run(&self, rng: &mut dyn RngCore) -> Result<((), A::Latent)> {
        Ok(((), self.0.sample(rng)))
    }

    fn log_joint_density(&self, _: &(), z: &A::Latent) -> Result<f64> {
        Ok(self.0.log_density(z))
    }
}

/// Meta-inference over an empty history: `m(y; z) = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialMeta<Z>(std::marker::PhantomData<fn() -> Z>);

impl<Z> TrivialMeta<Z> {
    pub fn new() -> Self {
        TrivialMeta(std::marker::PhantomData)
    }
}

impl<Z: Clone + Send + Sync> MetaInferenceProgram for TrivialMeta<Z> {
    type Latent = Z;
    type History = ();

    fn run(&self, _: &Z, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }

    fn log_density(&self, _: &(), _: &Z) -> Result<f64> {
        Ok(0.0)
    }
}

/// The model prior `p(z)` as an assessable program. Useful as an initial
/// distribution and as the deliberately poor baseline inference.
#[derive(Debug, Clone)]
pub struct PriorSampler<M>(pub M);

impl<M: Model> AssessableInference for PriorSampler<M> {
    type Latent = M::Latent;

    fn sample(&self, rng: &mut dyn RngCore) -> M::Latent {
        self.0.sample_prior(rng)
    }

    fn log_density(&self, z: &M::Latent) -> f64 {
        self.0.log_prior(z)
    }
}

/// Uses any assessable sampler as a reference.
#[derive(Debug, Clone)]
pub struct SamplerReference<A> {
    pub sampler: A,
    pub oracle: bool,
}

impl<A> SamplerReference<A> {
    pub fn oracle(sampler: A) -> Self {
        SamplerReference { sampler, oracle: true }
    }

    pub fn approximate(sampler: A) -> Self {
        SamplerReference { sampler, oracle: false }
    }
}

impl<A: AssessableInference> ReferenceProgram for SamplerReference<A> {
    type Latent = A::Latent;

    fn sample(&self, rng: &mut dyn RngCore) -> Result<A::Latent> {
        Ok(self.sampler.sample(rng))
    }

    fn is_oracle(&self) -> bool {
        self.oracle
    }
}

/// Uses the output of an inference program as a reference sample, for
/// example LW-SIR with many particles.
#[derive(Debug, Clone)]
pub struct InferenceReference<I> {
    pub program: I,
    pub oracle: bool,
}

impl<I> InferenceReference<I> {
    pub fn approximate(program: I) -> Self {
        InferenceReference { program, oracle: false }
    }
}

impl<I: InferenceProgram> ReferenceProgram for InferenceReference<I> {
    type Latent = I::Latent;

    fn sample(&self, rng: &mut dyn RngCore) -> Result<I::Latent> {
        self.program.run(rng).map(|(_, z)| z)
    }

    fn is_oracle(&self) -> bool {
        self.oracle
    }
}
