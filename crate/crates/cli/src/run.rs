//! Assembles the configured (model, inference, meta-inference, reference)
//! quadruple and estimates the subjective divergence at each knob value.

use std::sync::Arc;

use rand::RngCore;
use subdiv_core::exact::exact_posterior;
use subdiv_core::kernels::{
    cycle, gibbs_sweep, repeat, target_fn, ExactResample, IndependenceProposal, MetropolisHastings, SharedKernel,
    SharedTarget, SiteResimulation, State, UniformRandomWalk,
};
use subdiv_core::models::hmm::hmm_fixture;
use subdiv_core::models::linreg::{linreg_conjugate_posterior, linreg_fixture, LinRegModel};
use subdiv_core::models::meanfield::GaussianMeanField;
use subdiv_core::models::noisyor::{noisyor_annealing_schedule, noisyor_fixture};
use subdiv_core::models::tabular::{site_marginal_bridge, three_site_fixture};
use subdiv_core::models::toy::ToyBernoulli;
use subdiv_core::program::{
    AssessableInference, InferenceReference, PriorSampler, ReferenceProgram, SamplerReference, SequentialModel,
};
use subdiv_core::seqdb::{sequential_observation_targets, SeqDbHistory, SeqDbInference, TargetSequence};
use subdiv_core::smc::{
    pf_log_weight_estimate, ConditionalProposal, FfbsReference, ParticleFilter, PathModel, PriorProposal, Sir,
    SmcProposal,
};
use subdiv_core::{
    estimate_subjective_divergence_assessable, estimate_subjective_divergence_with, Dataset, DivergenceEstimate,
    EnumerableModel, Model, Replicates,
};

use crate::config::{
    AssessableKind, ExperimentConfig, InferenceSpec, KernelKind, ModelSpec, ProposalKind, ReferenceSpec, ScheduleKind,
    SeqdbSpec,
};
use crate::presets::MAX_ENUMERABLE_CAUSES;

type CoreResult<T> = subdiv_core::Result<T>;

/// The estimate at one knob value, with the seed that reproduces it.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub knob: usize,
    pub seed: u64,
    pub estimate: DivergenceEstimate,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("setting up {what}: {source}")]
    Setup {
        what: &'static str,
        #[source]
        source: subdiv_core::Error,
    },
    #[error("knob {knob}: {source}")]
    Estimation {
        knob: usize,
        #[source]
        source: subdiv_core::Error,
    },
}

fn setup<T>(what: &'static str, r: CoreResult<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Setup { what, source })
}

struct DynReference<'a, L>(Box<dyn ReferenceProgram<Latent = L> + 'a>);

impl<L: Clone + Send + Sync> ReferenceProgram for DynReference<'_, L> {
    type Latent = L;

    fn sample(&self, rng: &mut dyn RngCore) -> CoreResult<L> {
        self.0.sample(rng)
    }

    fn is_oracle(&self) -> bool {
        self.0.is_oracle()
    }
}

struct DynAssessable<'a, L>(Box<dyn AssessableInference<Latent = L> + 'a>);

impl<L: Clone + Send + Sync> AssessableInference for DynAssessable<'_, L> {
    type Latent = L;

    fn sample(&self, rng: &mut dyn RngCore) -> L {
        self.0.sample(rng)
    }

    fn log_density(&self, z: &L) -> f64 {
        self.0.log_density(z)
    }
}

type SeqDbBuilder<'a, L> = Box<dyn Fn(usize) -> CoreResult<SeqDbInference<L>> + 'a>;

/// Everything model-specific the shared sweep needs.
struct Problem<'a, M: Model> {
    model: &'a M,
    data: &'a Dataset<M::Obs>,
    oracle: Option<DynReference<'a, M::Latent>>,
    exact_q: Option<DynAssessable<'a, M::Latent>>,
    seqdb: Option<SeqDbBuilder<'a, M::Latent>>,
}

/// Runs the configured sweep. Knob points run in order; replicates within
/// a point run on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ProfilePoint>, RunError> {
    match &config.model {
        ModelSpec::Toy => {
            let (model, data) = ToyBernoulli::fixture();
            let post = setup("posterior", exact_posterior(&model, &data))?;
            sweep_problem(
                config,
                Problem {
                    model: &model,
                    data: &data,
                    oracle: Some(DynReference(Box::new(SamplerReference::oracle(post.clone())))),
                    exact_q: Some(DynAssessable(Box::new(post))),
                    seqdb: None,
                },
            )
        }
        ModelSpec::Hmm {
            states,
            symbols,
            steps,
            seed,
        } => run_hmm(config, *states, *symbols, *steps, *seed),
        ModelSpec::Linreg { seed } => {
            let (model, data) = setup("linreg fixture", linreg_fixture(*seed))?;
            let post = setup("conjugate posterior", linreg_conjugate_posterior(&model, &data))?;
            let exact_q = match &config.inference {
                InferenceSpec::Assessable {
                    q: AssessableKind::MeanField,
                } => {
                    let mean = post.normal.mean().iter().copied().collect();
                    let cov = post.normal.covariance();
                    let var = (0..cov.nrows()).map(|i| cov[(i, i)]).collect();
                    DynAssessable(Box::new(setup("mean field", GaussianMeanField::new(mean, var))?))
                }
                _ => DynAssessable(Box::new(post.clone())),
            };
            let seqdb_spec = seqdb_spec(config);
            let (m2, d2) = (model.clone(), data.clone());
            let seqdb: Option<SeqDbBuilder<'_, Vec<f64>>> = seqdb_spec
                .map(|s| Box::new(move |n: usize| linreg_seqdb(&m2, &d2, &s, n)) as SeqDbBuilder<'_, Vec<f64>>);
            sweep_problem(
                config,
                Problem {
                    model: &model,
                    data: &data,
                    oracle: Some(DynReference(Box::new(SamplerReference::oracle(post)))),
                    exact_q: Some(exact_q),
                    seqdb,
                },
            )
        }
        ModelSpec::Noisyor { causes, findings, seed } => {
            let (net, data) = setup("noisy-or fixture", noisyor_fixture(*causes, *findings, *seed))?;
            let enumerable = *causes <= MAX_ENUMERABLE_CAUSES;
            let post = if enumerable {
                Some(setup("posterior", exact_posterior(&net, &data))?)
            } else {
                None
            };
            let seqdb = seqdb_spec(config).map(|s| {
                let (n2, d2) = (net.clone(), data.clone());
                Box::new(move |reps: usize| {
                    let steps = s.steps.unwrap_or(10);
                    let targets = match s.schedule.unwrap_or(ScheduleKind::Leak) {
                        ScheduleKind::Leak => noisyor_annealing_schedule(&n2, &d2, steps)?,
                        other => discrete_schedule(&n2, &d2, other, steps, enumerable)?,
                    };
                    discrete_seqdb(targets, &vec![2; n2.num_causes()], &s, reps)
                }) as SeqDbBuilder<'_, Vec<usize>>
            });
            sweep_problem(
                config,
                Problem {
                    model: &net,
                    data: &data,
                    oracle: post
                        .clone()
                        .map(|p| DynReference(Box::new(SamplerReference::oracle(p)) as Box<_>)),
                    exact_q: post.map(|p| DynAssessable(Box::new(p) as Box<_>)),
                    seqdb,
                },
            )
        }
        ModelSpec::ThreeSite => {
            let (model, data) = three_site_fixture();
            let post = setup("posterior", exact_posterior(&model, &data))?;
            let seqdb = seqdb_spec(config).map(|s| {
                let (m2, d2) = (model.clone(), data.clone());
                Box::new(move |reps: usize| {
                    let steps = s.steps.unwrap_or(4);
                    let targets = match s.schedule.unwrap_or(ScheduleKind::SiteBridge) {
                        ScheduleKind::SiteBridge => site_marginal_bridge(&m2, &d2, s.site.unwrap_or(2), steps)?,
                        other => discrete_schedule(&m2, &d2, other, steps, true)?,
                    };
                    discrete_seqdb(targets, m2.domains(), &s, reps)
                }) as SeqDbBuilder<'_, Vec<usize>>
            });
            sweep_problem(
                config,
                Problem {
                    model: &model,
                    data: &data,
                    oracle: Some(DynReference(Box::new(SamplerReference::oracle(post.clone())))),
                    exact_q: Some(DynAssessable(Box::new(post))),
                    seqdb,
                },
            )
        }
    }
}

fn seqdb_spec(config: &ExperimentConfig) -> Option<SeqdbSpec> {
    match &config.inference {
        InferenceSpec::Seqdb(s) => Some(s.clone()),
        _ => None,
    }
}

fn points(
    config: &ExperimentConfig,
    mut point: impl FnMut(usize, Replicates) -> CoreResult<DivergenceEstimate>,
) -> Result<Vec<ProfilePoint>, RunError> {
    let e = &config.estimator;
    let reps = Replicates::new(e.n_ref, e.n_inf, e.seed);
    config
        .sweep
        .values
        .iter()
        .map(|&knob| {
            let estimate = point(knob, reps).map_err(|source| RunError::Estimation { knob, source })?;
            Ok(ProfilePoint {
                knob,
                seed: e.seed,
                estimate,
            })
        })
        .collect()
}

fn sweep_problem<'a, M>(config: &ExperimentConfig, problem: Problem<'a, M>) -> Result<Vec<ProfilePoint>, RunError>
where
    M: Model + Clone + 'a,
    M::Latent: State,
{
    let Problem {
        model,
        data,
        oracle,
        exact_q,
        seqdb,
    } = problem;
    let reference: DynReference<'a, M::Latent> = match &config.reference {
        ReferenceSpec::Oracle => oracle.ok_or(RunError::Setup {
            what: "reference",
            source: subdiv_core::Error::DensityUnavailable("an oracle for this model"),
        })?,
        ReferenceSpec::LwSir { particles } => DynReference(Box::new(InferenceReference::approximate(setup(
            "reference",
            Sir::new(model, data, *particles),
        )?))),
        ReferenceSpec::Seqdb { repetitions } => {
            let build = seqdb.as_ref().ok_or(RunError::Setup {
                what: "reference",
                source: subdiv_core::Error::DensityUnavailable("a seqdb program for this model"),
            })?;
            DynReference(Box::new(InferenceReference::approximate(setup(
                "reference",
                build(*repetitions),
            )?)))
        }
    };
    match &config.inference {
        InferenceSpec::Sir => points(config, |k, reps| {
            let sir = Sir::new(model, data, k)?;
            estimate_subjective_divergence_with(&sir, &sir.meta(), &reference, reps, |y, z| sir.log_weight(y, z))
        }),
        InferenceSpec::Seqdb(_) => {
            let build = seqdb.as_ref().expect("validated: seqdb is available");
            points(config, |n, reps| {
                let inf = build(n)?;
                estimate_subjective_divergence_with(&inf, &inf.meta(), &reference, reps, |y: &SeqDbHistory<_>, _| {
                    inf.log_weight(y)
                })
            })
        }
        InferenceSpec::Assessable { q } => {
            let q = match q {
                AssessableKind::Prior => DynAssessable(Box::new(PriorSampler(model.clone()))),
                _ => exact_q.expect("validated: exact q is available"),
            };
            points(config, |_, reps| {
                estimate_subjective_divergence_assessable(model, data, &q, &reference, reps)
            })
        }
        InferenceSpec::Smc { .. } => unreachable!("validated: smc only on hmm"),
    }
}

fn run_hmm(
    config: &ExperimentConfig,
    states: usize,
    symbols: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<ProfilePoint>, RunError> {
    let f = setup("hmm fixture", hmm_fixture(states, symbols, steps, seed))?;
    let path = PathModel {
        ssm: f.model.clone(),
        steps,
    };
    let ffbs = setup("forward filter", FfbsReference::new(&f.model, &f.data))?;
    match &config.inference {
        InferenceSpec::Smc { proposal } => {
            let reference: DynReference<'_, Vec<usize>> = match &config.reference {
                ReferenceSpec::Oracle => DynReference(Box::new(ffbs)),
                ReferenceSpec::LwSir { particles } => DynReference(Box::new(InferenceReference::approximate(setup(
                    "reference",
                    Sir::new(&path, &f.data, *particles),
                )?))),
                ReferenceSpec::Seqdb { .. } => unreachable!("validated: seqdb reference needs seqdb inference"),
            };
            match proposal {
                ProposalKind::Prior => smc_points(config, &f.model, &f.data, PriorProposal, &reference),
                ProposalKind::Conditional => smc_points(config, &f.model, &f.data, ConditionalProposal, &reference),
            }
        }
        _ => sweep_problem(
            config,
            Problem {
                model: &path,
                data: &f.data,
                oracle: Some(DynReference(Box::new(ffbs))),
                exact_q: None,
                seqdb: None,
            },
        ),
    }
}

fn smc_points<P: SmcProposal<subdiv_core::models::hmm::Hmm> + Clone + Sync>(
    config: &ExperimentConfig,
    model: &subdiv_core::models::hmm::Hmm,
    data: &Dataset<usize>,
    proposal: P,
    reference: &DynReference<'_, Vec<usize>>,
) -> Result<Vec<ProfilePoint>, RunError> {
    points(config, |k, reps| {
        let pf = ParticleFilter::new(model, data, proposal.clone(), k)?;
        estimate_subjective_divergence_with(&pf, &pf.meta(), reference, reps, |y, z| pf_log_weight_estimate(y, z))
    })
}

fn joint_target<M>(model: &M, data: &Dataset<M::Obs>) -> SharedTarget<M::Latent>
where
    M: Model + Clone + Send + 'static,
    M::Latent: State,
    M::Obs: Clone + Send + Sync + 'static,
{
    let (m, d) = (model.clone(), data.clone());
    target_fn(move |z: &M::Latent| m.log_joint(z, &d))
}

fn discrete_schedule<M>(
    model: &M,
    data: &Dataset<M::Obs>,
    schedule: ScheduleKind,
    steps: usize,
    enumerable: bool,
) -> CoreResult<TargetSequence<Vec<usize>>>
where
    M: SequentialModel<Latent = Vec<usize>> + EnumerableModel + Clone + Send + Sync + 'static,
    M::Obs: Clone + Send + Sync + 'static,
{
    let seq = match schedule {
        ScheduleKind::Observations => sequential_observation_targets(Arc::new(model.clone()), Arc::new(data.clone()))?,
        _ => TargetSequence::geometric_bridge(Arc::new(PriorSampler(model.clone())), joint_target(model, data), steps)?,
    };
    Ok(if enumerable {
        seq.with_support(model.enumerate_latents())
    } else {
        seq
    })
}

fn discrete_seqdb(
    targets: TargetSequence<Vec<usize>>,
    domains: &[usize],
    spec: &SeqdbSpec,
    reps: usize,
) -> CoreResult<SeqDbInference<Vec<usize>>> {
    let support = targets.support().map(<[_]>::to_vec);
    let kernels = targets
        .targets()
        .iter()
        .map(|t| {
            let k: SharedKernel<Vec<usize>> = match spec.kernel {
                KernelKind::Gibbs => Arc::new(gibbs_sweep(Arc::clone(t), domains, &spec.frozen_sites)?),
                KernelKind::Mh => Arc::new(cycle(
                    domains
                        .iter()
                        .enumerate()
                        .map(|(site, &d)| {
                            Arc::new(MetropolisHastings::new(
                                Arc::clone(t),
                                Arc::new(SiteResimulation {
                                    site,
                                    site_log_probs: vec![-(d as f64).ln(); d],
                                }),
                            )) as SharedKernel<Vec<usize>>
                        })
                        .collect(),
                )?),
                KernelKind::Exact => {
                    let support = support.as_ref().ok_or(subdiv_core::Error::DensityUnavailable(
                        "exact kernels without a finite support",
                    ))?;
                    Arc::new(ExactResample::new(Arc::clone(t), support)?)
                }
            };
            Ok(Arc::new(repeat(k, reps)?) as SharedKernel<Vec<usize>>)
        })
        .collect::<CoreResult<Vec<_>>>()?;
    SeqDbInference::new(targets, kernels)
}

fn linreg_seqdb(
    model: &LinRegModel,
    data: &Dataset<f64>,
    spec: &SeqdbSpec,
    reps: usize,
) -> CoreResult<SeqDbInference<Vec<f64>>> {
    let targets = match spec.schedule.unwrap_or(ScheduleKind::Observations) {
        ScheduleKind::Bridge => TargetSequence::geometric_bridge(
            Arc::new(PriorSampler(model.clone())),
            joint_target(model, data),
            spec.steps.unwrap_or(10),
        )?,
        _ => sequential_observation_targets(Arc::new(model.clone()), Arc::new(data.clone()))?,
    };
    let w = spec.half_width.unwrap_or(0.5);
    let kernels = targets
        .targets()
        .iter()
        .map(|t| {
            let resim: SharedKernel<Vec<f64>> = Arc::new(MetropolisHastings::new(
                Arc::clone(t),
                Arc::new(IndependenceProposal::from_assessable(PriorSampler(model.clone()))),
            ));
            let walk: SharedKernel<Vec<f64>> = Arc::new(MetropolisHastings::new(
                Arc::clone(t),
                Arc::new(UniformRandomWalk {
                    half_widths: vec![w, w],
                }),
            ));
            Ok(Arc::new(repeat(Arc::new(cycle(vec![resim, walk])?), reps)?) as SharedKernel<Vec<f64>>)
        })
        .collect::<CoreResult<Vec<_>>>()?;
    SeqDbInference::new(targets, kernels)
}
