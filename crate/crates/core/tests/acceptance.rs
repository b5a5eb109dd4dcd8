//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion (with indented detail lines above it) and
//! exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use subdiv_core::exact::{
    chi_square_divergence, conditional_history, estimator_moments, exact_joint, exact_kl, exact_marginal_output,
    exact_meta_distribution, exact_metainference_gap, exact_posterior, exact_subjective_divergence_expectation,
    exact_symmetrized_kl, EnumerableInference, EnumerableMeta, FiniteDistribution,
};
use subdiv_core::kernels::{
    check_detailed_balance, check_stationarity, cycle, gibbs_sweep, repeat, target_fn, ExactResample, GibbsSite,
    Identity, IndependenceProposal, LatticeRandomWalk, MetropolisHastings, SharedKernel, SharedTarget,
    SiteResimulation, Tabulated, TransitionKernel, UniformRandomWalk,
};
use subdiv_core::models::hmm::{default_hmm_fixture, hmm_fixture, two_state_fixture, Hmm};
use subdiv_core::models::linreg::{linreg_conjugate_posterior, linreg_fixture};
use subdiv_core::models::noisyor::{noisyor_annealing_schedule, noisyor_fixture};
use subdiv_core::models::tabular::{site_marginal_bridge, three_site_fixture, three_state_fixture, TabularModel};
use subdiv_core::models::toy::ToyBernoulli;
use subdiv_core::program::{InferenceReference, PriorSampler, SamplerReference};
use subdiv_core::seqdb::{
    asymptotic_gap, sequential_observation_targets, SeqDbHistory, SeqDbInference, TargetSequence,
};
use subdiv_core::smc::{
    pf_log_weight_estimate, ConditionalProposal, FfbsReference, ParticleFilter, PathModel, PriorProposal, Sir,
    SmcProposal,
};
use subdiv_core::{
    estimate_subjective_divergence_with, replicate_rng, Branch, Dataset, EnumerableModel, InferenceProgram,
    MetaInferenceProgram, Model, Replicates, Result,
};

struct Report {
    lines: Vec<String>,
    pass: bool,
}

impl Report {
    fn new() -> Self {
        Report {
            lines: Vec::new(),
            pass: true,
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn info(&mut self, line: String) {
        self.lines.push(format!("info {line}"));
    }
}

/// Exact `(E[D], symKL(q, posterior), meta-inference gap)`.
fn exact_terms<M, I, Mt>(model: &M, data: &Dataset<M::Obs>, inf: &I, meta: &Mt) -> Result<(f64, f64, f64)>
where
    M: EnumerableModel,
    M::Latent: Ord,
    I: EnumerableInference<Latent = M::Latent>,
    I::History: Ord + Clone,
    Mt: EnumerableMeta<Latent = M::Latent, History = I::History>,
{
    let post = exact_posterior(model, data)?;
    let d = exact_subjective_divergence_expectation(model, data, inf, meta, &post)?;
    let q = exact_marginal_output(inf)?;
    let sk = exact_symmetrized_kl(&q, &post)?;
    let gap = exact_metainference_gap(inf, meta, &post)?;
    Ok((d, sk, gap))
}

fn toy() -> (ToyBernoulli, Dataset<bool>) {
    ToyBernoulli::fixture()
}

fn hmm_path(f: &Hmm, steps: usize) -> PathModel<Hmm> {
    PathModel { ssm: f.clone(), steps }
}

/// Each enumerable fixture evaluated with an oracle reference.
fn enumerable_fixture_terms() -> Result<Vec<(String, (f64, f64, f64))>> {
    let mut out = Vec::new();
    let (model, data) = toy();
    for k in 1..=3 {
        let sir = Sir::new(&model, &data, k)?;
        out.push((
            format!("toy Bernoulli SIR K={k}"),
            exact_terms(&model, &data, &sir, &sir.meta())?,
        ));
    }
    let f = two_state_fixture(2, 1)?;
    let path = hmm_path(&f.model, 2);
    for k in 1..=2 {
        let pf = ParticleFilter::new(&f.model, &f.data, PriorProposal, k)?;
        out.push((
            format!("2-state HMM T=2 PF prior K={k}"),
            exact_terms(&path, &f.data, &pf, &pf.meta())?,
        ));
        let pf = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, k)?;
        out.push((
            format!("2-state HMM T=2 PF conditional K={k}"),
            exact_terms(&path, &f.data, &pf, &pf.meta())?,
        ));
    }
    Ok(out)
}

fn criterion_gap_identity(r: &mut Report) -> Result<()> {
    let terms = enumerable_fixture_terms()?;
    r.check(terms.len() >= 5, format!("{} fixtures", terms.len()));
    for (name, (d, sk, gap)) in terms {
        let resid = d - sk - gap;
        r.check(
            resid.abs() <= 1e-10,
            format!("{name}: D={d:.6} symKL={sk:.6} gap={gap:.6} residual={resid:.1e}"),
        );
    }
    Ok(())
}

/// Exact-resampling kernels for every target over the declared support.
fn exact_kernels(targets: &TargetSequence<Vec<usize>>) -> Result<Vec<SharedKernel<Vec<usize>>>> {
    let support = targets.support().expect("declared support").to_vec();
    targets
        .targets()
        .iter()
        .map(|t| Ok(Arc::new(ExactResample::new(Arc::clone(t), &support)?) as SharedKernel<Vec<usize>>))
        .collect()
}

/// MH kernels that resimulate the single site of the three-state model from
/// its prior, repeated twice.
fn site_mh_kernels(
    model: &TabularModel,
    targets: &TargetSequence<Vec<usize>>,
) -> Result<Vec<SharedKernel<Vec<usize>>>> {
    let prior: Vec<f64> = model.enumerate_latents().iter().map(|z| model.log_prior(z)).collect();
    let support = targets.support().expect("declared support").to_vec();
    targets
        .targets()
        .iter()
        .map(|t| {
            let mh: SharedKernel<Vec<usize>> = Arc::new(MetropolisHastings::new(
                Arc::clone(t),
                Arc::new(SiteResimulation {
                    site: 0,
                    site_log_probs: prior.clone(),
                }),
            ));
            Ok(Arc::new(Tabulated::new(Arc::new(repeat(mh, 2)?), &support)?) as SharedKernel<Vec<usize>>)
        })
        .collect()
}

fn three_state_targets() -> Result<(TabularModel, Dataset<usize>, TargetSequence<Vec<usize>>)> {
    let (model, data) = three_state_fixture();
    let support = model.enumerate_latents();
    let targets =
        sequential_observation_targets(Arc::new(model.clone()), Arc::new(data.clone()))?.with_support(support);
    Ok((model, data, targets))
}

/// Gibbs sweeps over every site, repeated `n` times, cached over `support`.
fn gibbs_kernels(
    targets: &TargetSequence<Vec<usize>>,
    domains: &[usize],
    frozen: &[usize],
    n: usize,
) -> Result<Vec<SharedKernel<Vec<usize>>>> {
    let support = targets.support().map(<[_]>::to_vec);
    targets
        .targets()
        .iter()
        .map(|t| {
            let sweep: SharedKernel<Vec<usize>> = Arc::new(gibbs_sweep(Arc::clone(t), domains, frozen)?);
            let rep: SharedKernel<Vec<usize>> = Arc::new(repeat(sweep, n)?);
            Ok(match &support {
                Some(s) => Arc::new(Tabulated::new(rep, s)?) as SharedKernel<Vec<usize>>,
                None => rep,
            })
        })
        .collect()
}

fn criterion_upper_bound(r: &mut Report) -> Result<()> {
    let mut terms = enumerable_fixture_terms()?;
    let (model, data, targets) = three_state_targets()?;
    let inf = SeqDbInference::new(targets.clone(), exact_kernels(&targets)?)?;
    terms.push((
        "3-state seqdb exact kernels".into(),
        exact_terms(&model, &data, &inf, &inf.meta())?,
    ));
    let inf = SeqDbInference::new(targets.clone(), site_mh_kernels(&model, &targets)?)?;
    terms.push((
        "3-state seqdb MH kernels".into(),
        exact_terms(&model, &data, &inf, &inf.meta())?,
    ));
    let (sites, sdata) = three_site_fixture();
    let bridge = site_marginal_bridge(&sites, &sdata, 2, 4)?;
    for frozen in [&[][..], &[2][..]] {
        let inf = SeqDbInference::new(bridge.clone(), gibbs_kernels(&bridge, &[2, 2, 2], frozen, 1)?)?;
        terms.push((
            format!("3-site seqdb Gibbs frozen={frozen:?}"),
            exact_terms(&sites, &sdata, &inf, &inf.meta())?,
        ));
    }
    let (net, ndata) = noisyor_fixture(4, 5, 2)?;
    let schedule = noisyor_annealing_schedule(&net, &ndata, 2)?;
    let inf = SeqDbInference::new(schedule.clone(), gibbs_kernels(&schedule, &[2; 4], &[], 1)?)?;
    terms.push((
        "4-cause noisy-or annealed Gibbs".into(),
        exact_terms(&net, &ndata, &inf, &inf.meta())?,
    ));
    for (name, (d, sk, _)) in &terms {
        r.check(*d >= sk - 1e-12, format!("{name}: D={d:.6} >= symKL={sk:.6}"));
    }

    let trials = 100;
    let (toy_model, toy_data) = toy();
    let sir = Sir::new(&toy_model, &toy_data, 2)?;
    let post = exact_posterior(&toy_model, &toy_data)?;
    let exact = exact_subjective_divergence_expectation(&toy_model, &toy_data, &sir, &sir.meta(), &post)?;
    let oracle = SamplerReference::oracle(post);
    let mut hits = 0;
    for seed in 0..trials {
        let est = estimate_subjective_divergence_with(
            &sir,
            &sir.meta(),
            &oracle,
            Replicates::new(2000, 2000, seed),
            |y, z| sir.log_weight(y, z),
        )?;
        hits += usize::from((est.estimate - exact).abs() <= 4.0 * est.stderr);
    }
    r.check(
        hits >= 95,
        format!("toy SIR K=2 Monte Carlo brackets exact {exact:.5} in {hits}/{trials} trials"),
    );

    let f = two_state_fixture(2, 1)?;
    let pf = ParticleFilter::new(&f.model, &f.data, PriorProposal, 2)?;
    let post = exact_posterior(&hmm_path(&f.model, 2), &f.data)?;
    let exact = exact_subjective_divergence_expectation(&hmm_path(&f.model, 2), &f.data, &pf, &pf.meta(), &post)?;
    let oracle = SamplerReference::oracle(post);
    let mut hits = 0;
    for seed in 0..trials {
        let est = estimate_subjective_divergence_with(
            &pf,
            &pf.meta(),
            &oracle,
            Replicates::new(2000, 2000, seed),
            |y, z| pf_log_weight_estimate(y, z),
        )?;
        hits += usize::from((est.estimate - exact).abs() <= 4.0 * est.stderr);
    }
    r.check(
        hits >= 95,
        format!("HMM PF K=2 Monte Carlo brackets exact {exact:.5} in {hits}/{trials} trials"),
    );
    Ok(())
}

fn pf_identity_runs<P: SmcProposal<Hmm> + Clone>(
    pf: &ParticleFilter<'_, Hmm, P>,
    runs: usize,
    stream: u64,
) -> Result<f64> {
    let meta = pf.meta();
    let mut worst = 0.0f64;
    for i in 0..runs {
        let mut rng = replicate_rng(stream, Branch::Inference, i);
        let (h, z) = pf.run(&mut rng)?;
        worst = worst.max((pf_log_weight_estimate(&h, &z)? - pf.slow_log_weight(&h, &z)?).abs());
        let hm = meta.run(&z, &mut rng)?;
        worst = worst.max((pf_log_weight_estimate(&hm, &z)? - pf.slow_log_weight(&hm, &z)?).abs());
    }
    Ok(worst)
}

fn criterion_weight_is_evidence(r: &mut Report) -> Result<()> {
    let f = hmm_fixture(2, 3, 10, 5)?;
    let mut worst = 0.0f64;
    let mut total = 0;
    for (i, k) in [1usize, 2, 3, 4, 8, 16].into_iter().enumerate() {
        // 5000 filter runs and 5000 CSMC runs, split over proposals and K
        let runs = 10_000 / 2 / 12 + usize::from(i < 10_000 / 2 % 12);
        let prior = ParticleFilter::new(&f.model, &f.data, PriorProposal, k)?;
        let cond = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, k)?;
        worst = worst.max(pf_identity_runs(&prior, runs, 100 + i as u64)?);
        worst = worst.max(pf_identity_runs(&cond, runs, 200 + i as u64)?);
        total += 4 * runs;
    }
    let f = hmm_fixture(3, 3, 7, 6)?;
    let pf = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, 5)?;
    worst = worst.max(pf_identity_runs(&pf, 100, 300)?);
    total += 200;
    r.check(
        total >= 10_000 && worst <= 1e-9,
        format!("{total} PF and CSMC runs, max |fast - slow| = {worst:.2e}"),
    );
    Ok(())
}

fn criterion_ais_gap(r: &mut Report) -> Result<()> {
    let (model, data, targets) = three_state_targets()?;
    r.check(
        targets.len() + 1 == 4,
        format!("{} targets including p_0", targets.len() + 1),
    );
    let inf = SeqDbInference::new(targets.clone(), exact_kernels(&targets)?)?;
    let meta = inf.meta();
    let post = exact_posterior(&model, &data)?;
    let gap = asymptotic_gap(&targets)?;
    let exact = exact_subjective_divergence_expectation(&model, &data, &inf, &meta, &post)?;
    r.check(
        (exact - gap).abs() <= 1e-10,
        format!("exact D={exact:.12} asymptotic gap={gap:.12}"),
    );
    let oracle = SamplerReference::oracle(post);
    let est = estimate_subjective_divergence_with(
        &inf,
        &meta,
        &oracle,
        Replicates::new(2000, 2000, 4),
        |y: &SeqDbHistory<_>, _| inf.log_weight(y),
    )?;
    r.check(
        (est.estimate - gap).abs() <= 4.0 * est.stderr,
        format!("Monte Carlo {:.4} ± {:.4} vs gap {gap:.4}", est.estimate, est.stderr),
    );
    Ok(())
}

fn criterion_single_particle(r: &mut Report) -> Result<()> {
    let f = two_state_fixture(3, 2)?;
    let path = hmm_path(&f.model, 3);
    for (name, (d, sk, gap)) in [
        ("prior proposal", {
            let pf = ParticleFilter::new(&f.model, &f.data, PriorProposal, 1)?;
            exact_terms(&path, &f.data, &pf, &pf.meta())?
        }),
        ("conditional proposal", {
            let pf = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, 1)?;
            exact_terms(&path, &f.data, &pf, &pf.meta())?
        }),
    ] {
        r.check(
            (d - sk).abs() <= 1e-10,
            format!("K=1 {name}: D={d:.12} symKL={sk:.12} gap={gap:.1e}"),
        );
    }
    Ok(())
}

/// Per-output checks of both marginal density estimators.
fn estimator_checks<I, Mt>(r: &mut Report, name: &str, inf: &I, meta: &Mt, unbiasedness: bool) -> Result<()>
where
    I: EnumerableInference,
    I::History: Ord + Clone,
    I::Latent: Ord + Clone + std::fmt::Debug,
    Mt: EnumerableMeta<Latent = I::Latent, History = I::History>,
{
    let joint = exact_joint(inf)?;
    let q = exact_marginal_output(inf)?;
    let (mut w_is, mut w_hm, mut w_bias_is, mut w_bias_hm, mut w_var) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for z in q.support() {
        let m = estimator_moments(inf, meta, z)?;
        let qz = m.log_q.exp();
        w_is = w_is.max((m.mean_is - qz).abs());
        w_hm = w_hm.max((m.mean_inv_hm * qz - 1.0).abs());
        let cond = conditional_history(&joint, z)?;
        let meta_dist: FiniteDistribution<I::History> = exact_meta_distribution(meta, z)?;
        w_bias_is = w_bias_is.max((m.log_q - m.mean_log_is - exact_kl(&meta_dist, &cond)?).abs());
        w_bias_hm = w_bias_hm.max((m.mean_log_hm - m.log_q - exact_kl(&cond, &meta_dist)?).abs());
        w_var = w_var.max((m.var_is_ratio - chi_square_divergence(&meta_dist, &cond)?).abs());
    }
    let n = q.len();
    if unbiasedness {
        r.check(
            w_is <= 1e-12,
            format!("{name}: max |E[q̂_IS] - q(z)| = {w_is:.1e} over {n} outputs"),
        );
        r.check(w_hm <= 1e-12, format!("{name}: max |q(z) E[1/q̂_HM] - 1| = {w_hm:.1e}"));
    } else {
        r.check(
            w_bias_is <= 1e-12,
            format!("{name}: IS log bias vs KL(m || q(y|z)) max error {w_bias_is:.1e}"),
        );
        r.check(
            w_bias_hm <= 1e-12,
            format!("{name}: HM log bias vs KL(q(y|z) || m) max error {w_bias_hm:.1e}"),
        );
        r.check(
            w_var <= 1e-10,
            format!("{name}: Var(q̂_IS/q) vs chi-square max error {w_var:.1e}"),
        );
    }
    Ok(())
}

fn estimator_fixtures(r: &mut Report, unbiasedness: bool) -> Result<()> {
    let (model, data) = toy();
    for k in [2, 3] {
        let sir = Sir::new(&model, &data, k)?;
        estimator_checks(r, &format!("toy SIR K={k}"), &sir, &sir.meta(), unbiasedness)?;
    }
    let (tmodel, _, targets) = three_state_targets()?;
    let inf = SeqDbInference::new(targets.clone(), site_mh_kernels(&tmodel, &targets)?)?;
    estimator_checks(r, "3-state seqdb MH", &inf, &inf.meta(), unbiasedness)?;
    let (sites, sdata) = three_site_fixture();
    let bridge = site_marginal_bridge(&sites, &sdata, 2, 3)?;
    let inf = SeqDbInference::new(bridge.clone(), gibbs_kernels(&bridge, &[2, 2, 2], &[], 1)?)?;
    estimator_checks(r, "3-site seqdb Gibbs", &inf, &inf.meta(), unbiasedness)?;
    let f = two_state_fixture(2, 1)?;
    let pf = ParticleFilter::new(&f.model, &f.data, PriorProposal, 2)?;
    estimator_checks(r, "HMM PF prior K=2", &pf, &pf.meta(), unbiasedness)?;
    let pf = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, 2)?;
    estimator_checks(r, "HMM PF conditional K=2", &pf, &pf.meta(), unbiasedness)?;
    Ok(())
}

fn criterion_unbiasedness(r: &mut Report) -> Result<()> {
    estimator_fixtures(r, true)
}

fn criterion_bias_identities(r: &mut Report) -> Result<()> {
    estimator_fixtures(r, false)
}

fn detailed_balance_fixtures() -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let (sites, sdata) = three_site_fixture();
    let joint: SharedTarget<Vec<usize>> = {
        let (m, d) = (sites.clone(), sdata.clone());
        target_fn(move |z: &Vec<usize>| m.log_joint(z, &d))
    };
    let post = exact_posterior(&sites, &sdata)?;
    let prior_dist = subdiv_core::exact::exact_prior(&sites)?;
    let support = sites.enumerate_latents();
    let mut db = |name: &str, k: &dyn TransitionKernel<Vec<usize>>| -> Result<()> {
        out.push((name.to_string(), check_detailed_balance(k, &post)?));
        Ok(())
    };
    for s in 0..3 {
        db(&format!("Gibbs site {s}"), &GibbsSite::new(Arc::clone(&joint), s, 2))?;
        let site_prior: Vec<f64> = vec![0.5f64.ln(); 2];
        db(
            &format!("MH site resimulation {s}"),
            &MetropolisHastings::new(
                Arc::clone(&joint),
                Arc::new(SiteResimulation {
                    site: s,
                    site_log_probs: site_prior,
                }),
            ),
        )?;
    }
    db(
        "MH prior resimulation",
        &MetropolisHastings::new(
            Arc::clone(&joint),
            Arc::new(IndependenceProposal::from_distribution(prior_dist)),
        ),
    )?;
    db("exact resample", &ExactResample::new(Arc::clone(&joint), &support)?)?;
    db("identity", &Identity::new(Arc::clone(&joint)))?;
    let g0: SharedKernel<Vec<usize>> = Arc::new(GibbsSite::new(Arc::clone(&joint), 0, 2));
    db("repeat(Gibbs site 0, 3)", &repeat(Arc::clone(&g0), 3)?)?;
    db("tabulated Gibbs site 0", &Tabulated::new(Arc::clone(&g0), &support)?)?;
    let g1: SharedKernel<Vec<usize>> = Arc::new(GibbsSite::new(Arc::clone(&joint), 1, 2));
    let g2: SharedKernel<Vec<usize>> = Arc::new(GibbsSite::new(Arc::clone(&joint), 2, 2));
    db(
        "palindromic Gibbs sweep",
        &cycle(vec![Arc::clone(&g0), Arc::clone(&g1), g2, g1, g0])?,
    )?;

    // random walks on a lattice, the discrete stand-in for the continuous walk
    let weights: [f64; 5] = [0.1, 0.4, 0.2, 0.05, 0.25];
    let lattice: SharedTarget<usize> =
        target_fn(move |u: &usize| weights.get(*u).map_or(f64::NEG_INFINITY, |w| w.ln()));
    let lattice_dist = FiniteDistribution::from_log_weights((0..5).map(|u| (u, weights[u].ln())))?;
    for width in [1, 2] {
        let k = MetropolisHastings::new(Arc::clone(&lattice), Arc::new(LatticeRandomWalk { width, size: 5 }));
        out.push((
            format!("MH lattice random walk width {width}"),
            check_detailed_balance(&k, &lattice_dist)?,
        ));
    }

    let (net, ndata) = noisyor_fixture(4, 5, 2)?;
    let npost = exact_posterior(&net, &ndata)?;
    let ntarget: SharedTarget<Vec<usize>> = target_fn(move |z: &Vec<usize>| net.log_joint(z, &ndata));
    for s in 0..4 {
        let k = GibbsSite::new(Arc::clone(&ntarget), s, 2);
        out.push((format!("noisy-or Gibbs site {s}"), check_detailed_balance(&k, &npost)?));
    }
    Ok(out)
}

fn criterion_detailed_balance(r: &mut Report) -> Result<()> {
    for (name, v) in detailed_balance_fixtures()? {
        r.check(v <= 1e-10, format!("{name}: detailed balance violation {v:.1e}"));
    }
    let (sites, sdata) = three_site_fixture();
    let joint: SharedTarget<Vec<usize>> = {
        let (m, d) = (sites.clone(), sdata.clone());
        target_fn(move |z: &Vec<usize>| m.log_joint(z, &d))
    };
    let post = exact_posterior(&sites, &sdata)?;
    let sweep = gibbs_sweep(Arc::clone(&joint), &[2, 2, 2], &[])?;
    let v = check_stationarity(&sweep, &post)?;
    r.check(
        v <= 1e-10,
        format!("one-way Gibbs sweep (cycle): stationarity violation {v:.1e}"),
    );
    let frozen = gibbs_sweep(joint, &[2, 2, 2], &[2])?;
    r.check(
        frozen.sites() == vec![0, 1],
        format!("frozen sweep declares sites {:?}", frozen.sites()),
    );

    let bridge = site_marginal_bridge(&sites, &sdata, 2, 4)?;
    let oracle = SamplerReference::oracle(post);
    let reps = Replicates::new(2000, 2000, 8);
    let efforts = [1usize, 2, 4, 8, 16];
    let mut profile = Vec::new();
    for frozen in [&[2][..], &[][..]] {
        let mut row = Vec::new();
        for &n in &efforts {
            let inf = SeqDbInference::new(bridge.clone(), gibbs_kernels(&bridge, &[2, 2, 2], frozen, n)?)?;
            let est =
                estimate_subjective_divergence_with(&inf, &inf.meta(), &oracle, reps, |y: &SeqDbHistory<_>, _| {
                    inf.log_weight(y)
                })?;
            let lls: Vec<f64> = (0..reps.n_inf)
                .map(|i| {
                    let (_, z) = inf.run(&mut replicate_rng(reps.seed, Branch::Inference, i))?;
                    Ok(sites.log_likelihood(&z, &sdata))
                })
                .collect::<Result<_>>()?;
            let (ll, ll_se) = subdiv_core::summarize_log_weights(&lls)?;
            row.push((n, est.estimate, est.stderr, ll, ll_se));
        }
        profile.push(row);
    }
    let (bug, ok) = (&profile[0], &profile[1]);
    for (b, c) in bug.iter().zip(ok) {
        r.info(format!(
            "effort {:>2}: frozen D={:.3}±{:.3} E[log lik]={:.3}±{:.3} | full sweep D={:.3}±{:.3} E[log lik]={:.3}",
            b.0, b.1, b.2, b.3, b.4, c.1, c.2, c.3
        ));
    }
    let first = bug[0];
    for p in &bug[1..] {
        let se = first.2.hypot(p.2);
        r.check(
            p.1 >= first.1 - 2.0 * se,
            format!("frozen D at effort {} does not drop below effort 1 (2·stderr)", p.0),
        );
    }
    let last = bug[bug.len() - 1];
    r.check(
        last.3 - first.3 > 2.0 * first.4.hypot(last.4),
        format!(
            "frozen E[log lik] improves {:.3} -> {:.3} beyond 2·stderr",
            first.3, last.3
        ),
    );
    Ok(())
}

fn criterion_orderings(r: &mut Report) -> Result<()> {
    let f = default_hmm_fixture(1)?;
    let oracle = FfbsReference::new(&f.model, &f.data)?;
    for (i, k) in [1usize, 2, 4, 8, 16].into_iter().enumerate() {
        let reps = Replicates::new(1000, 1000, 50 + i as u64);
        let pf = ParticleFilter::new(&f.model, &f.data, PriorProposal, k)?;
        let a =
            estimate_subjective_divergence_with(&pf, &pf.meta(), &oracle, reps, |y, z| pf_log_weight_estimate(y, z))?;
        let pf = ParticleFilter::new(&f.model, &f.data, ConditionalProposal, k)?;
        let b =
            estimate_subjective_divergence_with(&pf, &pf.meta(), &oracle, reps, |y, z| pf_log_weight_estimate(y, z))?;
        r.check(
            b.estimate + 2.0 * a.stderr.hypot(b.stderr) < a.estimate,
            format!(
                "HMM 40/2/3 K={k}: conditional {:.3}±{:.3} < prior {:.3}±{:.3}",
                b.estimate, b.stderr, a.estimate, a.stderr
            ),
        );
    }

    let (model, data) = linreg_fixture(1)?;
    let oracle = SamplerReference::oracle(linreg_conjugate_posterior(&model, &data)?);
    let lw64 = InferenceReference::approximate(Sir::new(&model, &data, 64)?);
    let lw2 = InferenceReference::approximate(Sir::new(&model, &data, 2)?);
    let targets = sequential_observation_targets(Arc::new(model.clone()), Arc::new(data.clone()))?;
    for n in [1usize, 2, 4, 8] {
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
                        half_widths: vec![0.5, 0.5],
                    }),
                ));
                Ok(Arc::new(repeat(Arc::new(cycle(vec![resim, walk])?), n)?) as SharedKernel<Vec<f64>>)
            })
            .collect::<Result<Vec<_>>>()?;
        let inf = SeqDbInference::new(targets.clone(), kernels)?;
        let meta = inf.meta();
        let reps = Replicates::new(1000, 1000, 70 + n as u64);
        let w = |y: &SeqDbHistory<Vec<f64>>, _: &Vec<f64>| inf.log_weight(y);
        let a = estimate_subjective_divergence_with(&inf, &meta, &oracle, reps, w)?;
        let b = estimate_subjective_divergence_with(&inf, &meta, &lw64, reps, w)?;
        let c = estimate_subjective_divergence_with(&inf, &meta, &lw2, reps, w)?;
        r.check(
            (a.estimate - b.estimate).abs() <= 3.0 * a.stderr.hypot(b.stderr),
            format!(
                "linreg MH sweeps={n}: conjugate oracle {:.3}±{:.3} vs LW-SIR(64) {:.3}±{:.3}",
                a.estimate, a.stderr, b.estimate, b.stderr
            ),
        );
        r.info(format!(
            "linreg MH sweeps={n}: LW-SIR(2) reference gives {:.3}±{:.3}",
            c.estimate, c.stderr
        ));
    }
    Ok(())
}

type Criterion = fn(&mut Report) -> Result<()>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, Duration); 9] = [
        (
            "1 meta-inference gap identity",
            criterion_gap_identity,
            Duration::from_secs(10),
        ),
        (
            "2 oracle upper bound and Monte Carlo bracketing",
            criterion_upper_bound,
            Duration::from_secs(120),
        ),
        (
            "3 particle filter weight equals evidence estimate",
            criterion_weight_is_evidence,
            Duration::from_secs(60),
        ),
        ("4 AIS asymptotic gap", criterion_ais_gap, Duration::from_secs(300)),
        (
            "5 single-particle exactness",
            criterion_single_particle,
            Duration::from_secs(300),
        ),
        (
            "6 unbiasedness of marginal density estimators",
            criterion_unbiasedness,
            Duration::from_secs(300),
        ),
        (
            "7 estimator bias and variance identities",
            criterion_bias_identities,
            Duration::from_secs(300),
        ),
        (
            "8 detailed balance and frozen-site detection",
            criterion_detailed_balance,
            Duration::from_secs(300),
        ),
        (
            "9 qualitative profile orderings",
            criterion_orderings,
            Duration::from_secs(300),
        ),
    ];
    let mut failures = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let mut report = Report::new();
        let outcome = run(&mut report);
        let elapsed = start.elapsed();
        for line in &report.lines {
            println!("    {line}");
        }
        let pass = match outcome {
            Ok(()) => report.pass && elapsed <= budget,
            Err(e) => {
                println!("    error: {e}");
                false
            }
        };
        if elapsed > budget {
            println!("    over time budget of {budget:?}");
        }
        failures += usize::from(!pass);
        println!(
            "{} {name} ({:.2}s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
