//! Markov transition kernels with detailed-balance guarantees.
//!
//! A kernel carries a shared handle to the unnormalized log target it leaves
//! invariant. Sequential inference compares these handles by identity, so a
//! kernel built against a stale copy of a target is caught before it runs.
//!
//! Kernels that can list their transition row `k(· | u)` do so through
//! [`TransitionKernel::transition_row`]; that is what the exact oracles and
//! [`check_detailed_balance`] consume. Production runs only call `step`.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::exact::FiniteDistribution;
use crate::math::{logaddexp, logsumexp, sample_log_categorical};

/// Bound shared by every kernel state type.
pub trait State: Clone + PartialEq + Send + Sync + 'static {}

impl<T: Clone + PartialEq + Send + Sync + 'static> State for T {}

/// An unnormalized log density.
pub trait LogDensity<S>: Send + Sync {
    fn log_density(&self, state: &S) -> f64;
}

impl<S, F> LogDensity<S> for F
where
    F: Fn(&S) -> f64 + Send + Sync,
{
    fn log_density(&self, state: &S) -> f64 {
        self(state)
    }
}

pub type SharedTarget<S> = Arc<dyn LogDensity<S>>;

/// Wraps a closure as a shared target.
pub fn target_fn<S, F>(f: F) -> SharedTarget<S>
where
    F: Fn(&S) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Whether two handles refer to the same target object.
pub fn same_target<S>(a: &SharedTarget<S>, b: &SharedTarget<S>) -> bool {
    std::ptr::eq(Arc::as_ptr(a) as *const (), Arc::as_ptr(b) as *const ())
}

/// A Markov kernel `k(u' | u)` leaving `target` invariant.
pub trait TransitionKernel<S: State>: Send + Sync {
    fn target(&self) -> &SharedTarget<S>;

    fn step(&self, state: &S, rng: &mut dyn RngCore) -> Result<S>;

    /// Every reachable `(u', log k(u' | u))`, duplicates merged.
    ///
    /// Kernels on continuous spaces return [`Error::DensityUnavailable`].
    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>>;

    fn transition_log_prob(&self, from: &S, to: &S) -> Result<f64> {
        Ok(self
            .transition_row(from)?
            .into_iter()
            .find(|(s, _)| s == to)
            .map_or(f64::NEG_INFINITY, |(_, lp)| lp))
    }

    /// Latent sites this kernel may change. Empty means "all of them".
    fn sites(&self) -> Vec<usize> {
        Vec::new()
    }

    /// The time reversal of this kernel with respect to its target. A kernel
    /// in detailed balance is its own reversal.
    fn reversed(self: Arc<Self>) -> SharedKernel<S>;
}

pub type SharedKernel<S> = Arc<dyn TransitionKernel<S>>;

fn merge_row<S: PartialEq>(entries: Vec<(S, f64)>) -> Vec<(S, f64)> {
    let mut merged: Vec<(S, f64)> = Vec::with_capacity(entries.len());
    for (s, lp) in entries {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        match merged.iter_mut().find(|(m, _)| *m == s) {
            Some(slot) => slot.1 = logaddexp(slot.1, lp),
            None => merged.push((s, lp)),
        }
    }
    merged
}

fn entry_log_target<S>(target: &SharedTarget<S>, state: &S) -> Result<f64> {
    let lp = target.log_density(state);
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(Error::support(format!(
            "kernel entered at a state with log target {lp}"
        )))
    }
}

/// The kernel that never moves.
pub struct Identity<S> {
    target: SharedTarget<S>,
}

impl<S: State> Identity<S> {
    pub fn new(target: SharedTarget<S>) -> Self {
        Identity { target }
    }
}

impl<S: State> TransitionKernel<S> for Identity<S> {
    fn target(&self) -> &SharedTarget<S> {
        &self.target
    }

    fn step(&self, state: &S, _: &mut dyn RngCore) -> Result<S> {
        Ok(state.clone())
    }

    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>> {
        Ok(vec![(from.clone(), 0.0)])
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        self
    }
}

/// A Metropolis-Hastings proposal `q(u' | u)`.
pub trait Proposal<S>: Send + Sync {
    fn sample(&self, from: &S, rng: &mut dyn RngCore) -> S;

    fn log_density(&self, from: &S, to: &S) -> f64;

    /// Every `u'` with `q(u' | u) > 0`, when finite.
    fn support(&self, _from: &S) -> Option<Vec<S>> {
        None
    }
}

/// Independence proposal drawing from a fixed distribution, typically the
/// prior (resimulation MH).
pub struct IndependenceProposal<S> {
    sampler: Box<dyn Fn(&mut dyn RngCore) -> S + Send + Sync>,
    density: Box<dyn Fn(&S) -> f64 + Send + Sync>,
    support: Option<Vec<S>>,
}

impl<S: State> IndependenceProposal<S> {
    pub fn new<F, G>(sampler: F, density: G) -> Self
    where
        F: Fn(&mut dyn RngCore) -> S + Send + Sync + 'static,
        G: Fn(&S) -> f64 + Send + Sync + 'static,
    {
        IndependenceProposal {
            sampler: Box::new(sampler),
            density: Box::new(density),
            support: None,
        }
    }

    /// Proposal from an assessable program such as [`crate::program::PriorSampler`].
    pub fn from_assessable<A>(program: A) -> Self
    where
        A: crate::program::AssessableInference<Latent = S> + Send + 'static,
    {
        let program = Arc::new(program);
        let p2 = Arc::clone(&program);
        Self::new(move |rng| program.sample(rng), move |s| p2.log_density(s))
    }

    /// Declares the finite support so the kernel can list its rows.
    pub fn with_support(mut self, support: Vec<S>) -> Self {
        self.support = Some(support);
        self
    }
}

impl<S: State + Ord> IndependenceProposal<S> {
    pub fn from_distribution(dist: FiniteDistribution<S>) -> Self {
        let support = dist.support().to_vec();
        let d2 = dist.clone();
        use crate::program::AssessableInference;
        Self::new(move |rng| dist.sample(rng), move |s| d2.log_prob(s)).with_support(support)
    }
}

impl<S: State> Proposal<S> for IndependenceProposal<S> {
    fn sample(&self, _: &S, rng: &mut dyn RngCore) -> S {
        (self.sampler)(rng)
    }

    fn log_density(&self, _: &S, to: &S) -> f64 {
        (self.density)(to)
    }

    fn support(&self, _: &S) -> Option<Vec<S>> {
        self.support.clone()
    }
}

/// Resimulates one site of a vector state from a per-site distribution.
pub struct SiteResimulation {
    pub site: usize,
    /// Log probabilities of each value of the site.
    pub site_log_probs: Vec<f64>,
}

impl Proposal<Vec<usize>> for SiteResimulation {
    fn sample(&self, from: &Vec<usize>, rng: &mut dyn RngCore) -> Vec<usize> {
        let mut next = from.clone();
        next[self.site] = sample_log_categorical(&self.site_log_probs, rng).expect("site distribution has mass");
        next
    }

    fn log_density(&self, from: &Vec<usize>, to: &Vec<usize>) -> f64 {
        let others_equal = from
            .iter()
            .zip(to)
            .enumerate()
            .all(|(i, (a, b))| i == self.site || a == b);
        if !others_equal {
            return f64::NEG_INFINITY;
        }
        self.site_log_probs
            .get(to[self.site])
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn support(&self, from: &Vec<usize>) -> Option<Vec<Vec<usize>>> {
        Some(
            (0..self.site_log_probs.len())
                .filter(|&v| self.site_log_probs[v] > f64::NEG_INFINITY)
                .map(|v| {
                    let mut next = from.clone();
                    next[self.site] = v;
                    next
                })
                .collect(),
        )
    }
}

/// Symmetric random walk on `0..size`: move by a uniform offset in
/// `-width..=width`, staying put when the offset leaves the lattice.
pub struct LatticeRandomWalk {
    pub width: usize,
    pub size: usize,
}

impl LatticeRandomWalk {
    fn log_step(&self) -> f64 {
        -((2 * self.width + 1) as f64).ln()
    }
}

impl Proposal<usize> for LatticeRandomWalk {
    fn sample(&self, from: &usize, rng: &mut dyn RngCore) -> usize {
        if self.width == 0 {
            return *from;
        }
        let offset = rng.random_range(0..=2 * self.width) as isize - self.width as isize;
        let to = *from as isize + offset;
        if to < 0 || to >= self.size as isize {
            *from
        } else {
            to as usize
        }
    }

    fn log_density(&self, from: &usize, to: &usize) -> f64 {
        let d = from.abs_diff(*to);
        if d > self.width || *to >= self.size {
            return f64::NEG_INFINITY;
        }
        if d > 0 {
            return self.log_step();
        }
        let lo = from.saturating_sub(self.width);
        let hi = (*from + self.width).min(self.size - 1);
        let inside = hi - lo + 1;
        // staying includes every offset that leaves the lattice
        (((2 * self.width + 1) - inside + 1) as f64).ln() + self.log_step()
    }

    fn support(&self, from: &usize) -> Option<Vec<usize>> {
        let lo = from.saturating_sub(self.width);
        let hi = (*from + self.width).min(self.size.saturating_sub(1));
        Some((lo..=hi).collect())
    }
}

/// A state with real coordinates, for continuous random walks.
pub trait RealCoordinates: State {
    fn coordinates(&self) -> Vec<f64>;
    fn from_coordinates(coords: &[f64]) -> Self;
}

impl RealCoordinates for Vec<f64> {
    fn coordinates(&self) -> Vec<f64> {
        self.clone()
    }

    fn from_coordinates(coords: &[f64]) -> Self {
        coords.to_vec()
    }
}

/// Per-coordinate uniform random walk: `u'_i ~ U(u_i - h_i, u_i + h_i)`.
pub struct UniformRandomWalk {
    pub half_widths: Vec<f64>,
}

impl<S: RealCoordinates> Proposal<S> for UniformRandomWalk {
    fn sample(&self, from: &S, rng: &mut dyn RngCore) -> S {
        let coords: Vec<f64> = from
            .coordinates()
            .iter()
            .zip(&self.half_widths)
            .map(|(&x, &h)| {
                if h > 0.0 {
                    x + h * (2.0 * rng.random::<f64>() - 1.0)
                } else {
                    x
                }
            })
            .collect();
        S::from_coordinates(&coords)
    }

    fn log_density(&self, from: &S, to: &S) -> f64 {
        let mut lp = 0.0;
        for ((a, b), &h) in from.coordinates().iter().zip(to.coordinates()).zip(&self.half_widths) {
            if h > 0.0 {
                if (a - b).abs() > h {
                    return f64::NEG_INFINITY;
                }
                lp -= (2.0 * h).ln();
            } else if *a != b {
                return f64::NEG_INFINITY;
            }
        }
        lp
    }
}

/// Metropolis-Hastings with an arbitrary proposal.
pub struct MetropolisHastings<S> {
    target: SharedTarget<S>,
    acceptance: SharedTarget<S>,
    proposal: Arc<dyn Proposal<S>>,
    sites: Vec<usize>,
}

impl<S: State> MetropolisHastings<S> {
    pub fn new(target: SharedTarget<S>, proposal: Arc<dyn Proposal<S>>) -> Self {
        MetropolisHastings {
            acceptance: Arc::clone(&target),
            target,
            proposal,
            sites: Vec::new(),
        }
    }

    /// A broken kernel that declares `target` but accepts against `stale`.
    /// Exists to exercise [`check_detailed_balance`].
    pub fn with_stale_acceptance(
        target: SharedTarget<S>,
        stale: SharedTarget<S>,
        proposal: Arc<dyn Proposal<S>>,
    ) -> Self {
        MetropolisHastings {
            target,
            acceptance: stale,
            proposal,
            sites: Vec::new(),
        }
    }

    pub fn touching(mut self, sites: Vec<usize>) -> Self {
        self.sites = sites;
        self
    }

    fn log_accept(&self, from: &S, from_lp: f64, to: &S) -> f64 {
        let to_lp = self.acceptance.log_density(to);
        if to_lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let ratio = to_lp - from_lp + self.proposal.log_density(to, from) - self.proposal.log_density(from, to);
        ratio.min(0.0)
    }
}

impl<S: State> TransitionKernel<S> for MetropolisHastings<S> {
    fn target(&self) -> &SharedTarget<S> {
        &self.target
    }

    fn step(&self, state: &S, rng: &mut dyn RngCore) -> Result<S> {
        let from_lp = entry_log_target(&self.acceptance, state)?;
        let proposed = self.proposal.sample(state, rng);
        let log_a = self.log_accept(state, from_lp, &proposed);
        if rng.random::<f64>().ln() < log_a {
            Ok(proposed)
        } else {
            Ok(state.clone())
        }
    }

    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>> {
        let support = self
            .proposal
            .support(from)
            .ok_or(Error::DensityUnavailable("MH proposal without finite support"))?;
        let from_lp = entry_log_target(&self.acceptance, from)?;
        let mut row = Vec::with_capacity(support.len() + 1);
        let mut moved = 0.0;
        for to in support {
            if to == *from {
                continue;
            }
            let lp = self.proposal.log_density(from, &to) + self.log_accept(from, from_lp, &to);
            if lp > f64::NEG_INFINITY {
                moved += lp.exp();
                row.push((to, lp));
            }
        }
        let stay = (1.0 - moved).max(0.0);
        row.push((from.clone(), stay.ln()));
        Ok(merge_row(row))
    }

    fn sites(&self) -> Vec<usize> {
        self.sites.clone()
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        self
    }
}

/// Resimulation MH: independence proposal from the prior.
pub fn mh_resimulation_step<S: State>(
    state: &S,
    target: &SharedTarget<S>,
    proposal: &IndependenceProposal<S>,
    rng: &mut dyn RngCore,
) -> Result<S> {
    let from_lp = entry_log_target(target, state)?;
    let proposed = proposal.sample(state, rng);
    let to_lp = target.log_density(&proposed);
    let log_a = to_lp - from_lp + proposal.log_density(&proposed, state) - proposal.log_density(state, &proposed);
    if to_lp > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_a {
        Ok(proposed)
    } else {
        Ok(state.clone())
    }
}

/// Random-walk MH with per-coordinate uniform proposal half-widths.
pub fn mh_random_walk_step<S: RealCoordinates>(
    state: &S,
    target: &SharedTarget<S>,
    half_widths: &[f64],
    rng: &mut dyn RngCore,
) -> Result<S> {
    let from_lp = entry_log_target(target, state)?;
    let proposal = UniformRandomWalk {
        half_widths: half_widths.to_vec(),
    };
    let proposed: S = proposal.sample(state, rng);
    let to_lp = target.log_density(&proposed);
    if to_lp > f64::NEG_INFINITY && rng.random::<f64>().ln() < to_lp - from_lp {
        Ok(proposed)
    } else {
        Ok(state.clone())
    }
}

fn site_conditional(
    target: &SharedTarget<Vec<usize>>,
    state: &[usize],
    site: usize,
    domain: usize,
) -> Result<Vec<f64>> {
    let mut scratch = state.to_vec();
    let mut log_w: Vec<f64> = (0..domain)
        .map(|v| {
            scratch[site] = v;
            target.log_density(&scratch)
        })
        .collect();
    let lse = logsumexp(&log_w);
    if lse == f64::NEG_INFINITY {
        return Err(Error::EmptyConditional(site));
    }
    for w in &mut log_w {
        *w -= lse;
    }
    Ok(log_w)
}

/// Resamples `state[site]` from its exact conditional under `target`.
pub fn gibbs_single_site_step(
    state: &[usize],
    target: &SharedTarget<Vec<usize>>,
    site: usize,
    domain: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    let cond = site_conditional(target, state, site, domain)?;
    let mut next = state.to_vec();
    next[site] = sample_log_categorical(&cond, rng).ok_or(Error::EmptyConditional(site))?;
    Ok(next)
}

/// Single-site Gibbs on a vector of finite-domain sites.
pub struct GibbsSite {
    target: SharedTarget<Vec<usize>>,
    pub site: usize,
    pub domain: usize,
}

impl GibbsSite {
    pub fn new(target: SharedTarget<Vec<usize>>, site: usize, domain: usize) -> Self {
        GibbsSite { target, site, domain }
    }
}

impl TransitionKernel<Vec<usize>> for GibbsSite {
    fn target(&self) -> &SharedTarget<Vec<usize>> {
        &self.target
    }

    fn step(&self, state: &Vec<usize>, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        gibbs_single_site_step(state, &self.target, self.site, self.domain, rng)
    }

    fn transition_row(&self, from: &Vec<usize>) -> Result<Vec<(Vec<usize>, f64)>> {
        let cond = site_conditional(&self.target, from, self.site, self.domain)?;
        Ok(merge_row(
            cond.into_iter()
                .enumerate()
                .map(|(v, lp)| {
                    let mut next = from.clone();
                    next[self.site] = v;
                    (next, lp)
                })
                .collect(),
        ))
    }

    fn sites(&self) -> Vec<usize> {
        vec![self.site]
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<Vec<usize>> {
        self
    }
}

/// Gibbs sweep over `domains.len()` sites in index order, skipping the sites
/// listed in `frozen`.
///
/// Passing a non-empty `frozen` builds a kernel that silently never updates
/// part of the state while still targeting the full distribution.
pub fn gibbs_sweep(target: SharedTarget<Vec<usize>>, domains: &[usize], frozen: &[usize]) -> Result<Cycle<Vec<usize>>> {
    let kernels: Vec<SharedKernel<Vec<usize>>> = domains
        .iter()
        .enumerate()
        .filter(|(site, _)| !frozen.contains(site))
        .map(|(site, &domain)| Arc::new(GibbsSite::new(Arc::clone(&target), site, domain)) as SharedKernel<Vec<usize>>)
        .collect();
    if kernels.is_empty() {
        return Ok(Cycle {
            target: Arc::clone(&target),
            kernels: vec![Arc::new(Identity::new(target))],
        });
    }
    Cycle::new(kernels)
}

/// `k(u' | u) = p(u')`: a perfect kernel that resamples the target exactly.
pub struct ExactResample<S> {
    target: SharedTarget<S>,
    distribution: FiniteDistribution<S>,
}

impl<S: State + Ord> ExactResample<S> {
    /// Normalizes `target` over `support`.
    pub fn new(target: SharedTarget<S>, support: &[S]) -> Result<Self> {
        let distribution =
            FiniteDistribution::from_log_weights(support.iter().map(|s| (s.clone(), target.log_density(s))))?;
        Ok(ExactResample { target, distribution })
    }

    pub fn distribution(&self) -> &FiniteDistribution<S> {
        &self.distribution
    }
}

impl<S: State + Ord> TransitionKernel<S> for ExactResample<S> {
    fn target(&self) -> &SharedTarget<S> {
        &self.target
    }

    fn step(&self, _: &S, rng: &mut dyn RngCore) -> Result<S> {
        use crate::program::AssessableInference;
        Ok(self.distribution.sample(rng))
    }

    fn transition_row(&self, _: &S) -> Result<Vec<(S, f64)>> {
        Ok(self.distribution.iter().map(|(s, lp)| (s.clone(), lp)).collect())
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        self
    }
}

/// A kernel with its transition rows precomputed over a finite support.
///
/// Sampling still goes through the wrapped kernel; only the row lookups that
/// the exact oracles make repeatedly are cached.
pub struct Tabulated<S: Ord> {
    kernel: SharedKernel<S>,
    rows: std::collections::BTreeMap<S, Vec<(S, f64)>>,
    support: Vec<S>,
}

impl<S: State + Ord> Tabulated<S> {
    pub fn new(kernel: SharedKernel<S>, support: &[S]) -> Result<Self> {
        let rows = support
            .iter()
            .map(|s| Ok((s.clone(), kernel.transition_row(s)?)))
            .collect::<Result<_>>()?;
        Ok(Tabulated {
            kernel,
            rows,
            support: support.to_vec(),
        })
    }
}

impl<S: State + Ord> TransitionKernel<S> for Tabulated<S> {
    fn target(&self) -> &SharedTarget<S> {
        self.kernel.target()
    }

    fn step(&self, state: &S, rng: &mut dyn RngCore) -> Result<S> {
        self.kernel.step(state, rng)
    }

    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>> {
        match self.rows.get(from) {
            Some(row) => Ok(row.clone()),
            None => self.kernel.transition_row(from),
        }
    }

    fn sites(&self) -> Vec<usize> {
        self.kernel.sites()
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        let reversed = Arc::clone(&self.kernel).reversed();
        match Tabulated::new(Arc::clone(&reversed), &self.support) {
            Ok(t) => Arc::new(t),
            Err(_) => reversed,
        }
    }
}

/// `n` applications of the same kernel.
pub struct Repeat<S> {
    kernel: SharedKernel<S>,
    n: usize,
}

/// `kernel` applied `n ≥ 1` times.
pub fn repeat<S: State>(kernel: SharedKernel<S>, n: usize) -> Result<Repeat<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("repeat count must be at least 1".into()));
    }
    Ok(Repeat { kernel, n })
}

impl<S: State> Repeat<S> {
    pub fn count(&self) -> usize {
        self.n
    }
}

fn propagate<S: State>(kernel: &dyn TransitionKernel<S>, dist: Vec<(S, f64)>) -> Result<Vec<(S, f64)>> {
    let mut next = Vec::new();
    for (s, lp) in dist {
        for (t, lk) in kernel.transition_row(&s)? {
            next.push((t, lp + lk));
        }
    }
    Ok(merge_row(next))
}

impl<S: State> TransitionKernel<S> for Repeat<S> {
    fn target(&self) -> &SharedTarget<S> {
        self.kernel.target()
    }

    fn step(&self, state: &S, rng: &mut dyn RngCore) -> Result<S> {
        let mut s = state.clone();
        for _ in 0..self.n {
            s = self.kernel.step(&s, rng)?;
        }
        Ok(s)
    }

    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>> {
        let mut dist = vec![(from.clone(), 0.0)];
        for _ in 0..self.n {
            dist = propagate(self.kernel.as_ref(), dist)?;
        }
        Ok(dist)
    }

    fn sites(&self) -> Vec<usize> {
        self.kernel.sites()
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        Arc::new(Repeat {
            kernel: Arc::clone(&self.kernel).reversed(),
            n: self.n,
        })
    }
}

/// Kernels applied in sequence. Each component must share one target.
///
/// A cycle leaves the target invariant but is generally not in detailed
/// balance; its time reversal applies the reversed components in reverse
/// order.
pub struct Cycle<S> {
    target: SharedTarget<S>,
    kernels: Vec<SharedKernel<S>>,
}

impl<S: State> Cycle<S> {
    pub fn new(kernels: Vec<SharedKernel<S>>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::InvalidArgument("cycle needs at least one kernel".into()))?;
        let target = Arc::clone(first.target());
        if kernels.iter().any(|k| !same_target(k.target(), &target)) {
            return Err(Error::MixedTargets);
        }
        Ok(Cycle { target, kernels })
    }

    pub fn components(&self) -> &[SharedKernel<S>] {
        &self.kernels
    }
}

/// Alias for [`Cycle::new`].
pub fn cycle<S: State>(kernels: Vec<SharedKernel<S>>) -> Result<Cycle<S>> {
    Cycle::new(kernels)
}

impl<S: State> TransitionKernel<S> for Cycle<S> {
    fn target(&self) -> &SharedTarget<S> {
        &self.target
    }

    fn step(&self, state: &S, rng: &mut dyn RngCore) -> Result<S> {
        let mut s = state.clone();
        for k in &self.kernels {
            s = k.step(&s, rng)?;
        }
        Ok(s)
    }

    fn transition_row(&self, from: &S) -> Result<Vec<(S, f64)>> {
        let mut dist = vec![(from.clone(), 0.0)];
        for k in &self.kernels {
            dist = propagate(k.as_ref(), dist)?;
        }
        Ok(dist)
    }

    fn sites(&self) -> Vec<usize> {
        let mut sites: Vec<usize> = self.kernels.iter().flat_map(|k| k.sites()).collect();
        sites.sort_unstable();
        sites.dedup();
        sites
    }

    fn reversed(self: Arc<Self>) -> SharedKernel<S> {
        Arc::new(Cycle {
            target: Arc::clone(&self.target),
            kernels: self.kernels.iter().rev().map(|k| Arc::clone(k).reversed()).collect(),
        })
    }
}

/// Maximum over pairs of `|p(u) k(u' | u) - p(u') k(u | u')|`, with `p` the
/// normalized target.
pub fn check_detailed_balance<S: State + Ord>(
    kernel: &dyn TransitionKernel<S>,
    target: &FiniteDistribution<S>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (u, lp_u) in target.iter() {
        for (v, lk_uv) in kernel.transition_row(u)? {
            let forward = (lp_u + lk_uv).exp();
            let lp_v = target.log_prob(&v);
            let backward = if lp_v == f64::NEG_INFINITY {
                0.0
            } else {
                (lp_v + kernel.transition_log_prob(&v, u)?).exp()
            };
            worst = worst.max((forward - backward).abs());
        }
    }
    Ok(worst)
}

/// Maximum deviation of `Σ_u p(u) k(u' | u)` from `p(u')`.
pub fn check_stationarity<S: State + Ord>(
    kernel: &dyn TransitionKernel<S>,
    target: &FiniteDistribution<S>,
) -> Result<f64> {
    let mut pushed: Vec<(S, f64)> = Vec::new();
    for (u, lp) in target.iter() {
        for (v, lk) in kernel.transition_row(u)? {
            pushed.push((v, lp + lk));
        }
    }
    let pushed = merge_row(pushed);
    let mut worst = 0.0f64;
    for (v, lp) in &pushed {
        worst = worst.max((lp.exp() - target.prob(v)).abs());
    }
    for (v, lp) in target.iter() {
        if !pushed.iter().any(|(s, _)| s == v) {
            worst = worst.max(lp.exp());
        }
    }
    Ok(worst)
}
