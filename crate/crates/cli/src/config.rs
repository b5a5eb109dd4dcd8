//! Experiment configuration: a TOML document naming a model preset, an
//! inference program, a reference, an effort sweep and replicate counts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::presets::MAX_ENUMERABLE_CAUSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub inference: InferenceSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// One Bernoulli latent with one observation.
    Toy,
    /// Random HMM with simulated data.
    Hmm {
        #[serde(default = "default_hmm_states")]
        states: usize,
        #[serde(default = "default_hmm_symbols")]
        symbols: usize,
        #[serde(default = "default_hmm_steps")]
        steps: usize,
        #[serde(default = "default_fixture_seed")]
        seed: u64,
    },
    /// Bayesian linear regression with a conjugate posterior.
    Linreg {
        #[serde(default = "default_fixture_seed")]
        seed: u64,
    },
    /// Two-layer noisy-or network.
    Noisyor {
        #[serde(default = "default_causes")]
        causes: usize,
        #[serde(default = "default_findings")]
        findings: usize,
        #[serde(default = "default_fixture_seed")]
        seed: u64,
    },
    /// Three correlated binary sites with four observations.
    ThreeSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Prior,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Systematic-scan Gibbs over the non-frozen sites.
    Gibbs,
    /// Metropolis-Hastings: per-site uniform resimulation on discrete
    /// models, prior resimulation then a uniform random walk on linreg.
    Mh,
    /// Exact draws from each target; enumerable models only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Partial posteriors after each observation.
    Observations,
    /// Geometric bridge from the prior to the joint.
    Bridge,
    /// Anneals the marginal of one site; three_site only.
    SiteBridge,
    /// Linear leak annealing; noisyor only.
    Leak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessableKind {
    /// The model prior.
    Prior,
    /// The exact posterior; enumerable models and linreg.
    Posterior,
    /// Gaussian with the posterior means and marginal variances; linreg only.
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceSpec {
    /// Likelihood-weighted SIR; the knob is the particle count.
    Sir,
    /// Particle filter with CSMC meta-inference; HMM only. The knob is the
    /// particle count.
    Smc { proposal: ProposalKind },
    /// Sequential detailed-balance inference. The knob is the number of
    /// kernel repetitions per target.
    Seqdb(SeqdbSpec),
    /// A program with an exact output density. The knob is recorded but
    /// has no effect.
    Assessable { q: AssessableKind },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqdbSpec {
    pub kernel: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    /// Bridge or annealing steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Annealed site for `site_bridge`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
    /// Sites the Gibbs kernel never updates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_sites: Vec<usize>,
    /// Random-walk half width on linreg.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Exact posterior samples.
    #[default]
    Oracle,
    /// Likelihood-weighted SIR output with a fixed particle count.
    LwSir { particles: usize },
    /// The configured seqdb program with a fixed repetition count.
    Seqdb { repetitions: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_replicates")]
    pub n_ref: usize,
    #[serde(default = "default_replicates")]
    pub n_inf: usize,
    #[serde(default)]
    pub seed: u64,
    /// Write stage timings; when false the timing columns are zero and the
    /// CSV is reproducible byte for byte.
    #[serde(default = "default_true")]
    pub timings: bool,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            n_ref: default_replicates(),
            n_inf: default_replicates(),
            seed: 0,
            timings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    /// Also write the raw log weights as newline-delimited JSON.
    #[serde(default = "default_true")]
    pub sidecar: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_out_dir(),
            sidecar: true,
        }
    }
}

fn default_hmm_states() -> usize {
    2
}
fn default_hmm_symbols() -> usize {
    3
}
fn default_hmm_steps() -> usize {
    40
}
fn default_fixture_seed() -> u64 {
    1
}
fn default_causes() -> usize {
    10
}
fn default_findings() -> usize {
    12
}
fn default_replicates() -> usize {
    1000
}
fn default_true() -> bool {
    true
}
fn default_out_dir() -> String {
    "profile-out".into()
}

/// One problem with a config, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Every problem found in a config.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.issues.iter().map(ToString::to_string).collect();
        write!(f, "invalid config: {}", lines.join("; "))
    }
}

impl ConfigError {
    fn single(path: &str, message: impl Into<String>) -> Self {
        ConfigError {
            issues: vec![ConfigIssue {
                path: path.into(),
                message: message.into(),
            }],
        }
    }
}

/// Best-effort dotted path of the field a TOML parse error points at.
fn parse_error_path(text: &str, err: &toml::de::Error) -> String {
    let message = err.message();
    // serde reports the missing or unknown key by name
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(rest) = message.split(marker).nth(1) {
            let key = rest.split('`').next().unwrap_or_default();
            let table = err
                .span()
                .and_then(|s| {
                    text[..s.start.min(text.len())]
                        .lines()
                        .rev()
                        .find(|l| l.trim_start().starts_with('['))
                })
                .map(|l| l.trim().trim_matches(|c| c == '[' || c == ']').to_string());
            return match (marker, table) {
                ("unknown variant `", Some(t)) => t,
                (_, Some(t)) if !t.is_empty() => format!("{t}.{key}"),
                _ => key.to_string(),
            };
        }
    }
    err.span()
        .and_then(|s| {
            text[..s.start.min(text.len())]
                .lines()
                .rev()
                .find(|l| l.trim_start().starts_with('['))
        })
        .map_or_else(
            || "<document>".into(),
            |l| l.trim().trim_matches(|c| c == '[' || c == ']').to_string(),
        )
}

/// Parses and validates a config document.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| ConfigError::single(&parse_error_path(text, &e), e.message().to_string()))?;
    let issues = config.issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError { issues })
    }
}

impl ExperimentConfig {
    /// The normalized TOML form: every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Semantic problems that the parser cannot see.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut issue = |path: &str, message: String| {
            out.push(ConfigIssue {
                path: path.into(),
                message,
            })
        };

        match &self.model {
            ModelSpec::Hmm {
                states, symbols, steps, ..
            } => {
                if *states < 2 {
                    issue("model.states", format!("need at least 2 states, got {states}"));
                }
                if *symbols < 1 {
                    issue("model.symbols", "need at least 1 symbol".into());
                }
                if *steps < 1 {
                    issue("model.steps", "need at least 1 step".into());
                }
            }
            ModelSpec::Noisyor { causes, findings, .. } => {
                if *causes < 1 {
                    issue("model.causes", "need at least 1 cause".into());
                }
                if *findings < 1 {
                    issue("model.findings", "need at least 1 finding".into());
                }
            }
            _ => {}
        }

        let name = self.model.name();
        match &self.inference {
            InferenceSpec::Sir => {}
            InferenceSpec::Smc { .. } => {
                if !matches!(self.model, ModelSpec::Hmm { .. }) {
                    issue("inference.kind", format!("smc needs the hmm preset, not {name}"));
                }
            }
            InferenceSpec::Seqdb(s) => self.seqdb_issues(s, &mut issue),
            InferenceSpec::Assessable { q } => match (q, &self.model) {
                (AssessableKind::MeanField, m) if !matches!(m, ModelSpec::Linreg { .. }) => {
                    issue("inference.q", format!("mean_field needs the linreg preset, not {name}"));
                }
                (AssessableKind::Posterior, m) if !self.has_exact_posterior() || matches!(m, ModelSpec::Hmm { .. }) => {
                    issue("inference.q", format!("no exact posterior sampler for {}", m.name()));
                }
                _ => {}
            },
        }

        match &self.reference {
            ReferenceSpec::Oracle => {
                if !self.has_exact_posterior() {
                    issue("reference.kind", format!("no oracle for {name} at this size"));
                }
            }
            ReferenceSpec::LwSir { particles } => {
                if *particles < 1 {
                    issue("reference.particles", "need at least 1 particle".into());
                }
            }
            ReferenceSpec::Seqdb { repetitions } => {
                if !matches!(self.inference, InferenceSpec::Seqdb(_)) {
                    issue(
                        "reference.kind",
                        "a seqdb reference reuses the seqdb inference settings".into(),
                    );
                }
                if *repetitions < 1 {
                    issue("reference.repetitions", "need at least 1 repetition".into());
                }
            }
        }

        if self.sweep.values.is_empty() {
            issue("sweep.values", "sweep must not be empty".into());
        }
        if self.sweep.values.contains(&0) {
            issue("sweep.values", "knob values must be at least 1".into());
        }
        if self.estimator.n_ref < 2 {
            issue(
                "estimator.n_ref",
                format!("need at least 2 replicates, got {}", self.estimator.n_ref),
            );
        }
        if self.estimator.n_inf < 2 {
            issue(
                "estimator.n_inf",
                format!("need at least 2 replicates, got {}", self.estimator.n_inf),
            );
        }
        if self.output.dir.is_empty() {
            issue("output.dir", "output directory must not be empty".into());
        }
        out
    }

    fn seqdb_issues(&self, s: &SeqdbSpec, issue: &mut impl FnMut(&str, String)) {
        let name = self.model.name();
        let sites = match &self.model {
            ModelSpec::ThreeSite => 3,
            ModelSpec::Noisyor { causes, .. } => *causes,
            ModelSpec::Linreg { .. } => 2,
            _ => {
                issue("inference.kind", format!("seqdb is not available for {name}"));
                return;
            }
        };
        let linreg = matches!(self.model, ModelSpec::Linreg { .. });
        if linreg && s.kernel != KernelKind::Mh {
            issue("inference.kernel", "linreg supports only the mh kernel".into());
        }
        if s.kernel == KernelKind::Exact && !self.has_exact_posterior() {
            issue("inference.kernel", format!("exact kernels need an enumerable {name}"));
        }
        match s.schedule {
            Some(ScheduleKind::SiteBridge) if !matches!(self.model, ModelSpec::ThreeSite) => {
                issue("inference.schedule", "site_bridge needs the three_site preset".into());
            }
            Some(ScheduleKind::Leak) if !matches!(self.model, ModelSpec::Noisyor { .. }) => {
                issue("inference.schedule", "leak needs the noisyor preset".into());
            }
            _ => {}
        }
        if s.steps == Some(0) {
            issue("inference.steps", "need at least 1 step".into());
        }
        if let Some(site) = s.site {
            if site >= sites {
                issue("inference.site", format!("site {site} out of range for {sites} sites"));
            }
        }
        if let Some(&bad) = s.frozen_sites.iter().find(|&&f| f >= sites) {
            issue(
                "inference.frozen_sites",
                format!("site {bad} out of range for {sites} sites"),
            );
        }
        if !s.frozen_sites.is_empty() && s.kernel != KernelKind::Gibbs {
            issue(
                "inference.frozen_sites",
                "only the gibbs kernel can freeze sites".into(),
            );
        }
        if let Some(w) = s.half_width {
            if !(w > 0.0 && w.is_finite()) {
                issue("inference.half_width", format!("half width must be positive, got {w}"));
            }
        }
    }

    fn has_exact_posterior(&self) -> bool {
        match &self.model {
            ModelSpec::Noisyor { causes, .. } => *causes <= MAX_ENUMERABLE_CAUSES,
            _ => true,
        }
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Toy => "toy",
            ModelSpec::Hmm { .. } => "hmm",
            ModelSpec::Linreg { .. } => "linreg",
            ModelSpec::Noisyor { .. } => "noisyor",
            ModelSpec::ThreeSite => "three_site",
        }
    }
}
