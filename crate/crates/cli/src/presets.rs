//! Model presets known to the runner.

/// Largest noisy-or network whose posterior is enumerated for oracles and
/// exact kernels.
pub const MAX_ENUMERABLE_CAUSES: usize = 16;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// Inference kinds the preset accepts.
    pub inference: &'static [&'static str],
    /// Optional `[model]` keys with their defaults.
    pub params: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "toy",
        description: "one Bernoulli latent, one observation",
        inference: &["sir", "assessable(prior|posterior)"],
        params: "",
    },
    Preset {
        name: "hmm",
        description: "random discrete HMM with simulated data, FFBS oracle",
        inference: &["smc(prior|conditional)", "sir", "assessable(prior)"],
        params: "states = 2, symbols = 3, steps = 40, seed = 1",
    },
    Preset {
        name: "linreg",
        description: "Bayesian linear regression, 11 points, conjugate oracle",
        inference: &["sir", "seqdb(mh)", "assessable(prior|posterior|mean_field)"],
        params: "seed = 1",
    },
    Preset {
        name: "noisyor",
        description: "two-layer noisy-or network, exact oracle up to 16 causes",
        inference: &["sir", "seqdb(gibbs|mh|exact)", "assessable(prior|posterior)"],
        params: "causes = 10, findings = 12, seed = 1",
    },
    Preset {
        name: "three_site",
        description: "three correlated binary sites, four observations",
        inference: &["sir", "seqdb(gibbs|mh|exact)", "assessable(prior|posterior)"],
        params: "",
    },
];

/// The text printed by `list-presets`.
pub fn describe() -> String {
    let mut out = String::new();
    for p in PRESETS {
        out.push_str(&format!("{:<11} {}\n", p.name, p.description));
        out.push_str(&format!("{:<11} inference: {}\n", "", p.inference.join(", ")));
        if !p.params.is_empty() {
            out.push_str(&format!("{:<11} params: {}\n", "", p.params));
        }
    }
    out
}
