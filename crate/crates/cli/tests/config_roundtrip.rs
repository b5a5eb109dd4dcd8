//! Serializing a parsed config gives its normalized form, and parsing the
//! normalized form gives the same config back.

use proptest::prelude::*;
use subdiv_cli::config::{
    AssessableKind, EstimatorSpec, InferenceSpec, KernelKind, ModelSpec, OutputSpec, ProposalKind, ReferenceSpec,
    ScheduleKind, SeqdbSpec, SweepSpec,
};
use subdiv_cli::{validate_config, ExperimentConfig};

fn seed() -> impl Strategy<Value = u64> {
    0..=i64::MAX as u64
}

fn model_and_inference() -> impl Strategy<Value = (ModelSpec, InferenceSpec)> {
    prop_oneof![
        (prop_oneof![Just(AssessableKind::Prior), Just(AssessableKind::Posterior)])
            .prop_map(|q| (ModelSpec::Toy, InferenceSpec::Assessable { q })),
        (
            2usize..5,
            1usize..5,
            1usize..50,
            seed(),
            prop_oneof![Just(ProposalKind::Prior), Just(ProposalKind::Conditional)]
        )
            .prop_map(|(states, symbols, steps, seed, proposal)| {
                (
                    ModelSpec::Hmm {
                        states,
                        symbols,
                        steps,
                        seed,
                    },
                    InferenceSpec::Smc { proposal },
                )
            }),
        (
            seed(),
            proptest::option::of(0.01f64..5.0),
            proptest::option::of(1usize..20)
        )
            .prop_map(|(seed, half_width, steps)| {
                (
                    ModelSpec::Linreg { seed },
                    InferenceSpec::Seqdb(SeqdbSpec {
                        kernel: KernelKind::Mh,
                        schedule: steps.map(|_| ScheduleKind::Bridge),
                        steps,
                        site: None,
                        frozen_sites: vec![],
                        half_width,
                    }),
                )
            }),
        (1usize..12, 1usize..12, seed()).prop_map(|(causes, findings, seed)| {
            (ModelSpec::Noisyor { causes, findings, seed }, InferenceSpec::Sir)
        }),
        (proptest::collection::vec(0usize..3, 0..3), 0usize..3, 1usize..8).prop_map(|(frozen_sites, site, steps)| {
            (
                ModelSpec::ThreeSite,
                InferenceSpec::Seqdb(SeqdbSpec {
                    kernel: KernelKind::Gibbs,
                    schedule: Some(ScheduleKind::SiteBridge),
                    steps: Some(steps),
                    site: Some(site),
                    frozen_sites,
                    half_width: None,
                }),
            )
        }),
    ]
}

fn experiment() -> impl Strategy<Value = ExperimentConfig> {
    (
        model_and_inference(),
        prop_oneof![
            Just(ReferenceSpec::Oracle),
            (1usize..100).prop_map(|particles| ReferenceSpec::LwSir { particles })
        ],
        proptest::collection::vec(1usize..1000, 1..6),
        (2usize..5000, 2usize..5000, seed(), any::<bool>()),
        ("[a-z][a-z0-9_/]{0,12}", any::<bool>()),
    )
        .prop_map(
            |((model, inference), reference, values, (n_ref, n_inf, seed, timings), (dir, sidecar))| ExperimentConfig {
                model,
                inference,
                reference,
                sweep: SweepSpec { values },
                estimator: EstimatorSpec {
                    n_ref,
                    n_inf,
                    seed,
                    timings,
                },
                output: OutputSpec { dir, sidecar },
            },
        )
}

proptest! {
    #[test]
    fn normalized_form_round_trips(c in experiment()) {
        let text = c.to_toml();
        let parsed = validate_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(parsed.to_toml(), text);
    }
}

#[test]
fn sparse_document_normalizes_with_defaults() {
    let sparse =
        "[model]\npreset = \"hmm\"\n[inference]\nkind = \"smc\"\nproposal = \"prior\"\n[sweep]\nvalues = [3]\n";
    let c = validate_config(sparse).unwrap();
    let normalized = c.to_toml();
    assert!(
        normalized.contains("steps = 40") && normalized.contains("n_inf = 1000"),
        "{normalized}"
    );
    assert_eq!(validate_config(&normalized).unwrap(), c);
}
