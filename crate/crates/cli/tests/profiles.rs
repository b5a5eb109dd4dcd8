//! Library-level runs checked against exact values.

use subdiv_cli::{run_experiment, validate_config};
use subdiv_core::exact::{exact_posterior, exact_subjective_divergence_expectation};
use subdiv_core::models::toy::ToyBernoulli;
use subdiv_core::smc::Sir;

fn config(text: &str) -> subdiv_cli::ExperimentConfig {
    validate_config(text).unwrap_or_else(|e| panic!("{e}"))
}

#[test]
fn exact_inference_scores_zero() {
    for (preset, extra) in [
        ("toy", ""),
        ("three_site", ""),
        ("linreg", ""),
        ("noisyor", "causes = 6\nfindings = 6\n"),
    ] {
        let c = config(&format!(
            "[model]\npreset = \"{preset}\"\n{extra}[inference]\nkind = \"assessable\"\nq = \"posterior\"\n\
             [sweep]\nvalues = [1]\n[estimator]\nn_ref = 200\nn_inf = 200\n"
        ));
        let p = &run_experiment(&c).unwrap()[0];
        assert!(
            p.estimate.estimate.abs() <= 4.0 * p.estimate.stderr + 1e-9,
            "{preset}: {} ± {}",
            p.estimate.estimate,
            p.estimate.stderr
        );
    }
}

#[test]
fn toy_sir_profile_tracks_the_exact_curve() {
    let c = config(
        "[model]\npreset = \"toy\"\n[inference]\nkind = \"sir\"\n[sweep]\nvalues = [1, 2, 4]\n\
         [estimator]\nn_ref = 4000\nn_inf = 4000\nseed = 2\n",
    );
    let points = run_experiment(&c).unwrap();
    let (model, data) = ToyBernoulli::fixture();
    let post = exact_posterior(&model, &data).unwrap();
    let exact: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&k| {
            let sir = Sir::new(&model, &data, k).unwrap();
            exact_subjective_divergence_expectation(&model, &data, &sir, &sir.meta(), &post).unwrap()
        })
        .collect();
    assert!(exact.windows(2).all(|w| w[1] <= w[0]), "{exact:?}");
    for (p, e) in points.iter().zip(&exact) {
        assert!(
            (p.estimate.estimate - e).abs() <= 4.0 * p.estimate.stderr,
            "K={}: {} vs {e}",
            p.knob,
            p.estimate.estimate
        );
    }
}

#[test]
fn conditional_proposal_beats_prior_proposal() {
    let text = |proposal: &str| {
        format!(
            "[model]\npreset = \"hmm\"\nsteps = 20\n[inference]\nkind = \"smc\"\nproposal = \"{proposal}\"\n\
             [sweep]\nvalues = [1, 4]\n[estimator]\nn_ref = 500\nn_inf = 500\nseed = 4\n"
        )
    };
    let prior = run_experiment(&config(&text("prior"))).unwrap();
    let cond = run_experiment(&config(&text("conditional"))).unwrap();
    for (a, b) in prior.iter().zip(&cond) {
        let se = a.estimate.stderr.hypot(b.estimate.stderr);
        assert!(b.estimate.estimate + 2.0 * se < a.estimate.estimate, "K={}", a.knob);
    }
}

#[test]
fn every_reference_kind_runs() {
    let base = "[model]\npreset = \"three_site\"\n[inference]\nkind = \"seqdb\"\nkernel = \"mh\"\n\
                [sweep]\nvalues = [2]\n[estimator]\nn_ref = 50\nn_inf = 50\n";
    for reference in [
        "kind = \"oracle\"",
        "kind = \"lw_sir\"\nparticles = 8",
        "kind = \"seqdb\"\nrepetitions = 8",
    ] {
        let c = config(&format!("{base}[reference]\n{reference}\n"));
        let p = run_experiment(&c).unwrap();
        assert!(p[0].estimate.estimate.is_finite(), "{reference}");
    }
    for inference in [
        "kind = \"seqdb\"\nkernel = \"exact\"\nschedule = \"observations\"",
        "kind = \"seqdb\"\nkernel = \"gibbs\"\nschedule = \"bridge\"\nsteps = 3",
        "kind = \"assessable\"\nq = \"prior\"",
    ] {
        let c = config(&format!(
            "[model]\npreset = \"three_site\"\n[inference]\n{inference}\n[sweep]\nvalues = [1]\n\
             [estimator]\nn_ref = 50\nn_inf = 50\n"
        ));
        assert!(run_experiment(&c).is_ok(), "{inference}");
    }
    let c = config(
        "[model]\npreset = \"linreg\"\n[inference]\nkind = \"assessable\"\nq = \"mean_field\"\n\
         [sweep]\nvalues = [1]\n[estimator]\nn_ref = 50\nn_inf = 50\n",
    );
    // covariates centered at zero make the posterior factorize, so the
    // mean field is exact and every log weight equals the log evidence
    let p = &run_experiment(&c).unwrap()[0];
    assert!(p.estimate.estimate.abs() < 1e-9 && p.estimate.stderr < 1e-9);
}
