//! Continuous kernels have no transition table, so invariance is checked by
//! pushing exact posterior draws through them and comparing moments.

use std::sync::Arc;

use subdiv_core::kernels::{
    cycle, repeat, target_fn, IndependenceProposal, MetropolisHastings, SharedKernel, UniformRandomWalk,
};
use subdiv_core::models::linreg::{linreg_conjugate_posterior, linreg_fixture};
use subdiv_core::program::PriorSampler;
use subdiv_core::rng::stream;
use subdiv_core::{AssessableInference, Model};

fn moments(xs: &[Vec<f64>], i: usize) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|x| x[i]).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn linreg_kernels_preserve_the_posterior() {
    let (model, data) = linreg_fixture(1).unwrap();
    let post = linreg_conjugate_posterior(&model, &data).unwrap();
    let (m, d) = (model.clone(), data.clone());
    let target = target_fn(move |z: &Vec<f64>| m.log_joint(z, &d));
    let walk: SharedKernel<Vec<f64>> = Arc::new(MetropolisHastings::new(
        Arc::clone(&target),
        Arc::new(UniformRandomWalk {
            half_widths: vec![0.5, 0.3],
        }),
    ));
    let resim: SharedKernel<Vec<f64>> = Arc::new(MetropolisHastings::new(
        Arc::clone(&target),
        Arc::new(IndependenceProposal::from_assessable(PriorSampler(model.clone()))),
    ));
    let kernels: [(&str, SharedKernel<Vec<f64>>); 2] = [
        ("random walk x10", Arc::new(repeat(Arc::clone(&walk), 10).unwrap())),
        (
            "resimulation then walk x5",
            Arc::new(repeat(Arc::new(cycle(vec![resim, walk]).unwrap()), 5).unwrap()),
        ),
    ];
    let n = 20_000;
    let mut rng = stream(5, 0, 0);
    let start: Vec<Vec<f64>> = (0..n).map(|_| post.sample(&mut rng)).collect();
    for (name, k) in kernels {
        let end: Vec<Vec<f64>> = start.iter().map(|z| k.step(z, &mut rng).unwrap()).collect();
        for i in 0..2 {
            let (m0, v0) = moments(&start, i);
            let (m1, v1) = moments(&end, i);
            // chains start at independent exact draws; both samples estimate
            // the same moments, so the difference is within a few standard errors
            let se_mean = (2.0 * v0 / n as f64).sqrt();
            let se_var = v0 * (4.0 / n as f64).sqrt();
            assert!((m1 - m0).abs() < 5.0 * se_mean, "{name} coord {i}: mean {m0} -> {m1}");
            assert!((v1 - v0).abs() < 5.0 * se_var, "{name} coord {i}: var {v0} -> {v1}");
        }
    }
}
