//! Fully factorized Gaussian approximations with evaluable densities.

use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::program::AssessableInference;

/// `q(z) = ∏_i N(z_i; means[i], variances[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeanField {
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianMeanField {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != variances.len() {
            return Err(Error::InvalidArgument("need one variance per mean".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "means must be finite and variances positive".into(),
            ));
        }
        Ok(GaussianMeanField { means, variances })
    }

    /// Every coordinate shares one fixed variance.
    pub fn with_fixed_variance(means: Vec<f64>, variance: f64) -> Result<Self> {
        let v = vec![variance; means.len()];
        Self::new(means, v)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

impl AssessableInference for GaussianMeanField {
    type Latent = Vec<f64>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| {
                let e: f64 = StandardNormal.sample(&mut *rng);
                m + v.sqrt() * e
            })
            .collect()
    }

    fn log_density(&self, z: &Vec<f64>) -> f64 {
        if z.len() != self.means.len() {
            return f64::NEG_INFINITY;
        }
        z.iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(x, (m, v))| -0.5 * ((2.0 * PI * v).ln() + (x - m).powi(2) / v))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn density_integrates_to_one() {
        // midpoint rule on a 2-d grid wide enough to hold the mass
        let q = GaussianMeanField::new(vec![0.5, -1.0], vec![0.3, 2.0]).unwrap();
        let h = 0.02;
        let mut total = 0.0;
        for i in 0..600 {
            for j in 0..1400 {
                let z = vec![-5.5 + (i as f64 + 0.5) * h, -15.0 + (j as f64 + 0.5) * h];
                total += q.log_density(&z).exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn histogram_matches_density() {
        let q = GaussianMeanField::with_fixed_variance(vec![1.0], 0.5).unwrap();
        let mut rng = stream(2, 2, 2);
        let n = 200_000;
        let (lo, hi) = (0.5, 1.0);
        let hits = (0..n)
            .filter(|_| {
                let z = q.sample(&mut rng)[0];
                z >= lo && z < hi
            })
            .count() as f64
            / n as f64;
        let steps = 1000;
        let mass: f64 = (0..steps)
            .map(|k| {
                let z = lo + (k as f64 + 0.5) * (hi - lo) / steps as f64;
                q.log_density(&vec![z]).exp() * (hi - lo) / steps as f64
            })
            .sum();
        let se = (mass * (1.0 - mass) / n as f64).sqrt();
        assert!((hits - mass).abs() < 4.0 * se, "{hits} vs {mass}");
    }

    #[test]
    fn rejects_bad_variance() {
        assert!(GaussianMeanField::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianMeanField::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
