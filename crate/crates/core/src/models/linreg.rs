//! Bayesian linear regression with a conjugate Gaussian posterior.
//!
//! Latent `z = [intercept, slope]` with independent Gaussian priors;
//! observation `i` is `y_i ~ N(intercept + slope * x_i, noise_var)` with the
//! covariate `x_i` fixed by the model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::program::{AssessableInference, Dataset, Model, SequentialModel};
use crate::rng::stream;

const FIXTURE_TAG: u64 = 0x4c49_4e52_4547;

#[derive(Debug, Clone, PartialEq)]
pub struct LinRegModel {
    /// Prior means of intercept and slope.
    pub prior_mean: [f64; 2],
    /// Prior variances of intercept and slope.
    pub prior_var: [f64; 2],
    pub noise_var: f64,
    pub covariates: Vec<f64>,
}

impl Default for LinRegModel {
    /// Standard normal priors, unit noise variance, 11 covariates evenly
    /// spaced on `[-1, 1]`.
    fn default() -> Self {
        LinRegModel {
            prior_mean: [0.0, 0.0],
            prior_var: [1.0, 1.0],
            noise_var: 1.0,
            covariates: (0..11).map(|i| -1.0 + 0.2 * i as f64).collect(),
        }
    }
}

fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

impl LinRegModel {
    pub fn validate(&self) -> Result<()> {
        if self
            .prior_var
            .iter()
            .chain([&self.noise_var])
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidArgument("variances must be positive and finite".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::InvalidArgument("need at least one covariate".into()));
        }
        Ok(())
    }

    pub fn mean_response(&self, z: &[f64], i: usize) -> f64 {
        z[0] + z[1] * self.covariates[i]
    }

    /// Responses simulated at every covariate for the parameters `z`.
    pub fn simulate(&self, z: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let sd = self.noise_var.sqrt();
        (0..self.covariates.len())
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut *rng);
                self.mean_response(z, i) + sd * e
            })
            .collect()
    }

    /// Posterior given the responses at the first `ys.len()` covariates;
    /// an empty slice gives the prior.
    pub fn posterior(&self, ys: &[f64]) -> Result<GaussianPosterior> {
        self.validate()?;
        if ys.len() > self.covariates.len() {
            return Err(Error::InvalidArgument("more responses than covariates".into()));
        }
        let prior_prec = Matrix2::new(1.0 / self.prior_var[0], 0.0, 0.0, 1.0 / self.prior_var[1]);
        let mut prec = prior_prec;
        let mut rhs = prior_prec * Vector2::from(self.prior_mean);
        for (i, y) in ys.iter().enumerate() {
            let row = Vector2::new(1.0, self.covariates[i]);
            prec += row * row.transpose() / self.noise_var;
            rhs += row * (*y / self.noise_var);
        }
        let cov = prec.try_inverse().ok_or(Error::SingularCovariance)?;
        let mean = cov * rhs;
        let normal = MultivariateNormal::new(
            DVector::from_column_slice(mean.as_slice()),
            DMatrix::from_column_slice(2, 2, cov.as_slice()),
        )?;
        Ok(GaussianPosterior {
            normal,
            log_evidence: self.log_evidence(ys)?,
        })
    }

    /// `log p(y_{1:n})` from the marginal `N(X μ0, X Σ0 Xᵀ + σ² I)`.
    fn log_evidence(&self, ys: &[f64]) -> Result<f64> {
        let n = ys.len();
        if n == 0 {
            return Ok(0.0);
        }
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { self.covariates[i] });
        let s0 = DMatrix::from_diagonal(&DVector::from_column_slice(&self.prior_var));
        let cov = &x * s0 * x.transpose() + DMatrix::identity(n, n) * self.noise_var;
        let mean = &x * DVector::from_column_slice(&self.prior_mean);
        Ok(MultivariateNormal::new(mean, cov)?.log_density_at(&DVector::from_column_slice(ys)))
    }
}

impl Model for LinRegModel {
    type Latent = Vec<f64>;
    type Obs = f64;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..2)
            .map(|j| {
                let e: f64 = StandardNormal.sample(&mut *rng);
                self.prior_mean[j] + self.prior_var[j].sqrt() * e
            })
            .collect()
    }

    fn log_prior(&self, z: &Vec<f64>) -> f64 {
        if z.len() != 2 {
            return f64::NEG_INFINITY;
        }
        (0..2)
            .map(|j| normal_log_density(z[j], self.prior_mean[j], self.prior_var[j]))
            .sum()
    }

    fn log_likelihood(&self, z: &Vec<f64>, data: &Dataset<f64>) -> f64 {
        if z.len() != 2 || data.len() != self.covariates.len() {
            return f64::NEG_INFINITY;
        }
        (0..data.len()).map(|i| self.log_likelihood_at(z, data, i)).sum()
    }
}

impl SequentialModel for LinRegModel {
    fn log_likelihood_at(&self, z: &Vec<f64>, data: &Dataset<f64>, index: usize) -> f64 {
        normal_log_density(data.observations()[index], self.mean_response(z, index), self.noise_var)
    }
}

/// A Gaussian with a Cholesky-factored covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateNormal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl MultivariateNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::InvalidArgument(
                "covariance shape does not match the mean".into(),
            ));
        }
        let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(MultivariateNormal {
            mean,
            cov,
            chol_l,
            log_det,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density_at(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let w = self
            .chol_l
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det + w.norm_squared())
    }

    pub fn sample_vector(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let e = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut *rng));
        &self.mean + &self.chol_l * e
    }
}

impl AssessableInference for MultivariateNormal {
    type Latent = Vec<f64>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample_vector(rng).as_slice().to_vec()
    }

    fn log_density(&self, z: &Vec<f64>) -> f64 {
        if z.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        self.log_density_at(&DVector::from_column_slice(z))
    }
}

/// The exact posterior over `[intercept, slope]` and the log evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub normal: MultivariateNormal,
    pub log_evidence: f64,
}

impl AssessableInference for GaussianPosterior {
    type Latent = Vec<f64>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.normal.sample(rng)
    }

    fn log_density(&self, z: &Vec<f64>) -> f64 {
        self.normal.log_density(z)
    }
}

/// Conjugate posterior for a full dataset.
pub fn linreg_conjugate_posterior(model: &LinRegModel, data: &Dataset<f64>) -> Result<GaussianPosterior> {
    if data.len() != model.covariates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} responses for {} covariates",
            data.len(),
            model.covariates.len()
        )));
    }
    model.posterior(data.observations())
}

/// The default model with parameters drawn from its prior and responses
/// simulated from them, all determined by `seed`.
pub fn linreg_fixture(seed: u64) -> Result<(LinRegModel, Dataset<f64>)> {
    let model = LinRegModel::default();
    let mut rng = stream(seed, FIXTURE_TAG, 0);
    let z = model.sample_prior(&mut rng);
    let ys = model.simulate(&z, &mut rng);
    Ok((model, Dataset::new(ys)?))
}
