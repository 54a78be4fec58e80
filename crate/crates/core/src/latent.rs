//! Latent-parameter spaces and diagonal Gaussian beliefs.
//!
//! Beliefs always live in normalised latent space, where the training
//! hyperprior draws means from `[-1, 1]`. Environments consume task units,
//! obtained from the affine map [`rescale_to_task`]. Values outside
//! `[-1, 1]` are mapped by the same rule and never clipped.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point in latent space. Whether the values are normalised or in task
/// units is determined by context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector".into()));
        }
        Ok(LatentVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Diagonal Gaussian over the latent vector, parameterised by mean and
/// standard deviation in normalised units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), std.len())?;
        if mean.is_empty() {
            return Err(Error::invalid("belief must have at least one dimension"));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("belief".into()));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("belief std must be strictly positive"));
        }
        Ok(GaussianBelief { mean, std })
    }

    /// Standard normal N(0, 1) in every dimension.
    pub fn standard(dim: usize) -> Self {
        GaussianBelief { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn from_variance(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let std = variance.iter().map(|v| v.sqrt()).collect();
        GaussianBelief::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn variance(&self) -> Vec<f64> {
        self.std.iter().map(|s| s * s).collect()
    }
}

/// Hyperprior `p(z)`: uniform over prior means and prior variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperpriorSpec {
    pub mean_lo: Vec<f64>,
    pub mean_hi: Vec<f64>,
    pub var_lo: Vec<f64>,
    pub var_hi: Vec<f64>,
}

impl HyperpriorSpec {
    pub fn new(mean_lo: Vec<f64>, mean_hi: Vec<f64>, var_lo: Vec<f64>, var_hi: Vec<f64>) -> Result<Self> {
        let hp = HyperpriorSpec { mean_lo, mean_hi, var_lo, var_hi };
        hp.validate()?;
        Ok(hp)
    }

    /// Same interval for every dimension.
    pub fn uniform(dim: usize, mean: (f64, f64), var: (f64, f64)) -> Result<Self> {
        HyperpriorSpec::new(vec![mean.0; dim], vec![mean.1; dim], vec![var.0; dim], vec![var.1; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean_lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean_lo.len();
        check_dim(d, self.mean_hi.len())?;
        check_dim(d, self.var_lo.len())?;
        check_dim(d, self.var_hi.len())?;
        if d == 0 {
            return Err(Error::invalid("hyperprior must have at least one dimension"));
        }
        for k in 0..d {
            if !(self.mean_lo[k] <= self.mean_hi[k]) {
                return Err(Error::invalid(format!("hyperprior mean range empty in dim {k}")));
            }
            if !(0.0 < self.var_lo[k] && self.var_lo[k] <= self.var_hi[k]) {
                return Err(Error::invalid(format!("hyperprior variance range invalid in dim {k}")));
            }
        }
        Ok(())
    }
}

/// Task-unit interval corresponding to normalised `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LatentRange {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("latent range requires lo < hi"));
        }
        Ok(LatentRange { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

fn uniform_between<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draw prior parameters `z = (mean, std)` from the hyperprior. The
/// variance, not the std, is sampled uniformly.
pub fn sample_prior<R: Rng + ?Sized>(hp: &HyperpriorSpec, rng: &mut R) -> GaussianBelief {
    let d = hp.dim();
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for k in 0..d {
        mean.push(uniform_between(rng, hp.mean_lo[k], hp.mean_hi[k]));
        std.push(uniform_between(rng, hp.var_lo[k], hp.var_hi[k]).sqrt());
    }
    GaussianBelief { mean, std }
}

/// Draw a normalised latent from the belief.
pub fn sample_latent<R: Rng + ?Sized>(b: &GaussianBelief, rng: &mut R) -> LatentVector {
    LatentVector(
        b.mean
            .iter()
            .zip(&b.std)
            .map(|(m, s)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + s * eps
            })
            .collect(),
    )
}

pub fn rescale_to_task(x: &LatentVector, r: &LatentRange) -> Result<LatentVector> {
    check_dim(r.dim(), x.dim())?;
    Ok(LatentVector(
        x.0.iter()
            .enumerate()
            .map(|(k, v)| r.lo[k] + (v + 1.0) * 0.5 * (r.hi[k] - r.lo[k]))
            .collect(),
    ))
}

pub fn normalize_from_task(x: &LatentVector, r: &LatentRange) -> Result<LatentVector> {
    check_dim(r.dim(), x.dim())?;
    Ok(LatentVector(
        x.0.iter()
            .enumerate()
            .map(|(k, v)| 2.0 * (v - r.lo[k]) / (r.hi[k] - r.lo[k]) - 1.0)
            .collect(),
    ))
}

/// `KL(q || p)` for diagonal Gaussians, summed over dimensions.
pub fn kl_diag_gaussian(q: &GaussianBelief, p: &GaussianBelief) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let mut kl = 0.0;
    for k in 0..q.dim() {
        let (mq, sq) = (q.mean[k], q.std[k]);
        let (mp, sp) = (p.mean[k], p.std[k]);
        kl += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
    }
    // Rounding can leave tiny negatives for q == p.
    Ok(kl.max(0.0))
}
