//! Bootstrap particle filter with systematic resampling at every step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::model::{add_gaussian, covariance_factor, mat_vec, LinearGaussianModel};
use crate::seed::{stream_rng, StreamRng};

/// Average likelihood below which the ensemble is considered degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// Flat `[P][d_x]`.
    pub particles: Vec<f64>,
    pub weights: Vec<f64>,
    /// Effective sample size `1 / sum w^2`, measured before resampling.
    pub ess: f64,
    pub t: usize,
    dim_x: usize,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<f64>, weights: Vec<f64>, dim_x: usize, t: usize) -> Result<Self> {
        if dim_x == 0 || particles.len() != weights.len() * dim_x || weights.is_empty() {
            return Err(dim_err("particle buffer does not match weights and dimension"));
        }
        let ess = effective_sample_size(&weights);
        Ok(Self { particles, weights, ess, t, dim_x })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim_x..(i + 1) * self.dim_x]
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Weighted particle mean.
pub fn pf_estimate(ens: &ParticleEnsemble) -> DVector<f64> {
    let mut out = DVector::zeros(ens.dim_x);
    for (i, w) in ens.weights.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(ens.particle(i)) {
            *o += w * x;
        }
    }
    out
}

/// Systematic resampling: one uniform offset `u` in `[0, 1)` and the grid
/// `(i + u) / P`. Returns the ancestor index of each new particle.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let p = weights.len();
    let mut out = Vec::with_capacity(p);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..p {
        let pos = (i as f64 + u) / p as f64;
        while pos >= cum && j + 1 < p {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Model-derived quantities shared by every step of a bootstrap filter.
#[derive(Debug, Clone)]
pub struct BootstrapFilter<'a> {
    model: &'a LinearGaussianModel,
    count: usize,
    init_factor: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    /// Inverse of the Cholesky factor of R, so `|L^{-1} r|^2 = r^T R^{-1} r`.
    r_chol_inv: DMatrix<f64>,
    log_norm: f64,
}

impl<'a> BootstrapFilter<'a> {
    pub fn new(model: &'a LinearGaussianModel, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Argument("particle count must be positive".into()));
        }
        let chol = model
            .r()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidModel("R is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = l.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let dy = model.dim_y() as f64;
        let r_chol_inv = l
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("R factor is not invertible".into()))?;
        Ok(Self {
            model,
            count,
            init_factor: covariance_factor(model.init_cov())?,
            q_factor: covariance_factor(model.q())?,
            r_chol_inv,
            log_norm: -0.5 * (dy * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Particles i.i.d. from the initial law, uniform weights.
    pub fn init(&self, rng: &mut StreamRng) -> ParticleEnsemble {
        let dx = self.model.dim_x();
        let mut particles = vec![0.0; self.count * dx];
        let mut z = vec![0.0; dx];
        for x in particles.chunks_mut(dx) {
            x.copy_from_slice(self.model.init_mean().as_slice());
            add_gaussian(&self.init_factor, rng, &mut z, x);
        }
        let w = 1.0 / self.count as f64;
        ParticleEnsemble { particles, weights: vec![w; self.count], ess: self.count as f64, t: 0, dim_x: dx }
    }

    /// Propagate, weight by `N(y; H x, R)`, normalize, resample.
    pub fn step(&self, ens: &ParticleEnsemble, y: &[f64], rng: &mut StreamRng) -> Result<ParticleEnsemble> {
        let (dx, dy) = (self.model.dim_x(), self.model.dim_y());
        if y.len() != dy {
            return Err(dim_err(format!("observation has length {}, model expects {dy}", y.len())));
        }
        if ens.dim_x != dx {
            return Err(dim_err("ensemble dimension does not match model"));
        }
        let p = ens.len();
        let t = ens.t + 1;
        let mut moved = vec![0.0; p * dx];
        let mut log_w = vec![0.0; p];
        let mut z = vec![0.0; dx];
        let mut resid = vec![0.0; dy];
        for i in 0..p {
            let x = &mut moved[i * dx..(i + 1) * dx];
            mat_vec(self.model.f(), ens.particle(i), x);
            add_gaussian(&self.q_factor, rng, &mut z, x);
            mat_vec(self.model.h(), x, &mut resid);
            for (r, yj) in resid.iter_mut().zip(y) {
                *r = yj - *r;
            }
            let mut quad = 0.0;
            for a in 0..dy {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += self.r_chol_inv[(a, b)] * resid[b];
                }
                quad += acc * acc;
            }
            log_w[i] = ens.weights[i].ln() + self.log_norm - 0.5 * quad;
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate { t, total: 0.0 });
        }
        let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let sum: f64 = weights.iter().sum();
        // Prior weights sum to one, so this is the average likelihood.
        let total = max.exp() * sum;
        let log_total = max + sum.ln();
        if log_total < DEGENERACY_FLOOR.ln() {
            return Err(Error::Degenerate { t, total });
        }
        for w in &mut weights {
            *w /= sum;
        }
        let ess = effective_sample_size(&weights);
        let u: f64 = rng.random();
        let ancestors = systematic_resample(&weights, u);
        let mut particles = Vec::with_capacity(p * dx);
        for a in ancestors {
            particles.extend_from_slice(&moved[a * dx..(a + 1) * dx]);
        }
        let w = 1.0 / p as f64;
        Ok(ParticleEnsemble { particles, weights: vec![w; p], ess, t, dim_x: dx })
    }

    /// Runs the filter over flat `[T][d_y]` observations and returns the flat
    /// `[T][d_x]` sequence of post-resampling mean estimates.
    pub fn run(&self, observations: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        let (dx, dy) = (self.model.dim_x(), self.model.dim_y());
        let mut ens = self.init(rng);
        let mut out = Vec::with_capacity(observations.len() / dy * dx);
        for y in observations.chunks(dy) {
            ens = self.step(&ens, y, rng)?;
            out.extend(pf_estimate(&ens).iter());
        }
        Ok(out)
    }
}

pub fn pf_init(model: &LinearGaussianModel, count: usize, seed: u64) -> Result<ParticleEnsemble> {
    let filter = BootstrapFilter::new(model, count)?;
    Ok(filter.init(&mut stream_rng(seed, 0)))
}

pub fn pf_step(
    model: &LinearGaussianModel,
    ens: &ParticleEnsemble,
    y: &[f64],
    rng: &mut StreamRng,
) -> Result<ParticleEnsemble> {
    BootstrapFilter::new(model, ens.len())?.step(ens, y, rng)
}
