//! Exact Kalman filter for [`LinearGaussianModel`]s.
//!
//! One step maps `(mean, cov)` at `t-1` and `Y_t` to
//!
//! ```text
//! P    = F C F^T + Q
//! K    = P H^T (R + H P H^T)^{-1}
//! mean = (F - K H F) mean + K Y_t
//! C    = (I - K H) P              (then symmetrized)
//! ```
//!
//! The covariance and gain sequences do not depend on the observations, so
//! [`GainSchedule`] precomputes them once per horizon and evaluates many
//! trajectories with only the mean recursion.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::model::LinearGaussianModel;

/// Condition number above which the innovation covariance is rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Gain of the most recent update (zero at `t = 0`).
    pub gain: DMatrix<f64>,
    pub t: usize,
}

impl KalmanState {
    pub fn initial(model: &LinearGaussianModel) -> Self {
        Self {
            mean: model.init_mean().clone(),
            cov: model.init_cov().clone(),
            gain: DMatrix::zeros(model.dim_x(), model.dim_y()),
            t: 0,
        }
    }
}

/// Gain and updated covariance for the step leaving covariance `cov`.
fn gain_and_cov(model: &LinearGaussianModel, cov: &DMatrix<f64>, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (f, h) = (model.f(), model.h());
    let pred = f * cov * f.transpose() + model.q();
    let innov = model.r() + h * &pred * h.transpose();
    let innov = (&innov + innov.transpose()) * 0.5;
    let eig = innov.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::Singular { t, condition });
    }
    let chol = innov.cholesky().ok_or(Error::Singular { t, condition })?;
    // K^T = S^{-1} H P  (P symmetric)
    let gain = chol.solve(&(h * &pred)).transpose();
    let dx = model.dim_x();
    let mut next = (DMatrix::identity(dx, dx) - &gain * h) * pred;
    symmetrize(&mut next);
    Ok((gain, next))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn kalman_step(model: &LinearGaussianModel, prev: &KalmanState, y: &DVector<f64>) -> Result<KalmanState> {
    if y.len() != model.dim_y() {
        return Err(dim_err(format!("observation has length {}, model expects {}", y.len(), model.dim_y())));
    }
    if prev.mean.len() != model.dim_x() || prev.cov.shape() != (model.dim_x(), model.dim_x()) {
        return Err(dim_err("Kalman state does not match model dimension"));
    }
    let t = prev.t + 1;
    let (gain, cov) = gain_and_cov(model, &prev.cov, t)?;
    let f = model.f();
    let hf = model.h() * f;
    let mean = (f - &gain * hf) * &prev.mean + &gain * y;
    Ok(KalmanState { mean, cov, gain, t })
}

/// Filters an observation sequence from the model's initial law. The result
/// starts with the `t = 0` state, so it has one more entry than
/// `observations`.
pub fn kalman_filter(model: &LinearGaussianModel, observations: &[DVector<f64>]) -> Result<Vec<KalmanState>> {
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(KalmanState::initial(model));
    for y in observations {
        let next = kalman_step(model, out.last().expect("non-empty"), y)?;
        out.push(next);
    }
    Ok(out)
}

/// Observation-independent covariance and gain sequences for `t = 1..=T`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    dim_x: usize,
    dim_y: usize,
    /// `F - K_t H F`, row-major `d_x * d_x` per step.
    transition: Vec<Vec<f64>>,
    /// `K_t`, row-major `d_x * d_y` per step.
    gains: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
    init_mean: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl GainSchedule {
    pub fn new(model: &LinearGaussianModel, horizon: usize) -> Result<Self> {
        let (dx, dy) = (model.dim_x(), model.dim_y());
        let hf = model.h() * model.f();
        let mut cov = model.init_cov().clone();
        let mut transition = Vec::with_capacity(horizon);
        let mut gains = Vec::with_capacity(horizon);
        let mut covs = Vec::with_capacity(horizon + 1);
        covs.push(cov.clone());
        for t in 1..=horizon {
            let (gain, next) = gain_and_cov(model, &cov, t)?;
            transition.push(row_major(&(model.f() - &gain * &hf)));
            gains.push(row_major(&gain));
            covs.push(next.clone());
            cov = next;
        }
        Ok(Self { dim_x: dx, dim_y: dy, transition, gains, covs, init_mean: model.init_mean().as_slice().to_vec() })
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// `C_t` for `t = 0..=T`.
    pub fn covariance(&self, t: usize) -> &DMatrix<f64> {
        &self.covs[t]
    }

    /// `K_t` for `t = 1..=T`.
    pub fn gain(&self, t: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim_x, self.dim_y, &self.gains[t - 1])
    }

    /// Filtered means for flat observations `[T][d_y]`, starting from
    /// `init_mean` (or the model's), written as flat `[T][d_x]` (t = 1..=T).
    pub fn filter_means(&self, observations: &[f64], init_mean: Option<&[f64]>) -> Result<Vec<f64>> {
        let (dx, dy) = (self.dim_x, self.dim_y);
        if observations.len() % dy != 0 || observations.len() / dy > self.horizon() {
            return Err(dim_err(format!(
                "observation buffer of length {} does not fit horizon {} with d_y = {dy}",
                observations.len(),
                self.horizon()
            )));
        }
        let steps = observations.len() / dy;
        let mut mean = init_mean.unwrap_or(&self.init_mean).to_vec();
        if mean.len() != dx {
            return Err(dim_err("initial mean has wrong dimension"));
        }
        let mut out = Vec::with_capacity(steps * dx);
        let mut next = vec![0.0; dx];
        for t in 0..steps {
            let a = &self.transition[t];
            let k = &self.gains[t];
            let y = &observations[t * dy..(t + 1) * dy];
            for i in 0..dx {
                let mut acc = 0.0;
                for j in 0..dx {
                    acc += a[i * dx + j] * mean[j];
                }
                for j in 0..dy {
                    acc += k[i * dy + j] * y[j];
                }
                next[i] = acc;
            }
            std::mem::swap(&mut mean, &mut next);
            out.extend_from_slice(&mean);
        }
        Ok(out)
    }
}

/// Iterates the covariance recursion from the model's `init_cov` until the
/// max-norm change drops below `tol`.
pub fn riccati_fixed_point(model: &LinearGaussianModel, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Argument("tol and max_iter must be positive".into()));
    }
    let mut cov = model.init_cov().clone();
    let mut delta = f64::INFINITY;
    for k in 1..=max_iter {
        let (_, next) = gain_and_cov(model, &cov, k)?;
        delta = (&next - &cov).amax();
        cov = next;
        if delta < tol {
            return Ok(cov);
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, last_delta: delta, last: cov })
}

/// Steady-state gain `K_inf` associated with a fixed-point covariance.
pub fn steady_state_gain(model: &LinearGaussianModel, fixed_point: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(gain_and_cov(model, fixed_point, 0)?.0)
}

/// Transition of the joint `(mean, state)` system:
///
/// ```text
/// [ F - K H F   K H F ]
/// [     0         F   ]
/// ```
pub fn stacked_transition(model: &LinearGaussianModel, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dx = model.dim_x();
    if gain.shape() != (dx, model.dim_y()) {
        return Err(dim_err(format!("gain must be {dx}x{}, got {:?}", model.dim_y(), gain.shape())));
    }
    let f = model.f();
    let khf = gain * model.h() * f;
    let mut out = DMatrix::zeros(2 * dx, 2 * dx);
    out.view_mut((0, 0), (dx, dx)).copy_from(&(f - &khf));
    out.view_mut((0, dx), (dx, dx)).copy_from(&khf);
    out.view_mut((dx, dx), (dx, dx)).copy_from(f);
    Ok(out)
}

/// Filter trace CSV: `t, mean_*, cov_i_j (row-major), gain_i_j (row-major)`.
pub fn write_trace_csv<W: Write>(states: &[KalmanState], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = states.first() else {
        w.flush()?;
        return Ok(());
    };
    let (dx, dy) = first.gain.shape();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dx).map(|i| format!("mean_{i}")));
    for i in 1..=dx {
        header.extend((1..=dx).map(|j| format!("cov_{i}_{j}")));
    }
    for i in 1..=dx {
        header.extend((1..=dy).map(|j| format!("gain_{i}_{j}")));
    }
    w.write_record(&header)?;
    for s in states {
        let mut row = vec![s.t.to_string()];
        row.extend(s.mean.iter().map(|v| v.to_string()));
        row.extend(row_major(&s.cov).iter().map(|v| v.to_string()));
        row.extend(row_major(&s.gain).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
