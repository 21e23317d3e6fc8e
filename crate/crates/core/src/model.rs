//! Linear-Gaussian state-space models and trajectory sampling.
//!
//! ```text
//! X_t = F X_{t-1} + V_t,   V_t ~ N(0, Q)
//! Y_t = H X_t + W_t,       W_t ~ N(0, R)
//! X_0 ~ N(init_mean, init_cov)
//! ```

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::seed::{stream_rng, StreamRng};

/// Symmetry tolerance and the floor below which a negative eigenvalue is
/// treated as a genuine loss of semi-definiteness.
pub const TOL_SYM: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    init_mean: DVector<f64>,
    init_cov: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(
        f: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let dx = f.nrows();
        if dx == 0 || f.ncols() != dx {
            return Err(dim_err(format!("F must be square and non-empty, got {}x{}", f.nrows(), f.ncols())));
        }
        let dy = h.nrows();
        if dy == 0 || h.ncols() != dx {
            return Err(dim_err(format!("H must be d_y x {dx}, got {}x{}", h.nrows(), h.ncols())));
        }
        check_shape("Q", &q, dx)?;
        check_shape("R", &r, dy)?;
        check_shape("init_cov", &init_cov, dx)?;
        if init_mean.len() != dx {
            return Err(dim_err(format!("init_mean must have length {dx}, got {}", init_mean.len())));
        }
        for (name, m) in [("F", &f), ("H", &h), ("Q", &q), ("R", &r), ("init_cov", &init_cov)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        if init_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("init_mean has non-finite entries".into()));
        }
        check_psd("Q", &q)?;
        check_psd("init_cov", &init_cov)?;
        check_symmetric("R", &r)?;
        let min_r = r.clone().symmetric_eigen().eigenvalues.min();
        if min_r <= 0.0 {
            return Err(Error::InvalidModel(format!("R must be positive definite (min eigenvalue {min_r:e})")));
        }
        Ok(Self { f, h, q, r, init_mean, init_cov })
    }

    /// Scalar model `X_t = alpha X_{t-1} + V_t`, `Y_t = X_t + beta W_t` with
    /// standard Gaussian noises and `X_0 ~ N(0, init_var)`.
    pub fn scalar(alpha: f64, beta: f64, init_var: f64) -> Result<Self> {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(m(alpha), m(1.0), m(1.0), m(beta * beta), DVector::zeros(1), m(init_var))
    }

    pub fn dim_x(&self) -> usize {
        self.f.nrows()
    }

    pub fn dim_y(&self) -> usize {
        self.h.nrows()
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn init_mean(&self) -> &DVector<f64> {
        &self.init_mean
    }

    pub fn init_cov(&self) -> &DMatrix<f64> {
        &self.init_cov
    }

    /// Copy of the model with a different initial law.
    pub fn with_initial(&self, init_mean: DVector<f64>, init_cov: DMatrix<f64>) -> Result<Self> {
        Self::new(self.f.clone(), self.h.clone(), self.q.clone(), self.r.clone(), init_mean, init_cov)
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(dim_err(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > TOL_SYM * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    if min < -TOL_SYM {
        return Err(Error::InvalidModel(format!("{name} is not positive semi-definite (min eigenvalue {min:e})")));
    }
    Ok(())
}

/// Square-root factor `A` with `A A^T = cov`.
///
/// Cholesky when the covariance is positive definite; otherwise a symmetric
/// eigendecomposition with eigenvalues in `[-1e-10, 0)` clamped to zero.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -TOL_SYM {
            return Err(Error::InvalidModel(format!(
                "covariance has negative eigenvalue {lambda:e}"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(scaled)
}

/// Draws `out += factor * z` with `z` standard normal.
pub(crate) fn add_gaussian(factor: &DMatrix<f64>, rng: &mut StreamRng, z: &mut [f64], out: &mut [f64]) {
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, zj) in z.iter().enumerate() {
            acc += factor[(i, j)] * zj;
        }
        *o += acc;
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}

/// Independent sampled trajectories, stored trajectory-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    states: Vec<f64>,
    observations: Vec<f64>,
    count: usize,
    horizon: usize,
    dim_x: usize,
    dim_y: usize,
    pub seed: u64,
}

impl TrajectoryBatch {
    /// Assembles a batch from flat `[N][T+1][d_x]` states and `[N][T][d_y]`
    /// observations.
    pub fn from_parts(
        states: Vec<f64>,
        observations: Vec<f64>,
        count: usize,
        horizon: usize,
        dim_x: usize,
        dim_y: usize,
        seed: u64,
    ) -> Result<Self> {
        if states.len() != count * (horizon + 1) * dim_x {
            return Err(dim_err(format!(
                "states length {} != N*(T+1)*d_x = {}",
                states.len(),
                count * (horizon + 1) * dim_x
            )));
        }
        if observations.len() != count * horizon * dim_y {
            return Err(dim_err(format!(
                "observations length {} != N*T*d_y = {}",
                observations.len(),
                count * horizon * dim_y
            )));
        }
        Ok(Self { states, observations, count, horizon, dim_x, dim_y, seed })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    /// `X_t` of trajectory `n`, `t` in `0..=T`.
    pub fn state(&self, n: usize, t: usize) -> &[f64] {
        let base = (n * (self.horizon + 1) + t) * self.dim_x;
        &self.states[base..base + self.dim_x]
    }

    /// `Y_t` of trajectory `n`, `t` in `1..=T`.
    pub fn observation(&self, n: usize, t: usize) -> &[f64] {
        assert!(t >= 1 && t <= self.horizon, "observation index {t} outside 1..={}", self.horizon);
        let base = (n * self.horizon + t - 1) * self.dim_y;
        &self.observations[base..base + self.dim_y]
    }

    /// All states of trajectory `n`, `(T+1) * d_x` values.
    pub fn states_of(&self, n: usize) -> &[f64] {
        let len = (self.horizon + 1) * self.dim_x;
        &self.states[n * len..(n + 1) * len]
    }

    /// All observations of trajectory `n`, `T * d_y` values.
    pub fn observations_of(&self, n: usize) -> &[f64] {
        let len = self.horizon * self.dim_y;
        &self.observations[n * len..(n + 1) * len]
    }

    pub fn states_flat(&self) -> &[f64] {
        &self.states
    }

    pub fn observations_flat(&self) -> &[f64] {
        &self.observations
    }

    /// CSV fixture: `n,t,x_1..x_dx,y_1..y_dy`; the `t=0` rows leave the y
    /// fields empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["n".to_string(), "t".to_string()];
        header.extend((1..=self.dim_x).map(|i| format!("x_{i}")));
        header.extend((1..=self.dim_y).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for n in 0..self.count {
            for t in 0..=self.horizon {
                row.clear();
                row.push(n.to_string());
                row.push(t.to_string());
                row.extend(self.state(n, t).iter().map(|v| v.to_string()));
                if t == 0 {
                    row.extend(std::iter::repeat_n(String::new(), self.dim_y));
                } else {
                    row.extend(self.observation(n, t).iter().map(|v| v.to_string()));
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a fixture written by [`TrajectoryBatch::write_csv`].
    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim_x = header.iter().filter(|h| h.starts_with("x_")).count();
        let dim_y = header.iter().filter(|h| h.starts_with("y_")).count();
        if header.len() != 2 + dim_x + dim_y || dim_x == 0 || dim_y == 0 {
            return Err(dim_err("trajectory csv header must be n,t,x_1..,y_1.."));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Argument(format!("bad number `{s}`: {e}")))
        };
        let mut rows: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let n: usize = rec[0].parse().map_err(|_| Error::Argument(format!("bad n `{}`", &rec[0])))?;
            let t: usize = rec[1].parse().map_err(|_| Error::Argument(format!("bad t `{}`", &rec[1])))?;
            let x = (0..dim_x).map(|i| parse(&rec[2 + i])).collect::<Result<Vec<_>>>()?;
            let y = if t == 0 {
                Vec::new()
            } else {
                (0..dim_y).map(|i| parse(&rec[2 + dim_x + i])).collect::<Result<Vec<_>>>()?
            };
            rows.push((n, t, x, y));
        }
        let count = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let horizon = rows.iter().map(|r| r.1).max().unwrap_or(0);
        if rows.len() != count * (horizon + 1) {
            return Err(dim_err("trajectory csv does not contain a full N x (T+1) grid"));
        }
        let mut states = vec![0.0; count * (horizon + 1) * dim_x];
        let mut observations = vec![0.0; count * horizon * dim_y];
        for (n, t, x, y) in rows {
            let base = (n * (horizon + 1) + t) * dim_x;
            states[base..base + dim_x].copy_from_slice(&x);
            if t > 0 {
                let base = (n * horizon + t - 1) * dim_y;
                observations[base..base + dim_y].copy_from_slice(&y);
            }
        }
        Self::from_parts(states, observations, count, horizon, dim_x, dim_y, seed)
    }
}

/// Precomputed noise factors for repeated sampling from one model.
#[derive(Debug, Clone)]
pub struct TrajectorySampler<'a> {
    model: &'a LinearGaussianModel,
    init_factor: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(model: &'a LinearGaussianModel) -> Result<Self> {
        Ok(Self {
            model,
            init_factor: covariance_factor(model.init_cov())?,
            q_factor: covariance_factor(model.q())?,
            r_factor: covariance_factor(model.r())?,
        })
    }

    /// Samples trajectory `n` of the batch keyed by `seed` into flat buffers
    /// of length `(T+1) d_x` and `T d_y`.
    pub fn sample_into(&self, horizon: usize, seed: u64, n: usize, states: &mut [f64], obs: &mut [f64]) {
        let (dx, dy) = (self.model.dim_x(), self.model.dim_y());
        let mut rng = stream_rng(seed, n as u64);
        let mut zx = vec![0.0; dx];
        let mut zy = vec![0.0; dy];
        states[..dx].copy_from_slice(self.model.init_mean().as_slice());
        add_gaussian(&self.init_factor, &mut rng, &mut zx, &mut states[..dx]);
        for t in 1..=horizon {
            let (prev, cur) = states.split_at_mut(t * dx);
            let prev = &prev[(t - 1) * dx..];
            let cur = &mut cur[..dx];
            mat_vec(self.model.f(), prev, cur);
            add_gaussian(&self.q_factor, &mut rng, &mut zx, cur);
            let y = &mut obs[(t - 1) * dy..t * dy];
            mat_vec(self.model.h(), cur, y);
            add_gaussian(&self.r_factor, &mut rng, &mut zy, y);
        }
    }

    pub fn sample(&self, horizon: usize, seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut states = vec![0.0; (horizon + 1) * self.model.dim_x()];
        let mut obs = vec![0.0; horizon * self.model.dim_y()];
        self.sample_into(horizon, seed, n, &mut states, &mut obs);
        (states, obs)
    }
}

/// Draws `count` independent trajectories of length `horizon`.
///
/// Trajectory `n` uses random stream `n` of `seed`, so the batch is
/// bit-identical for identical arguments regardless of thread count.
pub fn sample_trajectories(
    model: &LinearGaussianModel,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if horizon == 0 || count == 0 {
        return Err(Error::Argument("horizon and count must be positive".into()));
    }
    let sampler = TrajectorySampler::new(model)?;
    let (dx, dy) = (model.dim_x(), model.dim_y());
    let mut states = vec![0.0; count * (horizon + 1) * dx];
    let mut observations = vec![0.0; count * horizon * dy];
    states
        .par_chunks_mut((horizon + 1) * dx)
        .zip(observations.par_chunks_mut(horizon * dy))
        .enumerate()
        .for_each(|(n, (s, o))| sampler.sample_into(horizon, seed, n, s, o));
    TrajectoryBatch::from_parts(states, observations, count, horizon, dx, dy, seed)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(dim_err(format!("spectral radius needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { location: "spectral_radius input".into() });
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig.iter().map(|c| c.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityDiagnostic {
    pub stable: bool,
    pub spectral_radius: f64,
    pub margin: f64,
}

/// Signal stability: `rho(F) < 1 - margin`.
pub fn check_stationarity_condition(model: &LinearGaussianModel, margin: f64) -> Result<StationarityDiagnostic> {
    let radius = spectral_radius(model.f())?;
    Ok(StationarityDiagnostic { stable: radius < 1.0 - margin, spectral_radius: radius, margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn rejects_bad_models() {
        let ok = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
        assert!(ok.is_ok());
        let bad_r = LinearGaussianModel::new(
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[0.0]),
            DVector::zeros(1),
            m(1, 1, &[1.0]),
        );
        assert!(matches!(bad_r, Err(Error::InvalidModel(_))));
        let bad_q = LinearGaussianModel::new(
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[-1.0]),
            m(1, 1, &[1.0]),
            DVector::zeros(1),
            m(1, 1, &[1.0]),
        );
        assert!(matches!(bad_q, Err(Error::InvalidModel(_))));
        let bad_dim = LinearGaussianModel::new(
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            m(1, 1, &[1.0]),
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            m(1, 1, &[1.0]),
            DVector::zeros(2),
            m(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        );
        assert!(matches!(bad_dim, Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_noise_is_deterministic_power_of_f() {
        let f = m(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let model = LinearGaussianModel::new(
            f.clone(),
            m(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 2),
            m(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let batch = sample_trajectories(&model, 6, 3, 11).unwrap();
        let mut x = DVector::from_vec(vec![1.0, -2.0]);
        for t in 0..=6 {
            for n in 0..3 {
                let s = batch.state(n, t);
                assert_relative_eq!(s[0], x[0], epsilon = 1e-14);
                assert_relative_eq!(s[1], x[1], epsilon = 1e-14);
            }
            x = &f * x;
        }
    }

    #[test]
    fn initial_variance_matches_scalar_example() {
        let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0).unwrap();
        let batch = sample_trajectories(&model, 1, 5000, 3).unwrap();
        let x0: Vec<f64> = (0..5000).map(|n| batch.state(n, 0)[0]).collect();
        let mean = x0.iter().sum::<f64>() / 5000.0;
        let var = x0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4999.0;
        assert!((var - 25.0).abs() < 2.5, "var {var}");
    }

    #[test]
    fn same_seed_same_batch() {
        let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0).unwrap();
        let a = sample_trajectories(&model, 20, 50, 9).unwrap();
        let b = sample_trajectories(&model, 20, 50, 9).unwrap();
        let c = sample_trajectories(&model, 20, 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states_flat(), c.states_flat());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.observations_flat()), bits(b.observations_flat()));
    }

    #[test]
    fn process_noise_covariance_is_q() {
        let f = m(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let q = m(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let model = LinearGaussianModel::new(
            f.clone(),
            m(1, 2, &[1.0, 1.0]),
            q.clone(),
            m(1, 1, &[0.5]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let batch = sample_trajectories(&model, 4, 20_000, 5).unwrap();
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        let mut cnt = 0.0;
        for n in 0..batch.count() {
            for t in 1..=4 {
                let prev = DVector::from_column_slice(batch.state(n, t - 1));
                let cur = DVector::from_column_slice(batch.state(n, t));
                let v = cur - &f * prev;
                cov += &v * v.transpose();
                cnt += 1.0;
            }
        }
        cov /= cnt;
        assert!((cov - q).amax() < 0.05);
    }

    #[test]
    fn singular_covariance_factor() {
        let c = m(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let a = covariance_factor(&c).unwrap();
        assert!((&a * a.transpose() - c).amax() < 1e-12);
        let bad = m(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(covariance_factor(&bad).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0).unwrap();
        let batch = sample_trajectories(&model, 5, 3, 1).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,t,x_1,y_1\n0,0,"));
        assert!(text.lines().nth(1).unwrap().ends_with(','));
        let back = TrajectoryBatch::read_csv(buf.as_slice(), 1).unwrap();
        assert_eq!(back, batch);
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&DMatrix::identity(4, 4)).unwrap(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(spectral_radius(&m(1, 1, &[0.98])).unwrap(), 0.98, max_relative = 1e-10);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scaled_rotation_radius_matches_power_iteration() {
        let th: f64 = 0.7;
        let r = m(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.5;
        // Gelfand: ||A^k||_2^(1/k) -> rho(A)
        let mut p = DMatrix::<f64>::identity(2, 2);
        let k = 200;
        for _ in 0..k {
            p = &r * p;
        }
        let oracle = p.singular_values().max().powf(1.0 / k as f64);
        assert_relative_eq!(oracle, 0.5, max_relative = 1e-10);
        assert_relative_eq!(spectral_radius(&r).unwrap(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn stationarity_examples() {
        let stable = LinearGaussianModel::scalar(0.98, 2.0, 25.0).unwrap();
        let unstable = LinearGaussianModel::scalar(1.001, 2.0, 25.0).unwrap();
        let zero = LinearGaussianModel::scalar(0.0, 2.0, 25.0).unwrap();
        assert!(check_stationarity_condition(&stable, 0.0).unwrap().stable);
        let d = check_stationarity_condition(&unstable, 0.0).unwrap();
        assert!(!d.stable);
        assert_relative_eq!(d.spectral_radius, 1.001, max_relative = 1e-12);
        assert!(check_stationarity_condition(&zero, 0.0).unwrap().stable);
    }
}
