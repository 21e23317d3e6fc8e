//! Scoring filters against the Kalman oracle.
//!
//! Every method sees the same test observations. Per-time-step RMSE is
//! computed against the Kalman mean (the optimal estimate) and against the
//! latent state.

use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::kalman::GainSchedule;
use crate::model::{mat_vec, LinearGaussianModel, TrajectorySampler};
use crate::particle::BootstrapFilter;
use crate::rnn::{unroll_flat, RnnParams, RnnTopology};
use crate::seed::{derive_seed, stream_rng, StreamRng};

/// Test trajectories per parallel work item.
const CHUNK: usize = 8;

/// Accumulation is flagged when the late/early ratio exceeds this.
pub const DEFAULT_ACCUMULATION_THRESHOLD: f64 = 2.0;

/// Lags used by the contraction fit.
pub const CONTRACTION_FIT_LAGS: RangeInclusive<usize> = 5..=50;

/// A filter that maps flat `[T][d_y]` observations to flat `[T][d_x]` mean
/// estimates. `rng` is a per-trajectory stream for randomized methods.
pub trait FilterMethod: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, observations: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>>;
}

pub struct KalmanMethod {
    schedule: GainSchedule,
}

impl KalmanMethod {
    pub fn new(model: &LinearGaussianModel, horizon: usize) -> Result<Self> {
        Ok(Self { schedule: GainSchedule::new(model, horizon)? })
    }
}

impl FilterMethod for KalmanMethod {
    fn name(&self) -> &str {
        "kalman"
    }

    fn estimate(&self, observations: &[f64], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.schedule.filter_means(observations, None)
    }
}

pub struct RnnMethod {
    pub params: RnnParams,
    pub topology: RnnTopology,
    name: String,
}

impl RnnMethod {
    pub fn new(name: impl Into<String>, params: RnnParams, topology: RnnTopology) -> Result<Self> {
        params.validate(&topology)?;
        Ok(Self { params, topology, name: name.into() })
    }
}

impl FilterMethod for RnnMethod {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, observations: &[f64], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(unroll_flat(&self.params, &self.topology, observations, &self.params.init_hidden)?.0)
    }
}

pub struct ParticleMethod<'a> {
    filter: BootstrapFilter<'a>,
    name: String,
}

impl<'a> ParticleMethod<'a> {
    pub fn new(model: &'a LinearGaussianModel, count: usize) -> Result<Self> {
        Ok(Self { filter: BootstrapFilter::new(model, count)?, name: "particle".into() })
    }
}

impl FilterMethod for ParticleMethod<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, observations: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.filter.run(observations, rng)
    }
}

/// Ignores the observations and always predicts `value`.
pub struct ConstantMethod {
    value: Vec<f64>,
    dim_y: usize,
    name: String,
}

impl ConstantMethod {
    pub fn new(name: impl Into<String>, value: Vec<f64>, dim_y: usize) -> Self {
        Self { value, dim_y, name: name.into() }
    }

    pub fn zero(dim_x: usize, dim_y: usize) -> Self {
        Self::new("zero", vec![0.0; dim_x], dim_y)
    }
}

impl FilterMethod for ConstantMethod {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, observations: &[f64], _rng: &mut StreamRng) -> Result<Vec<f64>> {
        let steps = observations.len() / self.dim_y;
        Ok(self.value.iter().copied().cycle().take(steps * self.value.len()).collect())
    }
}

/// RMSE curves of one method. Entries are for `t = 1..=len`; when the
/// method produced a non-finite estimate the curves stop at `overflow_at - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodCurve {
    pub name: String,
    pub rmse_vs_oracle: Vec<f64>,
    pub rmse_vs_truth: Vec<f64>,
    pub n_effective: Vec<usize>,
    pub overflow_at: Option<usize>,
}

impl MethodCurve {
    /// Value at `t` (1-based); `+inf` at and after an overflow.
    pub fn rmse_at(&self, t: usize) -> f64 {
        self.rmse_vs_oracle.get(t.wrapping_sub(1)).copied().unwrap_or(f64::INFINITY)
    }

    /// Mean RMSE-vs-oracle over the 1-based inclusive window.
    pub fn window_mean(&self, window: (usize, usize)) -> f64 {
        let (a, b) = window;
        (a..=b).map(|t| self.rmse_at(t)).sum::<f64>() / (b - a + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub methods: Vec<MethodCurve>,
    pub n_test: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Result<&MethodCurve> {
        self.methods
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Argument(format!("no method named {name:?} in report")))
    }

    /// CSV with columns `method,t,rmse_vs_oracle,rmse_vs_truth,n_effective`.
    /// An overflow is written as one final row with `overflow` in both RMSE
    /// columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "t", "rmse_vs_oracle", "rmse_vs_truth", "n_effective"])?;
        for m in &self.methods {
            for (i, ((o, tr), n)) in m.rmse_vs_oracle.iter().zip(&m.rmse_vs_truth).zip(&m.n_effective).enumerate() {
                w.write_record([m.name.clone(), (i + 1).to_string(), o.to_string(), tr.to_string(), n.to_string()])?;
            }
            if let Some(t) = m.overflow_at {
                w.write_record([m.name.as_str(), &t.to_string(), "overflow", "overflow", "0"])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Sums {
    oracle: Vec<f64>,
    truth: Vec<f64>,
    first_bad: Option<usize>,
}

/// Runs the oracle and every method on `n_test` fresh trajectories of the
/// model drawn with `seed`.
pub fn evaluate_filters(
    model: &LinearGaussianModel,
    oracle: &GainSchedule,
    methods: &[&dyn FilterMethod],
    n_test: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_test == 0 || horizon == 0 {
        return Err(Error::Argument("n_test and horizon must be positive".into()));
    }
    if oracle.horizon() < horizon {
        return Err(Error::Argument(format!("oracle covers {} steps, evaluation needs {horizon}", oracle.horizon())));
    }
    let dx = model.dim_x();
    let sampler = TrajectorySampler::new(model)?;
    let method_seeds: Vec<u64> = methods.iter().map(|m| derive_seed(seed, &format!("method-{}", m.name()))).collect();
    let indices: Vec<usize> = (0..n_test).collect();

    let chunk_sums: Vec<Result<Vec<Sums>>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums: Vec<Sums> = methods
                .iter()
                .map(|_| Sums { oracle: vec![0.0; horizon], truth: vec![0.0; horizon], first_bad: None })
                .collect();
            for &n in chunk {
                let (states, obs) = sampler.sample(horizon, seed, n);
                let kalman = oracle.filter_means(&obs, None)?;
                for (mi, method) in methods.iter().enumerate() {
                    let mut rng = stream_rng(method_seeds[mi], n as u64);
                    let est = method.estimate(&obs, &mut rng)?;
                    if est.len() != horizon * dx {
                        return Err(Error::Contract {
                            method: method.name().to_string(),
                            detail: format!("emitted {} values, expected {}", est.len(), horizon * dx),
                        });
                    }
                    let s = &mut sums[mi];
                    for t in 0..horizon {
                        let e = &est[t * dx..(t + 1) * dx];
                        let k = &kalman[t * dx..(t + 1) * dx];
                        let x = &states[(t + 1) * dx..(t + 2) * dx];
                        let d_o: f64 = e.iter().zip(k).map(|(a, b)| (a - b) * (a - b)).sum();
                        let d_t: f64 = e.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                        if !d_o.is_finite() || !d_t.is_finite() {
                            s.first_bad = Some(s.first_bad.map_or(t + 1, |b| b.min(t + 1)));
                            break;
                        }
                        s.oracle[t] += d_o;
                        s.truth[t] += d_t;
                    }
                }
            }
            Ok(sums)
        })
        .collect();

    let mut total: Vec<Sums> = methods
        .iter()
        .map(|_| Sums { oracle: vec![0.0; horizon], truth: vec![0.0; horizon], first_bad: None })
        .collect();
    for part in chunk_sums {
        for (acc, s) in total.iter_mut().zip(part?) {
            for t in 0..horizon {
                acc.oracle[t] += s.oracle[t];
                acc.truth[t] += s.truth[t];
            }
            acc.first_bad = match (acc.first_bad, s.first_bad) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
    }

    let curves = methods
        .iter()
        .zip(total)
        .map(|(m, s)| {
            let len = s.first_bad.map_or(horizon, |t| t - 1);
            let rms = |v: &[f64]| v[..len].iter().map(|x| (x / n_test as f64).sqrt()).collect::<Vec<_>>();
            MethodCurve {
                name: m.name().to_string(),
                rmse_vs_oracle: rms(&s.oracle),
                rmse_vs_truth: rms(&s.truth),
                n_effective: vec![n_test; len],
                overflow_at: s.first_bad,
            }
        })
        .collect();
    Ok(EvalReport { methods: curves, n_test, horizon, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccumulationResult {
    pub flagged: bool,
    pub ratio: f64,
    pub early_mean: f64,
    pub late_mean: f64,
}

/// Compares mean RMSE-vs-oracle over two 1-based inclusive windows.
pub fn detect_error_accumulation(
    report: &EvalReport,
    method: &str,
    early_window: (usize, usize),
    late_window: (usize, usize),
    threshold: f64,
) -> Result<AccumulationResult> {
    for (name, (a, b)) in [("early", early_window), ("late", late_window)] {
        if a == 0 || a > b {
            return Err(Error::Argument(format!("{name} window [{a}, {b}] is empty")));
        }
        if b > report.horizon {
            return Err(Error::Argument(format!("{name} window [{a}, {b}] exceeds horizon {}", report.horizon)));
        }
    }
    if early_window.1 >= late_window.0 && late_window.1 >= early_window.0 {
        return Err(Error::Argument("windows overlap".into()));
    }
    let curve = report.method(method)?;
    let early_mean = curve.window_mean(early_window);
    let late_mean = curve.window_mean(late_window);
    let ratio = late_mean / early_mean;
    Ok(AccumulationResult { flagged: ratio > threshold, ratio, early_mean, late_mean })
}

/// First `t > reference` at which RMSE-vs-oracle exceeds `factor` times
/// its value at `reference`.
pub fn accumulation_onset(curve: &MethodCurve, reference: usize, factor: f64, horizon: usize) -> Option<usize> {
    let base = curve.rmse_at(reference);
    (reference + 1..=horizon).find(|&t| curve.rmse_at(t) > factor * base)
}

/// A filter exposed through its internal state so that two runs from
/// different initial states can be compared.
pub trait ContractionProbe: Sync {
    fn state_dim(&self) -> usize;
    fn nominal_state(&self) -> Vec<f64>;
    /// Internal states after each step, flat `[T][state_dim]`.
    fn run_from(&self, init: &[f64], observations: &[f64]) -> Result<Vec<f64>>;
}

/// Kalman mean recursion with a fixed gain, `m_t = (F - K H F) m_{t-1} + K y_t`.
pub struct KalmanMeanProbe {
    transition: DMatrix<f64>,
    gain: DMatrix<f64>,
    init_mean: Vec<f64>,
}

impl KalmanMeanProbe {
    pub fn new(model: &LinearGaussianModel, gain: DMatrix<f64>) -> Result<Self> {
        if gain.shape() != (model.dim_x(), model.dim_y()) {
            return Err(dim_err("gain shape does not match the model"));
        }
        let transition = model.f() - &gain * model.h() * model.f();
        Ok(Self { transition, gain, init_mean: model.init_mean().as_slice().to_vec() })
    }
}

impl ContractionProbe for KalmanMeanProbe {
    fn state_dim(&self) -> usize {
        self.init_mean.len()
    }

    fn nominal_state(&self) -> Vec<f64> {
        self.init_mean.clone()
    }

    fn run_from(&self, init: &[f64], observations: &[f64]) -> Result<Vec<f64>> {
        let dx = self.state_dim();
        let dy = self.gain.ncols();
        let mut mean = init.to_vec();
        let mut a = vec![0.0; dx];
        let mut b = vec![0.0; dx];
        let mut out = Vec::with_capacity(observations.len() / dy * dx);
        for y in observations.chunks(dy) {
            mat_vec(&self.transition, &mean, &mut a);
            mat_vec(&self.gain, y, &mut b);
            for ((m, x), z) in mean.iter_mut().zip(&a).zip(&b) {
                *m = x + z;
            }
            out.extend_from_slice(&mean);
        }
        Ok(out)
    }
}

/// The fed-back hidden state of a network.
pub struct RnnStateProbe<'a> {
    pub params: &'a RnnParams,
    pub topology: &'a RnnTopology,
}

impl ContractionProbe for RnnStateProbe<'_> {
    fn state_dim(&self) -> usize {
        self.params.init_hidden.iter().map(|s| s.len()).sum()
    }

    fn nominal_state(&self) -> Vec<f64> {
        self.params.init_hidden.iter().flat_map(|s| s.iter().copied()).collect()
    }

    fn run_from(&self, init: &[f64], observations: &[f64]) -> Result<Vec<f64>> {
        if init.len() != self.state_dim() {
            return Err(dim_err("initial state has wrong dimension"));
        }
        let mut rest = init;
        let blocks: Vec<DVector<f64>> = self
            .params
            .init_hidden
            .iter()
            .map(|s| {
                let (head, tail) = rest.split_at(s.len());
                rest = tail;
                DVector::from_column_slice(head)
            })
            .collect();
        Ok(unroll_flat(self.params, self.topology, observations, &blocks)?.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub kappa_hat: f64,
    pub c_hat: f64,
    /// `D_l / D_{l-1}` for the lags where both are positive.
    pub per_lag_ratios: Vec<f64>,
    /// Root mean squared log-space residual of the fit.
    pub fit_residual: f64,
    /// `D_l` for `l = 0..=horizon`.
    pub curve: Vec<f64>,
    /// The difference vanished before the fit window; `kappa_hat` is then
    /// only an upper bound.
    pub early_convergence: bool,
}

impl ContractionEstimate {
    /// CSV with columns `lag,mean_sq_diff_root`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lag", "mean_sq_diff_root"])?;
        for (lag, d) in self.curve.iter().enumerate() {
            w.write_record([lag.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the probe twice per pair, from its nominal state and from the
/// nominal state plus an offset, on identical observations, and fits
/// `log D_l = log C + l log kappa` over [`CONTRACTION_FIT_LAGS`], where
/// `D_l` is the root mean squared state difference after `l` steps.
pub fn estimate_contraction(
    probe: &dyn ContractionProbe,
    model: &LinearGaussianModel,
    n_pairs: usize,
    init_offsets: &[Vec<f64>],
    horizon: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if n_pairs == 0 || init_offsets.is_empty() || horizon == 0 {
        return Err(Error::Argument("n_pairs, init_offsets and horizon must be non-empty".into()));
    }
    let dim = probe.state_dim();
    if init_offsets.iter().any(|o| o.len() != dim) {
        return Err(dim_err(format!("offsets must have the probe state dimension {dim}")));
    }
    let sampler = TrajectorySampler::new(model)?;
    let nominal = probe.nominal_state();
    let pairs: Vec<usize> = (0..n_pairs).collect();
    let parts: Vec<Result<Vec<f64>>> = pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sq = vec![0.0; horizon + 1];
            for &p in chunk {
                let offset = &init_offsets[p % init_offsets.len()];
                let (_, obs) = sampler.sample(horizon, seed, p);
                let shifted: Vec<f64> = nominal.iter().zip(offset).map(|(a, b)| a + b).collect();
                let a = probe.run_from(&nominal, &obs)?;
                let b = probe.run_from(&shifted, &obs)?;
                if a.len() != horizon * dim || b.len() != horizon * dim {
                    return Err(dim_err("probe emitted the wrong number of states"));
                }
                sq[0] += offset.iter().map(|v| v * v).sum::<f64>();
                for l in 1..=horizon {
                    let r = (l - 1) * dim..l * dim;
                    sq[l] += a[r.clone()].iter().zip(&b[r]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                }
            }
            Ok(sq)
        })
        .collect();
    let mut sq = vec![0.0; horizon + 1];
    for part in parts {
        for (acc, v) in sq.iter_mut().zip(part?) {
            *acc += v;
        }
    }
    let curve: Vec<f64> = sq.iter().map(|s| (s / n_pairs as f64).sqrt()).collect();
    Ok(fit_contraction(curve))
}

fn fit_contraction(curve: Vec<f64>) -> ContractionEstimate {
    let usable = |d: f64| d > 0.0 && d.is_finite();
    let per_lag_ratios = curve
        .windows(2)
        .filter(|w| usable(w[0]) && usable(w[1]))
        .map(|w| w[1] / w[0])
        .collect();
    let horizon = curve.len() - 1;
    let lags = *CONTRACTION_FIT_LAGS.start()..=(*CONTRACTION_FIT_LAGS.end()).min(horizon);
    let points: Vec<(f64, f64)> = lags.filter(|&l| usable(curve[l])).map(|l| (l as f64, curve[l].ln())).collect();
    if points.len() < 2 {
        let zero_at = (1..=horizon).find(|&l| !usable(curve[l])).unwrap_or(horizon.max(1));
        return ContractionEstimate {
            kappa_hat: f64::EPSILON.powf(1.0 / zero_at as f64),
            c_hat: curve[0].max(f64::MIN_POSITIVE),
            per_lag_ratios,
            fit_residual: 0.0,
            curve,
            early_convergence: true,
        };
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let fit_residual = (points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    ContractionEstimate {
        kappa_hat: slope.exp(),
        c_hat: intercept.exp(),
        per_lag_ratios,
        fit_residual,
        curve,
        early_convergence: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{riccati_fixed_point, steady_state_gain};
    use crate::rnn::{init_random_params, ScaleRule, Variant};

    fn scalar(alpha: f64, beta: f64) -> LinearGaussianModel {
        LinearGaussianModel::scalar(alpha, beta, 25.0).unwrap()
    }

    #[test]
    fn oracle_against_itself_is_zero() {
        let model = scalar(0.98, 2.0);
        let schedule = GainSchedule::new(&model, 50).unwrap();
        let kalman = KalmanMethod::new(&model, 50).unwrap();
        let report = evaluate_filters(&model, &schedule, &[&kalman], 20, 50, 1).unwrap();
        let curve = report.method("kalman").unwrap();
        assert!(curve.rmse_vs_oracle.iter().all(|v| *v == 0.0));
        assert!(curve.rmse_vs_truth.iter().all(|v| *v > 0.0));
        assert_eq!(curve.n_effective, vec![20; 50]);
    }

    #[test]
    fn zero_predictor_matches_stationary_std() {
        let model = scalar(0.98, 2.0);
        let horizon = 600;
        let schedule = GainSchedule::new(&model, horizon).unwrap();
        let zero = ConstantMethod::zero(1, 1);
        let report = evaluate_filters(&model, &schedule, &[&zero], 2000, horizon, 3).unwrap();
        let curve = report.method("zero").unwrap();
        let late: f64 = curve.rmse_vs_truth[400..].iter().map(|v| v * v).sum::<f64>() / 200.0;
        let stationary = (1.0f64 / (1.0 - 0.98 * 0.98)).sqrt();
        assert!((late.sqrt() - stationary).abs() < 0.05 * stationary, "{} vs {stationary}", late.sqrt());
    }

    #[test]
    fn observation_sharing_and_thread_invariance() {
        let model = scalar(0.98, 1.0);
        let schedule = GainSchedule::new(&model, 30).unwrap();
        let pf = ParticleMethod::new(&model, 50).unwrap();
        let kalman = KalmanMethod::new(&model, 30).unwrap();
        let methods: [&dyn FilterMethod; 2] = [&kalman, &pf];
        let a = evaluate_filters(&model, &schedule, &methods, 37, 30, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| evaluate_filters(&model, &schedule, &methods, 37, 30, 9).unwrap());
        assert_eq!(a, b);
        // Kalman vs truth is identical whichever other methods run.
        let c = evaluate_filters(&model, &schedule, &[&kalman], 37, 30, 9).unwrap();
        assert_eq!(a.methods[0], c.methods[0]);
    }

    struct Short;
    impl FilterMethod for Short {
        fn name(&self) -> &str {
            "short"
        }
        fn estimate(&self, _: &[f64], _: &mut StreamRng) -> Result<Vec<f64>> {
            Ok(vec![0.0; 3])
        }
    }

    #[test]
    fn wrong_length_names_method() {
        let model = scalar(0.98, 2.0);
        let schedule = GainSchedule::new(&model, 10).unwrap();
        match evaluate_filters(&model, &schedule, &[&Short], 4, 10, 0) {
            Err(Error::Contract { method, .. }) => assert_eq!(method, "short"),
            other => panic!("{other:?}"),
        }
    }

    struct Exploding;
    impl FilterMethod for Exploding {
        fn name(&self) -> &str {
            "exploding"
        }
        fn estimate(&self, obs: &[f64], _: &mut StreamRng) -> Result<Vec<f64>> {
            // Squares of 1e200 overflow although the estimate itself is finite.
            Ok((0..obs.len()).map(|t| if t >= 3 { 1e200 } else { 1.0 }).collect())
        }
    }

    #[test]
    fn overflow_truncates_with_marker() {
        let model = scalar(0.98, 2.0);
        let schedule = GainSchedule::new(&model, 10).unwrap();
        let report = evaluate_filters(&model, &schedule, &[&Exploding], 4, 10, 0).unwrap();
        let curve = report.method("exploding").unwrap();
        assert_eq!(curve.overflow_at, Some(4));
        assert_eq!(curve.rmse_vs_oracle.len(), 3);
        assert!(curve.rmse_vs_oracle.iter().all(|v| v.is_finite()));
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,t,rmse_vs_oracle,rmse_vs_truth,n_effective\n"));
        assert!(text.ends_with("exploding,4,overflow,overflow,0\n"));
        let acc = detect_error_accumulation(&report, "exploding", (1, 2), (5, 6), 2.0).unwrap();
        assert!(acc.flagged);
        assert_eq!(accumulation_onset(curve, 1, 3.0, 10), Some(4));
    }

    fn flat_report(values: Vec<f64>) -> EvalReport {
        let len = values.len();
        EvalReport {
            methods: vec![MethodCurve {
                name: "m".into(),
                rmse_vs_truth: values.clone(),
                rmse_vs_oracle: values,
                n_effective: vec![1; len],
                overflow_at: None,
            }],
            n_test: 1,
            horizon: len,
            seed: 0,
        }
    }

    #[test]
    fn accumulation_detector() {
        let flat = flat_report(vec![0.5; 100]);
        let r = detect_error_accumulation(&flat, "m", (1, 10), (90, 100), 2.0).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!(!r.flagged);
        let growing = flat_report((1..=100).map(|t| t as f64).collect());
        let r = detect_error_accumulation(&growing, "m", (1, 10), (91, 100), 2.0).unwrap();
        assert!(r.flagged && (r.ratio - 95.5 / 5.5).abs() < 1e-12);
        assert!(detect_error_accumulation(&flat, "m", (10, 5), (90, 100), 2.0).is_err());
        assert!(detect_error_accumulation(&flat, "m", (1, 50), (40, 100), 2.0).is_err());
        assert!(detect_error_accumulation(&flat, "m", (1, 5), (90, 101), 2.0).is_err());
        assert!(detect_error_accumulation(&flat, "other", (1, 5), (90, 100), 2.0).is_err());
        assert_eq!(accumulation_onset(growing.method("m").unwrap(), 10, 3.0, 100), Some(31));
        assert_eq!(accumulation_onset(flat.method("m").unwrap(), 10, 3.0, 100), None);
    }

    #[test]
    fn kalman_contraction_matches_closed_form() {
        let model = scalar(0.98, 2.0);
        let fp = riccati_fixed_point(&model, 1e-14, 10_000).unwrap();
        let gain = steady_state_gain(&model, &fp).unwrap();
        let expected = (0.98 * (1.0 - gain[(0, 0)])).abs();
        let probe = KalmanMeanProbe::new(&model, gain).unwrap();
        let est = estimate_contraction(&probe, &model, 16, &[vec![1.0], vec![-3.0]], 60, 4).unwrap();
        assert!(!est.early_convergence);
        assert!((est.kappa_hat - expected).abs() < 1e-6 * expected);
        assert!(est.fit_residual < 0.1);
        assert!(est.per_lag_ratios.iter().all(|r| *r > 0.0));
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("lag,mean_sq_diff_root\n0,"));
    }

    #[test]
    fn constant_network_converges_early() {
        let model = scalar(0.98, 2.0);
        let topo = RnnTopology::new(Variant::Recursive, vec![1, 3, 3, 1]).unwrap();
        let mut params = RnnParams::zeros(&topo);
        params.biases[2][0] = 1.0;
        let probe = RnnStateProbe { params: &params, topology: &topo };
        let est = estimate_contraction(&probe, &model, 4, &[vec![1.0, 0.5, 2.0]], 60, 0).unwrap();
        assert!(est.early_convergence);
        assert!(est.kappa_hat < 1e-10);
        assert_eq!(est.curve[1], 0.0);
    }

    #[test]
    fn random_rnn_probe_runs() {
        let model = scalar(0.98, 2.0);
        let topo = RnnTopology::new(Variant::Recursive, vec![1, 7, 7, 1]).unwrap();
        let params = init_random_params(&topo, 3, ScaleRule::GlorotUniform);
        let probe = RnnStateProbe { params: &params, topology: &topo };
        let est = estimate_contraction(&probe, &model, 8, &[vec![0.5; 7]], 60, 0).unwrap();
        assert_eq!(est.curve.len(), 61);
        assert!(est.kappa_hat > 0.0);
    }
}
