//! Empirical loss, backpropagation through time and the minibatch trainer.
//!
//! The loss of a network on a batch of `N` trajectories of horizon `T` is
//!
//! ```text
//! (1 / (N T)) sum_n sum_t |out_t^(n) - rho(X_t^(n))|^2
//! ```
//!
//! Gradients are exact reverse-mode derivatives over the full horizon. The
//! ReLU derivative at 0 is taken to be 0. Per-trajectory work runs in
//! parallel over fixed-size chunks that are summed in index order, so
//! results do not depend on the number of threads.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::TrajectoryBatch;
use crate::rnn::{gemv_t_acc, ger_acc, init_random_params, run_sequence, RnnParams, RnnTopology, ScaleRule};
use crate::seed::{derive_seed, stream_rng, StreamRng};

/// Trajectories per parallel work item.
const CHUNK: usize = 16;

/// Training targets `rho(x)` computed from a state.
pub type TargetFn<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

/// `rho(x) = x`.
pub fn identity_target(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}
fn default_true() -> bool {
    true
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Horizon `T_train` of the training trajectories.
    pub horizon: usize,
    /// Number `N_train` of training trajectories.
    pub count: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: Option<f64>,
    /// Optimize the initial hidden state along with the weights.
    #[serde(default = "default_true")]
    pub train_s0: bool,
    /// Seeds weight initialization and minibatch order.
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(horizon: usize, count: usize, epochs: usize, minibatch_size: usize) -> Self {
        Self {
            horizon,
            count,
            epochs,
            minibatch_size,
            learning_rate: default_lr(),
            optimizer: Optimizer::default(),
            grad_clip_norm: default_clip(),
            train_s0: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("train.{field}: {msg}")));
        if self.horizon == 0 {
            return bad("horizon", "must be positive".into());
        }
        if self.count == 0 {
            return bad("count", "must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.count {
            return bad("minibatch_size", format!("must lie in 1..={}, got {}", self.count, self.minibatch_size));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad("grad_clip_norm", format!("must be positive, got {c}"));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("optimizer", format!("invalid Adam parameters ({beta1}, {beta2}, {eps})"));
            }
        }
        Ok(())
    }
}

/// Gradient with the same layout as the parameters, plus the loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad: RnnParams,
    pub loss: f64,
}

/// A batch prepared for repeated loss and gradient evaluations.
struct Problem<'a> {
    topology: &'a RnnTopology,
    observations: &'a [f64],
    targets: Vec<f64>,
    horizon: usize,
    dim_y: usize,
    dim_out: usize,
}

impl<'a> Problem<'a> {
    fn new(topology: &'a RnnTopology, batch: &'a TrajectoryBatch, target_fn: TargetFn) -> Result<Self> {
        let dim_y = topology.input_width();
        let dim_out = topology.output_width();
        if batch.dim_y() != dim_y {
            return Err(dim_err(format!("observations have dimension {}, network input is {dim_y}", batch.dim_y())));
        }
        let horizon = batch.horizon();
        let mut targets = Vec::with_capacity(batch.count() * horizon * dim_out);
        for n in 0..batch.count() {
            for t in 1..=horizon {
                let target = target_fn(batch.state(n, t));
                if target.len() != dim_out {
                    return Err(dim_err(format!("target has length {}, network output is {dim_out}", target.len())));
                }
                targets.extend(target);
            }
        }
        Ok(Self { topology, observations: batch.observations_flat(), targets, horizon, dim_y, dim_out })
    }

    fn observations_of(&self, n: usize) -> &[f64] {
        let len = self.horizon * self.dim_y;
        &self.observations[n * len..(n + 1) * len]
    }

    fn targets_of(&self, n: usize) -> &[f64] {
        let len = self.horizon * self.dim_out;
        &self.targets[n * len..(n + 1) * len]
    }

    fn trajectory_sse(&self, params: &RnnParams, n: usize) -> Result<f64> {
        let trace = run_sequence(params, self.topology, self.observations_of(n), &params.init_hidden, false)?;
        let mut sse = 0.0;
        for (t, (o, y)) in trace.outputs.chunks(self.dim_out).zip(self.targets_of(n).chunks(self.dim_out)).enumerate() {
            let term: f64 = o.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if !term.is_finite() {
                return Err(Error::Numeric { location: format!("loss at trajectory n={n}, t={}", t + 1) });
            }
            sse += term;
        }
        Ok(sse)
    }

    /// Adds `scale * d(sse_n)/d(params)` into `grad` and returns `sse_n`.
    fn trajectory_grad(&self, params: &RnnParams, n: usize, scale: f64, grad: &mut RnnParams) -> Result<f64> {
        let topo = self.topology;
        let w = topo.widths();
        let depth = topo.depth();
        let hidden = depth - 1;
        let dy = self.dim_y;
        let d_out = self.dim_out;
        let obs = self.observations_of(n);
        let targets = self.targets_of(n);
        let trace = run_sequence(params, topo, obs, &params.init_hidden, false)?;
        let blocks = topo.feedback_blocks();

        let zeros = || -> Vec<Vec<f64>> { (1..=hidden).map(|l| vec![0.0; w[l]]).collect() };
        // Gradient with respect to a_{t}^(l) arriving through feedback from t+1.
        let mut carry = zeros();
        let mut g_out = vec![0.0; d_out];
        let mut sse = 0.0;
        for t in (1..=self.horizon).rev() {
            let out = &trace.outputs[(t - 1) * d_out..t * d_out];
            let target = &targets[(t - 1) * d_out..t * d_out];
            for ((g, o), y) in g_out.iter_mut().zip(out).zip(target) {
                let e = o - y;
                sse += e * e;
                *g = scale * e;
            }
            if !sse.is_finite() {
                return Err(Error::Numeric { location: format!("loss at trajectory n={n}, t={t}") });
            }
            let mut g_act = std::mem::replace(&mut carry, zeros());
            ger_acc(&mut grad.feedforward[depth - 1], &g_out, trace.act(hidden, t, w[hidden]));
            for (b, g) in grad.biases[depth - 1].iter_mut().zip(&g_out) {
                *b += g;
            }
            gemv_t_acc(&params.feedforward[depth - 1], &g_out, &mut g_act[hidden - 1]);
            for l in (1..=hidden).rev() {
                let gz: Vec<f64> = g_act[l - 1]
                    .iter()
                    .zip(trace.pre(l, t, w[l]))
                    .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                    .collect();
                for (b, g) in grad.biases[l - 1].iter_mut().zip(&gz) {
                    *b += g;
                }
                if l == 1 {
                    ger_acc(&mut grad.feedforward[0], &gz, &obs[(t - 1) * dy..t * dy]);
                } else {
                    ger_acc(&mut grad.feedforward[l - 1], &gz, trace.act(l - 1, t, w[l - 1]));
                    gemv_t_acc(&params.feedforward[l - 1], &gz, &mut g_act[l - 2]);
                }
                for (bi, &(to, from)) in blocks.iter().enumerate() {
                    if to == l {
                        ger_acc(&mut grad.feedback[bi], &gz, trace.act(from, t - 1, w[from]));
                        gemv_t_acc(&params.feedback[bi], &gz, &mut carry[from - 1]);
                    }
                }
            }
        }
        for (g, &k) in grad.init_hidden.iter_mut().zip(&topo.feedback_sources()) {
            for (a, b) in g.iter_mut().zip(&carry[k - 1]) {
                *a += b;
            }
        }
        Ok(sse)
    }

    fn loss(&self, params: &RnnParams, indices: &[usize]) -> Result<f64> {
        let parts: Vec<Result<f64>> = indices
            .par_chunks(CHUNK)
            .map(|chunk| chunk.iter().try_fold(0.0, |acc, &n| Ok(acc + self.trajectory_sse(params, n)?)))
            .collect();
        let mut sse = 0.0;
        for p in parts {
            sse += p?;
        }
        Ok(sse / (indices.len() * self.horizon) as f64)
    }

    fn loss_and_grad(&self, params: &RnnParams, indices: &[usize]) -> Result<GradientBundle> {
        let scale = 2.0 / (indices.len() * self.horizon) as f64;
        let parts: Vec<Result<(f64, RnnParams)>> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = RnnParams::zeros(self.topology);
                let mut sse = 0.0;
                for &n in chunk {
                    sse += self.trajectory_grad(params, n, scale, &mut grad)?;
                }
                Ok((sse, grad))
            })
            .collect();
        let mut grad = RnnParams::zeros(self.topology);
        let mut sse = 0.0;
        for p in parts {
            let (s, g) = p?;
            sse += s;
            grad.axpy(1.0, &g);
        }
        if grad.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: "gradient".into() });
        }
        Ok(GradientBundle { grad, loss: sse / (indices.len() * self.horizon) as f64 })
    }

    fn all(&self) -> Vec<usize> {
        (0..self.observations.len() / (self.horizon * self.dim_y).max(1)).collect()
    }
}

fn check_params(params: &RnnParams, topology: &RnnTopology) -> Result<()> {
    params.validate(topology)
}

pub fn empirical_loss(
    params: &RnnParams,
    topology: &RnnTopology,
    batch: &TrajectoryBatch,
    target_fn: TargetFn,
) -> Result<f64> {
    check_params(params, topology)?;
    let problem = Problem::new(topology, batch, target_fn)?;
    problem.loss(params, &problem.all())
}

pub fn grad_bptt(
    params: &RnnParams,
    topology: &RnnTopology,
    batch: &TrajectoryBatch,
    target_fn: TargetFn,
) -> Result<GradientBundle> {
    minibatch_grad(params, topology, batch, target_fn, &(0..batch.count()).collect::<Vec<_>>())
}

/// Gradient of the loss restricted to the trajectories in `indices`.
pub fn minibatch_grad(
    params: &RnnParams,
    topology: &RnnTopology,
    batch: &TrajectoryBatch,
    target_fn: TargetFn,
    indices: &[usize],
) -> Result<GradientBundle> {
    check_params(params, topology)?;
    if indices.is_empty() || indices.iter().any(|&n| n >= batch.count()) {
        return Err(Error::Argument("minibatch indices must be non-empty and within the batch".into()));
    }
    Problem::new(topology, batch, target_fn)?.loss_and_grad(params, indices)
}

/// Central differences `(L(p + h e_i) - L(p - h e_i)) / 2h` for every
/// parameter coordinate.
pub fn finite_diff_grad(
    params: &RnnParams,
    topology: &RnnTopology,
    batch: &TrajectoryBatch,
    target_fn: TargetFn,
    h: f64,
) -> Result<GradientBundle> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {h}")));
    }
    check_params(params, topology)?;
    let problem = Problem::new(topology, batch, target_fn)?;
    let all = problem.all();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut diffs = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + h;
        probe.set_flat(&shifted)?;
        let up = problem.loss(&probe, &all)?;
        shifted[i] = base[i] - h;
        probe.set_flat(&shifted)?;
        let down = problem.loss(&probe, &all)?;
        diffs.push((up - down) / (2.0 * h));
    }
    let mut grad = params.clone();
    grad.set_flat(&diffs)?;
    Ok(GradientBundle { grad, loss: problem.loss(params, &all)? })
}

/// Smallest `|pre-activation|` over every hidden unit, step and trajectory.
/// Finite differences with step `h` are reliable when this exceeds `h`
/// times the local parameter sensitivity.
pub fn min_preactivation_margin(params: &RnnParams, topology: &RnnTopology, batch: &TrajectoryBatch) -> Result<f64> {
    check_params(params, topology)?;
    let mut margin = f64::INFINITY;
    for n in 0..batch.count() {
        let trace = run_sequence(params, topology, batch.observations_of(n), &params.init_hidden, false)?;
        for pres in &trace.pres {
            for z in pres {
                margin = margin.min(z.abs());
            }
        }
    }
    Ok(margin)
}

/// Random parameters (non-zero biases and initial state) whose
/// pre-activations on `batch` all stay at least `margin` away from the
/// ReLU kink. Tries successive derived seeds.
pub fn kink_free_params(
    topology: &RnnTopology,
    batch: &TrajectoryBatch,
    margin: f64,
    seed: u64,
    attempts: usize,
) -> Result<RnnParams> {
    use rand::Rng;
    for attempt in 0..attempts {
        let s = derive_seed(seed, &format!("kink-free-{attempt}"));
        let mut params = init_random_params(topology, s, ScaleRule::GlorotUniform);
        let mut rng = stream_rng(s, 1);
        for b in &mut params.biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        for s0 in &mut params.init_hidden {
            s0.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
        }
        if min_preactivation_margin(&params, topology, batch)? >= margin {
            return Ok(params);
        }
    }
    Err(Error::Argument(format!("no parameters with pre-activation margin {margin} in {attempts} attempts")))
}

/// Endless sequence of minibatches: each epoch is a fresh shuffle of
/// `0..count` cut into consecutive batches (the last one may be short).
pub struct MinibatchSampler {
    order: Vec<usize>,
    size: usize,
    pos: usize,
    rng: StreamRng,
}

impl MinibatchSampler {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        Self { order: (0..count).collect(), size: size.max(1), pos: count, rng: stream_rng(seed, 0) }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.size)
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + self.size).min(self.order.len());
        &self.order[start..self.pos]
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, len: usize) -> Self {
        Self { kind, lr, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    fn step(&mut self, params: &mut Vec<f64>, grad: &[f64]) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn check_data(config: &TrainConfig, data: &TrajectoryBatch) -> Result<()> {
    config.validate()?;
    if data.horizon() != config.horizon || data.count() != config.count {
        return Err(Error::Argument(format!(
            "training data has N={}, T={}, config expects N={}, T={}",
            data.count(),
            data.horizon(),
            config.count,
            config.horizon
        )));
    }
    Ok(())
}

/// Trains from a random initialization seeded by `config.seed`. Returns the
/// trained parameters and the full-batch loss before training followed by
/// the loss after every epoch.
pub fn train(
    config: &TrainConfig,
    topology: &RnnTopology,
    data: &TrajectoryBatch,
    target_fn: TargetFn,
) -> Result<(RnnParams, Vec<f64>)> {
    let init = init_random_params(topology, derive_seed(config.seed, "init"), ScaleRule::GlorotUniform);
    train_from(config, topology, data, target_fn, init)
}

pub fn train_from(
    config: &TrainConfig,
    topology: &RnnTopology,
    data: &TrajectoryBatch,
    target_fn: TargetFn,
    init: RnnParams,
) -> Result<(RnnParams, Vec<f64>)> {
    check_data(config, data)?;
    fit(config, topology, data, target_fn, init)
}

fn fit(
    config: &TrainConfig,
    topology: &RnnTopology,
    data: &TrajectoryBatch,
    target_fn: TargetFn,
    init: RnnParams,
) -> Result<(RnnParams, Vec<f64>)> {
    check_params(&init, topology)?;
    let problem = Problem::new(topology, data, target_fn)?;
    let all = problem.all();
    let mut params = init;
    let initial = problem.loss(&params, &all)?;
    let mut history = vec![initial];
    let mut sampler = MinibatchSampler::new(data.count(), config.minibatch_size, derive_seed(config.seed, "minibatch-order"));
    let mut flat = params.to_flat();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, flat.len());
    let diverged = |epoch: usize, loss: f64, history: &[f64]| Error::TrainingDiverged { epoch, loss, history: history.to_vec() };

    for epoch in 1..=config.epochs {
        for _ in 0..sampler.batches_per_epoch() {
            let batch = sampler.next_batch();
            let mut bundle = match problem.loss_and_grad(&params, batch) {
                Ok(b) => b,
                Err(Error::Numeric { .. }) => return Err(diverged(epoch, f64::NAN, &history)),
                Err(e) => return Err(e),
            };
            if !config.train_s0 {
                bundle.grad.init_hidden.iter_mut().for_each(|s| s.fill(0.0));
            }
            if let Some(max_norm) = config.grad_clip_norm {
                let norm = bundle.grad.norm();
                if norm > max_norm {
                    bundle.grad.scale(max_norm / norm);
                }
            }
            opt.step(&mut flat, &bundle.grad.to_flat());
            params.set_flat(&flat)?;
        }
        let loss = problem.loss(&params, &all).unwrap_or(f64::NAN);
        if !loss.is_finite() || loss > 1e6 * initial {
            return Err(diverged(epoch, loss, &history));
        }
        history.push(loss);
        log::debug!("epoch {epoch}: loss {loss:.6}");
    }
    Ok((params, history))
}

/// Loss-history CSV: `epoch,full_batch_loss`, epoch 0 being the initial loss.
pub fn write_loss_history<W: Write>(history: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "full_batch_loss"])?;
    for (epoch, loss) in history.iter().enumerate() {
        w.write_record([epoch.to_string(), format!("{loss:e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_trajectories, LinearGaussianModel};
    use crate::rnn::Variant;
    use nalgebra::{DMatrix, DVector};

    fn scalar_batch(count: usize, horizon: usize, seed: u64) -> TrajectoryBatch {
        let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0).unwrap();
        sample_trajectories(&model, horizon, count, seed).unwrap()
    }

    fn recursive(widths: Vec<usize>) -> RnnTopology {
        RnnTopology::new(Variant::Recursive, widths).unwrap()
    }

    /// Straight-line evaluation of the loss with explicit loops.
    fn reference_loss(p: &RnnParams, batch: &TrajectoryBatch) -> f64 {
        let (w1, w2, w3) = (&p.feedforward[0], &p.feedforward[1], &p.feedforward[2]);
        let wf = &p.feedback[0];
        let mut total = 0.0;
        for n in 0..batch.count() {
            let mut s2 = p.init_hidden[0].clone();
            for t in 1..=batch.horizon() {
                let y = DVector::from_column_slice(batch.observation(n, t));
                let s1 = (w1 * y + &p.biases[0] + wf * &s2).map(|v| v.max(0.0));
                s2 = (w2 * s1 + &p.biases[1]).map(|v| v.max(0.0));
                let out = w3 * &s2 + &p.biases[2];
                let x = batch.state(n, t);
                total += (0..out.len()).map(|i| (out[i] - x[i]).powi(2)).sum::<f64>();
            }
        }
        total / (batch.count() * batch.horizon()) as f64
    }

    #[test]
    fn loss_matches_reference_loop() {
        let batch = scalar_batch(7, 13, 3);
        let topo = recursive(vec![1, 5, 4, 1]);
        let p = kink_free_params(&topo, &batch, 0.0, 1, 1).unwrap();
        let loss = empirical_loss(&p, &topo, &batch, &identity_target).unwrap();
        assert!((loss - reference_loss(&p, &batch)).abs() <= 1e-12 * loss.max(1.0));
    }

    #[test]
    fn trivial_losses() {
        let batch = TrajectoryBatch::from_parts(vec![0.0, 3.0, 3.0, 0.0, 3.0, 3.0], vec![1.0; 4], 2, 2, 1, 1, 0).unwrap();
        let topo = recursive(vec![1, 2, 2, 1]);
        let mut p = RnnParams::zeros(&topo);
        assert_eq!(empirical_loss(&p, &topo, &batch, &identity_target).unwrap(), 9.0);
        p.biases[2][0] = 3.0;
        assert_eq!(empirical_loss(&p, &topo, &batch, &identity_target).unwrap(), 0.0);
        let g = grad_bptt(&p, &topo, &batch, &identity_target).unwrap();
        assert!(g.grad.values().all(|v| v == 0.0));
    }

    #[test]
    fn generic_target_fn() {
        let batch = scalar_batch(3, 4, 1);
        let topo = recursive(vec![1, 2, 2, 2]);
        let p = RnnParams::zeros(&topo);
        let squares = |x: &[f64]| vec![x[0], x[0] * x[0]];
        let loss = empirical_loss(&p, &topo, &batch, &squares).unwrap();
        let mut expected = 0.0;
        for n in 0..3 {
            for t in 1..=4 {
                let x = batch.state(n, t)[0];
                expected += x * x + x.powi(4);
            }
        }
        assert!((loss - expected / 12.0).abs() < 1e-12 * loss);
        assert!(matches!(empirical_loss(&p, &topo, &batch, &identity_target), Err(Error::Dimension(_))));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let batch = scalar_batch(2, 5, 9);
        for topo in [
            recursive(vec![1, 4, 4, 1]),
            RnnTopology::new(Variant::GeneralDense, vec![1, 3, 4, 1]).unwrap(),
            RnnTopology::new(Variant::Memorization, vec![1, 4, 3, 1]).unwrap(),
        ] {
            let p = kink_free_params(&topo, &batch, 1e-3, 5, 100).unwrap();
            let bptt = grad_bptt(&p, &topo, &batch, &identity_target).unwrap();
            let fd = finite_diff_grad(&p, &topo, &batch, &identity_target, 1e-5).unwrap();
            assert!((bptt.loss - fd.loss).abs() <= 1e-12 * fd.loss);
            for (a, b) in bptt.grad.values().zip(fd.grad.values()) {
                assert!((a - b).abs() / b.abs().max(1.0) <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn finite_differences_exact_on_quadratic() {
        // loss(b) = mean (b - x_t)^2 depends only on the output bias.
        let batch = scalar_batch(3, 4, 2);
        let topo = recursive(vec![1, 1, 1, 1]);
        let mut p = RnnParams::zeros(&topo);
        p.biases[2][0] = 0.7;
        let fd = finite_diff_grad(&p, &topo, &batch, &identity_target, 1e-3).unwrap();
        let mean_x: f64 = (0..3).flat_map(|n| (1..=4).map(move |t| (n, t))).map(|(n, t)| batch.state(n, t)[0]).sum::<f64>() / 12.0;
        let exact = 2.0 * (0.7 - mean_x);
        assert!((fd.grad.biases[2][0] - exact).abs() < 1e-9);
    }

    #[test]
    fn large_step_across_kink_is_detected() {
        // One unit with pre-activation 0.3 y: with y of both signs and h=1
        // the central difference straddles the kink.
        let batch = TrajectoryBatch::from_parts(vec![0.0, 1.0, 2.0], vec![1.0, -1.0], 1, 2, 1, 1, 0).unwrap();
        let topo = recursive(vec![1, 1, 1, 1]);
        let mut p = RnnParams::zeros(&topo);
        p.feedforward[0][(0, 0)] = 0.3;
        p.feedforward[1][(0, 0)] = 1.0;
        p.feedforward[2][(0, 0)] = 1.0;
        p.biases[1][0] = 0.1;
        let bptt = grad_bptt(&p, &topo, &batch, &identity_target).unwrap();
        let fd = finite_diff_grad(&p, &topo, &batch, &identity_target, 1.0).unwrap();
        let worst = bptt.grad.values().zip(fd.grad.values()).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        assert!(worst > 1e-2, "{worst}");
        let fine = finite_diff_grad(&p, &topo, &batch, &identity_target, 1e-6).unwrap();
        let worst = bptt.grad.values().zip(fine.grad.values()).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn dead_first_layer_has_zero_gradient() {
        let batch = scalar_batch(3, 6, 4);
        let topo = recursive(vec![1, 3, 3, 1]);
        let mut p = init_random_params(&topo, 2, ScaleRule::GlorotUniform);
        p.biases[0].fill(-1e6);
        let g = grad_bptt(&p, &topo, &batch, &identity_target).unwrap();
        assert!(g.grad.feedforward[0].iter().all(|v| *v == 0.0));
        assert!(g.grad.feedback[0].iter().all(|v| *v == 0.0));
        assert!(g.grad.biases[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let batch = scalar_batch(8, 5, 1);
        let topo = recursive(vec![1, 3, 3, 1]);
        let init = init_random_params(&topo, 3, ScaleRule::GlorotUniform);
        let mut cfg = TrainConfig::new(5, 8, 4, 4);
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 0.0;
        cfg.grad_clip_norm = None;
        assert!(cfg.validate().is_err());
        for opt in [Optimizer::Sgd, Optimizer::default()] {
            cfg.optimizer = opt;
            let (p, hist) = fit(&cfg, &topo, &batch, &identity_target, init.clone()).unwrap();
            assert_eq!(p, init);
            assert!(hist.iter().all(|l| *l == hist[0]));
            assert_eq!(hist.len(), 5);
        }
    }

    #[test]
    fn sgd_decreases_loss() {
        let batch = scalar_batch(4, 5, 6);
        let topo = recursive(vec![1, 4, 4, 1]);
        let init = kink_free_params(&topo, &batch, 0.0, 1, 1).unwrap();
        let mut cfg = TrainConfig::new(5, 4, 10, 4);
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 1e-4;
        cfg.grad_clip_norm = None;
        let (_, hist) = train_from(&cfg, &topo, &batch, &identity_target, init).unwrap();
        let ups = hist.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(ups <= 1, "{hist:?}");
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let batch = scalar_batch(64, 10, 8);
        let topo = recursive(vec![1, 5, 5, 1]);
        let mut cfg = TrainConfig::new(10, 64, 30, 16);
        cfg.learning_rate = 1e-2;
        cfg.seed = 4;
        let (p1, h1) = train(&cfg, &topo, &batch, &identity_target).unwrap();
        let (p2, h2) = train(&cfg, &topo, &batch, &identity_target).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert!(h1.last().unwrap() < &(0.5 * h1[0]));
    }

    #[test]
    fn frozen_initial_state() {
        let batch = scalar_batch(8, 5, 1);
        let topo = recursive(vec![1, 3, 3, 1]);
        let mut init = init_random_params(&topo, 3, ScaleRule::GlorotUniform);
        init.init_hidden[0].fill(0.25);
        let mut cfg = TrainConfig::new(5, 8, 3, 4);
        cfg.train_s0 = false;
        let (p, _) = train_from(&cfg, &topo, &batch, &identity_target, init.clone()).unwrap();
        assert_eq!(p.init_hidden, init.init_hidden);
        cfg.train_s0 = true;
        let (p, _) = train_from(&cfg, &topo, &batch, &identity_target, init.clone()).unwrap();
        assert_ne!(p.init_hidden, init.init_hidden);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let batch = scalar_batch(8, 5, 1);
        let topo = recursive(vec![1, 3, 3, 1]);
        let mut cfg = TrainConfig::new(5, 8, 50, 8);
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 1e3;
        cfg.grad_clip_norm = None;
        match train(&cfg, &topo, &batch, &identity_target) {
            Err(Error::TrainingDiverged { epoch, history, .. }) => {
                assert!(epoch >= 1);
                assert_eq!(history.len(), epoch);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn minibatch_gradients_average_to_full_batch() {
        let batch = scalar_batch(10, 6, 12);
        let topo = recursive(vec![1, 4, 4, 1]);
        let p = kink_free_params(&topo, &batch, 0.0, 2, 1).unwrap();
        let full = grad_bptt(&p, &topo, &batch, &identity_target).unwrap().grad;
        let mut sampler = MinibatchSampler::new(10, 5, 77);
        let mut avg = RnnParams::zeros(&topo);
        let draws = 1000;
        for _ in 0..draws {
            let idx = sampler.next_batch().to_vec();
            avg.axpy(1.0 / draws as f64, &minibatch_grad(&p, &topo, &batch, &identity_target, &idx).unwrap().grad);
        }
        let mut diff = avg.clone();
        diff.axpy(-1.0, &full);
        assert!(diff.norm() <= 0.01 * full.norm(), "{} vs {}", diff.norm(), full.norm());
    }

    #[test]
    fn sampler_covers_each_index_once_per_epoch() {
        let mut s = MinibatchSampler::new(7, 3, 1);
        assert_eq!(s.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch().to_vec()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = TrainConfig::new(5, 8, 3, 10);
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("minibatch_size")));
        cfg.minibatch_size = 4;
        cfg.learning_rate = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("learning_rate")));
    }

    #[test]
    fn loss_history_csv() {
        let mut buf = Vec::new();
        write_loss_history(&[2.5, 1.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,full_batch_loss\n0,2.5e0\n1,1e0\n");
    }

    #[test]
    fn identity_params_shape_check() {
        let batch = scalar_batch(2, 3, 1);
        let topo = recursive(vec![1, 2, 2, 1]);
        let mut p = RnnParams::zeros(&topo);
        p.feedforward[0] = DMatrix::zeros(3, 1);
        assert!(empirical_loss(&p, &topo, &batch, &identity_target).is_err());
    }
}
