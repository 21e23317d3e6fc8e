//! Recurrent ReLU state estimators.
//!
//! A network with `L` layers maps an observation sequence to estimates:
//!
//! ```text
//! s_t^(0) = y_t
//! s_t^(l) = relu(W(l,l-1) s_t^(l-1) + b(l) + sum_k W(l,k) s_{t-1}^(k)),  l = 1..L-1
//! out_t   = W(L,L-1) s_t^(L-1) + b(L)
//! ```
//!
//! The feedback sum runs over the blocks admitted by the [`Variant`]:
//! every `l <= k` for [`Variant::GeneralDense`], `W(1,1)` only for
//! [`Variant::Memorization`] and `W(1,L-1)` only for [`Variant::Recursive`].

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::seed::stream_rng;

/// Damping applied to randomly initialized feedback weights.
pub const FEEDBACK_INIT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GeneralDense,
    Memorization,
    Recursive,
}

impl Variant {
    fn tag(self) -> u8 {
        match self {
            Variant::GeneralDense => 0,
            Variant::Memorization => 1,
            Variant::Recursive => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Variant::GeneralDense),
            1 => Ok(Variant::Memorization),
            2 => Ok(Variant::Recursive),
            _ => Err(Error::Checkpoint(format!("unknown topology tag {tag}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnTopology {
    variant: Variant,
    /// `[d_y, hidden_1, .., hidden_{L-1}, d_out]`
    widths: Vec<usize>,
}

impl RnnTopology {
    pub fn new(variant: Variant, widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Argument(format!(
                "a network needs L >= 2 layers (at least 3 widths), got {widths:?}"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Argument(format!("layer widths must be positive, got {widths:?}")));
        }
        Ok(Self { variant, widths })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn hidden_layers(&self) -> usize {
        self.depth() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.depth()]
    }

    pub fn width(&self, layer: usize) -> usize {
        self.widths[layer]
    }

    /// Feedback blocks `(l, k)`: `W(l,k)` feeds `s_{t-1}^(k)` into layer `l`.
    pub fn feedback_blocks(&self) -> Vec<(usize, usize)> {
        let last = self.depth() - 1;
        match self.variant {
            Variant::GeneralDense => {
                let mut out = Vec::new();
                for l in 1..=last {
                    for k in l..=last {
                        out.push((l, k));
                    }
                }
                out
            }
            Variant::Memorization => vec![(1, 1)],
            Variant::Recursive => vec![(1, last)],
        }
    }

    /// Hidden layers whose previous activations are fed back, ascending.
    pub fn feedback_sources(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.feedback_blocks().into_iter().map(|(_, k)| k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Weights, biases and the initial hidden state of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// `W(l,l-1)` at index `l-1`, for `l = 1..=L`.
    pub feedforward: Vec<DMatrix<f64>>,
    /// Parallel to [`RnnTopology::feedback_blocks`].
    pub feedback: Vec<DMatrix<f64>>,
    /// `b(l)` at index `l-1`.
    pub biases: Vec<DVector<f64>>,
    /// `s_0^(k)`, parallel to [`RnnTopology::feedback_sources`].
    pub init_hidden: Vec<DVector<f64>>,
}

impl RnnParams {
    pub fn zeros(topology: &RnnTopology) -> Self {
        let w = topology.widths();
        let depth = topology.depth();
        Self {
            feedforward: (1..=depth).map(|l| DMatrix::zeros(w[l], w[l - 1])).collect(),
            feedback: topology.feedback_blocks().iter().map(|&(l, k)| DMatrix::zeros(w[l], w[k])).collect(),
            biases: (1..=depth).map(|l| DVector::zeros(w[l])).collect(),
            init_hidden: topology.feedback_sources().iter().map(|&k| DVector::zeros(w[k])).collect(),
        }
    }

    /// Checks shapes against the topology and finiteness of every entry.
    pub fn validate(&self, topology: &RnnTopology) -> Result<()> {
        let reference = Self::zeros(topology);
        let shapes = |p: &Self| -> Vec<(usize, usize)> {
            p.feedforward
                .iter()
                .chain(&p.feedback)
                .map(|m| m.shape())
                .chain(p.biases.iter().chain(&p.init_hidden).map(|v| v.shape()))
                .collect()
        };
        if self.feedforward.len() != reference.feedforward.len()
            || self.feedback.len() != reference.feedback.len()
            || self.biases.len() != reference.biases.len()
            || self.init_hidden.len() != reference.init_hidden.len()
            || shapes(self) != shapes(&reference)
        {
            return Err(dim_err("parameter shapes do not match the topology"));
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: "network parameters".into() });
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.values().count()
    }

    /// All entries in the canonical flat order: feedforward, feedback,
    /// biases, initial hidden state; matrices row-major.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let mats = self.feedforward.iter().chain(&self.feedback).flat_map(|m| {
            (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
        });
        let vecs = self.biases.iter().chain(&self.init_hidden).flat_map(|v| v.iter().copied());
        mats.chain(vecs)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Visits every entry mutably in the canonical flat order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for m in self.feedforward.iter_mut().chain(self.feedback.iter_mut()) {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    f(&mut m[(i, j)]);
                }
            }
        }
        for v in self.biases.iter_mut().chain(self.init_hidden.iter_mut()) {
            v.iter_mut().for_each(&mut f);
        }
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(dim_err(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut it = flat.iter();
        self.for_each_mut(|x| *x = *it.next().expect("length checked"));
        Ok(())
    }

    /// `self += alpha * other` (same shapes).
    pub fn axpy(&mut self, alpha: f64, other: &RnnParams) {
        for (a, b) in self.feedforward.iter_mut().zip(&other.feedforward) {
            *a += b * alpha;
        }
        for (a, b) in self.feedback.iter_mut().zip(&other.feedback) {
            *a += b * alpha;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b * alpha;
        }
        for (a, b) in self.init_hidden.iter_mut().zip(&other.init_hidden) {
            *a += b * alpha;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_mut(|x| *x *= alpha);
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Fed-back activations after step `t`, parallel to
/// [`RnnTopology::feedback_sources`].
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub states: Vec<DVector<f64>>,
    pub t: usize,
}

impl HiddenState {
    pub fn initial(params: &RnnParams) -> Self {
        Self { states: params.init_hidden.clone(), t: 0 }
    }

    /// Concatenation of all fed-back activations.
    pub fn stacked(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// `out += m x` for a column-major matrix.
pub(crate) fn gemv_acc(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    for (col, xj) in m.as_slice().chunks_exact(rows).zip(x) {
        if *xj != 0.0 {
            for (o, a) in out.iter_mut().zip(col) {
                *o += a * xj;
            }
        }
    }
}

/// `out += m^T g`.
pub(crate) fn gemv_t_acc(m: &DMatrix<f64>, g: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    for (col, o) in m.as_slice().chunks_exact(rows).zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (a, gi) in col.iter().zip(g) {
            acc += a * gi;
        }
        *o += acc;
    }
}

/// `m += g x^T`.
pub(crate) fn ger_acc(m: &mut DMatrix<f64>, g: &[f64], x: &[f64]) {
    let rows = m.nrows();
    for (col, xj) in m.as_mut_slice().chunks_exact_mut(rows).zip(x) {
        if *xj != 0.0 {
            for (c, gi) in col.iter_mut().zip(g) {
                *c += gi * xj;
            }
        }
    }
}

/// Activations of a full unroll.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub steps: usize,
    /// Flat `[T][d_out]`.
    pub outputs: Vec<f64>,
    /// Per hidden layer `l` (index `l-1`): flat `[T+1][width_l]`, slot 0 holds
    /// `s_0^(l)` for fed-back layers and zeros otherwise.
    pub acts: Vec<Vec<f64>>,
    /// Per hidden layer: flat `[T][width_l]` pre-activations.
    pub pres: Vec<Vec<f64>>,
}

impl Trace {
    pub fn act(&self, layer: usize, t: usize, width: usize) -> &[f64] {
        &self.acts[layer - 1][t * width..(t + 1) * width]
    }

    pub fn pre(&self, layer: usize, t: usize, width: usize) -> &[f64] {
        &self.pres[layer - 1][(t - 1) * width..t * width]
    }
}

/// Runs the network over flat `[T][d_y]` observations from `init`.
pub(crate) fn run_sequence(
    params: &RnnParams,
    topology: &RnnTopology,
    observations: &[f64],
    init: &[DVector<f64>],
    strict: bool,
) -> Result<Trace> {
    let w = topology.widths();
    let depth = topology.depth();
    let hidden = depth - 1;
    let dy = w[0];
    if observations.len() % dy != 0 {
        return Err(dim_err(format!("observation buffer length {} is not a multiple of d_y = {dy}", observations.len())));
    }
    let sources = topology.feedback_sources();
    if init.len() != sources.len() || init.iter().zip(&sources).any(|(s, &k)| s.len() != w[k]) {
        return Err(dim_err("initial hidden state does not match the topology"));
    }
    let blocks = topology.feedback_blocks();
    let steps = observations.len() / dy;
    let mut acts: Vec<Vec<f64>> = (1..=hidden).map(|l| vec![0.0; (steps + 1) * w[l]]).collect();
    let mut pres: Vec<Vec<f64>> = (1..=hidden).map(|l| vec![0.0; steps * w[l]]).collect();
    for (s, &k) in init.iter().zip(&sources) {
        acts[k - 1][..w[k]].copy_from_slice(s.as_slice());
    }
    let d_out = w[depth];
    let mut outputs = vec![0.0; steps * d_out];
    for t in 1..=steps {
        for l in 1..=hidden {
            let wl = w[l];
            let mut z = params.biases[l - 1].as_slice().to_vec();
            if l == 1 {
                gemv_acc(&params.feedforward[0], &observations[(t - 1) * dy..t * dy], &mut z);
            } else {
                let wp = w[l - 1];
                gemv_acc(&params.feedforward[l - 1], &acts[l - 2][t * wp..(t + 1) * wp], &mut z);
            }
            for (bi, &(to, from)) in blocks.iter().enumerate() {
                if to == l {
                    let wf = w[from];
                    gemv_acc(&params.feedback[bi], &acts[from - 1][(t - 1) * wf..t * wf], &mut z);
                }
            }
            if strict && z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { location: format!("layer {l} pre-activation at t={t}") });
            }
            pres[l - 1][(t - 1) * wl..t * wl].copy_from_slice(&z);
            for (a, zi) in acts[l - 1][t * wl..(t + 1) * wl].iter_mut().zip(&z) {
                *a = zi.max(0.0);
            }
        }
        let out = &mut outputs[(t - 1) * d_out..t * d_out];
        out.copy_from_slice(params.biases[depth - 1].as_slice());
        let wl = w[hidden];
        gemv_acc(&params.feedforward[depth - 1], &acts[hidden - 1][t * wl..(t + 1) * wl], out);
        if strict && out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: format!("output layer at t={t}") });
        }
    }
    Ok(Trace { steps, outputs, acts, pres })
}

fn final_hidden(trace: &Trace, topology: &RnnTopology, t0: usize) -> HiddenState {
    let w = topology.widths();
    let states = topology
        .feedback_sources()
        .iter()
        .map(|&k| DVector::from_column_slice(trace.act(k, trace.steps, w[k])))
        .collect();
    HiddenState { states, t: t0 + trace.steps }
}

/// One step of the network.
pub fn rnn_forward(
    params: &RnnParams,
    topology: &RnnTopology,
    prev: &HiddenState,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, HiddenState)> {
    params.validate(topology)?;
    if y.len() != topology.input_width() {
        return Err(dim_err(format!("input has length {}, network expects {}", y.len(), topology.input_width())));
    }
    let trace = run_sequence(params, topology, y.as_slice(), &prev.states, true)?;
    let out = DVector::from_column_slice(&trace.outputs);
    Ok((out, final_hidden(&trace, topology, prev.t)))
}

/// Folds [`rnn_forward`] over a sequence from `init_hidden` (or `s0`).
pub fn rnn_unroll(
    params: &RnnParams,
    topology: &RnnTopology,
    observations: &[DVector<f64>],
    s0: Option<&HiddenState>,
) -> Result<(Vec<DVector<f64>>, HiddenState)> {
    params.validate(topology)?;
    let dy = topology.input_width();
    let mut flat = Vec::with_capacity(observations.len() * dy);
    for y in observations {
        if y.len() != dy {
            return Err(dim_err(format!("input has length {}, network expects {dy}", y.len())));
        }
        flat.extend(y.iter());
    }
    let start = s0.cloned().unwrap_or_else(|| HiddenState::initial(params));
    let trace = run_sequence(params, topology, &flat, &start.states, true)?;
    let d_out = topology.output_width();
    let outputs = trace.outputs.chunks(d_out).map(DVector::from_column_slice).collect();
    Ok((outputs, final_hidden(&trace, topology, start.t)))
}

/// Flat-buffer unroll used by evaluation: returns `[T][d_out]` outputs and
/// the stacked fed-back state after every step, `[T][sum of source widths]`.
///
/// Unlike [`rnn_unroll`], non-finite activations are not an error here; they
/// propagate into the outputs so that callers can mark the overflow.
pub fn unroll_flat(
    params: &RnnParams,
    topology: &RnnTopology,
    observations: &[f64],
    init: &[DVector<f64>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = run_sequence(params, topology, observations, init, false)?;
    let w = topology.widths();
    let sources = topology.feedback_sources();
    let mut states = Vec::with_capacity(trace.steps * sources.iter().map(|&k| w[k]).sum::<usize>());
    for t in 1..=trace.steps {
        for &k in &sources {
            states.extend_from_slice(trace.act(k, t, w[k]));
        }
    }
    Ok((trace.outputs, states))
}

/// Re-expresses any network as a [`Variant::GeneralDense`] one with the extra
/// feedback blocks zeroed. Outputs are unchanged.
pub fn embed_in_general_dense(params: &RnnParams, topology: &RnnTopology) -> (RnnParams, RnnTopology) {
    let dense = RnnTopology { variant: Variant::GeneralDense, widths: topology.widths.clone() };
    let mut out = RnnParams::zeros(&dense);
    out.feedforward = params.feedforward.clone();
    out.biases = params.biases.clone();
    for (bi, blk) in topology.feedback_blocks().iter().enumerate() {
        let pos = dense.feedback_blocks().iter().position(|b| b == blk).expect("dense admits every block");
        out.feedback[pos] = params.feedback[bi].clone();
    }
    for (si, k) in topology.feedback_sources().iter().enumerate() {
        let pos = dense.feedback_sources().iter().position(|s| s == k).expect("dense feeds back every layer");
        out.init_hidden[pos] = params.init_hidden[si].clone();
    }
    (out, dense)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    /// Uniform on `±sqrt(6 / fan_in)`.
    HeUniform,
}

impl ScaleRule {
    fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            ScaleRule::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            ScaleRule::HeUniform => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Random weights, zero biases and zero initial hidden state. Feedback
/// weights are additionally scaled by [`FEEDBACK_INIT_SCALE`].
pub fn init_random_params(topology: &RnnTopology, seed: u64, rule: ScaleRule) -> RnnParams {
    let mut rng = stream_rng(seed, 0);
    let mut params = RnnParams::zeros(topology);
    let mut fill = |m: &mut DMatrix<f64>, damping: f64| {
        let bound = rule.bound(m.ncols(), m.nrows()) * damping;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                m[(i, j)] = rng.random_range(-bound..=bound);
            }
        }
    };
    for m in &mut params.feedforward {
        fill(m, 1.0);
    }
    for m in &mut params.feedback {
        fill(m, FEEDBACK_INIT_SCALE);
    }
    params
}

/// The finite-horizon memorization network.
///
/// Layer 1 keeps a time counter, the initial estimate and the last `T`
/// observations, each shifted by `+b` so the ReLU passes them through. The
/// affine read-out `s + b_half` (the half layer, folded into layer 2)
/// recovers
///
/// ```text
/// [t, rho0, y_t, y_{t-1}, .., y_1, 0, .., 0]
/// ```
///
/// exactly as long as every observation coordinate and `rho0` stay above
/// `-b`. Layer 2 is the identity on that state and the output layer reads
/// back `rho0`; it is a placeholder for a trained feedforward head.
#[derive(Debug, Clone)]
pub struct MemorizationNetwork {
    pub params: RnnParams,
    pub topology: RnnTopology,
    pub half_layer_bias: DVector<f64>,
    pub horizon: usize,
    pub dim_y: usize,
}

impl MemorizationNetwork {
    /// Effective layer-1.5 state for a hidden state of this network.
    pub fn half_layer_state(&self, hidden: &HiddenState) -> DVector<f64> {
        &hidden.states[0] + &self.half_layer_bias
    }
}

pub fn construct_memorization_params(
    horizon: usize,
    dim_y: usize,
    rho0: &[f64],
    bias_b: f64,
) -> Result<MemorizationNetwork> {
    if horizon == 0 || dim_y == 0 || rho0.is_empty() {
        return Err(Error::Argument("horizon, d_y and rho0 dimension must be positive".into()));
    }
    if !(bias_b > 0.0) || !bias_b.is_finite() {
        return Err(Error::Argument(format!("bias b must be positive, got {bias_b}")));
    }
    let r = rho0.len();
    let obs_start = 1 + r;
    let width = obs_start + horizon * dim_y;
    let topology = RnnTopology::new(Variant::Memorization, vec![dim_y, width, width, r])?;
    let mut params = RnnParams::zeros(&topology);

    // W(1,0): the newest observation lands in the first observation block.
    for i in 0..dim_y {
        params.feedforward[0][(obs_start + i, i)] = 1.0;
    }
    // W(1,1): counter and rho0 hold themselves, observation blocks shift down.
    let w11 = &mut params.feedback[0];
    w11[(0, 0)] = 1.0;
    for i in 0..r {
        w11[(1 + i, 1 + i)] = 1.0;
    }
    for blk in 1..horizon {
        for i in 0..dim_y {
            w11[(obs_start + blk * dim_y + i, obs_start + (blk - 1) * dim_y + i)] = 1.0;
        }
    }
    // b(1): counter increment and the shift of the newest observation.
    let b1 = &mut params.biases[0];
    b1[0] = 1.0;
    for i in 0..dim_y {
        b1[obs_start + i] = bias_b;
    }
    let mut half = DVector::from_element(width, -bias_b);
    half[0] = 0.0;
    // Layer 2 copies the (non-negative) layer-1 state.
    params.feedforward[1] = DMatrix::identity(width, width);
    // Output: rho0 read back from the shifted block.
    for i in 0..r {
        params.feedforward[2][(i, 1 + i)] = 1.0;
        params.biases[2][i] = -bias_b;
    }
    // s_0: counter 0, rho0 + b, and every observation slot at b so that it
    // reads as 0 until a real observation has been shifted into it.
    let mut s0 = DVector::from_element(width, bias_b);
    s0[0] = 0.0;
    for (i, v) in rho0.iter().enumerate() {
        s0[1 + i] = v + bias_b;
    }
    params.init_hidden[0] = s0;
    Ok(MemorizationNetwork { params, topology, half_layer_bias: half, horizon, dim_y })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NFRNNCK\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, topology tag, widths, then every
/// matrix as `rows, cols, f64 LE row-major` and every vector as
/// `len, f64 LE`, in the canonical parameter order.
pub fn write_checkpoint<W: Write>(params: &RnnParams, topology: &RnnTopology, mut w: W) -> Result<()> {
    params.validate(topology)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u8(topology.variant.tag())?;
    w.write_u32::<LittleEndian>(topology.widths.len() as u32)?;
    for &width in &topology.widths {
        w.write_u32::<LittleEndian>(width as u32)?;
    }
    for m in params.feedforward.iter().chain(&params.feedback) {
        w.write_u32::<LittleEndian>(m.nrows() as u32)?;
        w.write_u32::<LittleEndian>(m.ncols() as u32)?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_f64::<LittleEndian>(m[(i, j)])?;
            }
        }
    }
    for v in params.biases.iter().chain(&params.init_hidden) {
        w.write_u32::<LittleEndian>(v.len() as u32)?;
        for x in v.iter() {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(RnnParams, RnnTopology)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let variant = Variant::from_tag(r.read_u8()?)?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    if n > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible layer count {n}")));
    }
    let widths = (0..n).map(|_| r.read_u32::<LittleEndian>().map(|v| v as usize)).collect::<std::io::Result<Vec<_>>>()?;
    let topology = RnnTopology::new(variant, widths).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = RnnParams::zeros(&topology);
    let mut read_matrix = |m: &mut DMatrix<f64>| -> Result<()> {
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        if (rows, cols) != m.shape() {
            return Err(Error::Checkpoint(format!("matrix shape {rows}x{cols}, expected {:?}", m.shape())));
        }
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = r.read_f64::<LittleEndian>()?;
            }
        }
        Ok(())
    };
    for m in params.feedforward.iter_mut().chain(params.feedback.iter_mut()) {
        read_matrix(m)?;
    }
    for v in params.biases.iter_mut().chain(params.init_hidden.iter_mut()) {
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len != v.len() {
            return Err(Error::Checkpoint(format!("vector length {len}, expected {}", v.len())));
        }
        for x in v.iter_mut() {
            *x = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok((params, topology))
}
