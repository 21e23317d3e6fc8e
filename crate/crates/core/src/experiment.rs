//! Experiment configuration, the end-to-end runner, the oracle self-check
//! battery and fixture export.
//!
//! Configurations are TOML:
//!
//! ```toml
//! master_seed = 7
//!
//! [model]
//! F = [[0.98]]
//! H = [[1.0]]
//! Q = [[1.0]]
//! R = [[4.0]]
//! init_mean = [0.0]
//! init_cov = [[25.0]]
//!
//! [rnn]
//! variant = "recursive"
//! widths = [1, 7, 7, 1]
//!
//! [train]
//! horizon = 20
//! count = 5000
//! epochs = 300
//! minibatch_size = 100
//!
//! [eval]
//! n_test = 1000
//! horizon = 2000
//! ```
//!
//! Sub-seeds for training data, weight initialization, minibatch order,
//! test data and the contraction probe are derived from `master_seed` with
//! [`derive_seed`] under the labels `train-data`, `init`,
//! `minibatch-order`, `test-data` and `contraction`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    accumulation_onset, detect_error_accumulation, estimate_contraction, evaluate_filters, AccumulationResult,
    ConstantMethod, ContractionEstimate, EvalReport, FilterMethod, KalmanMeanProbe, KalmanMethod, ParticleMethod,
    RnnMethod, RnnStateProbe,
};
use crate::kalman::{kalman_filter, riccati_fixed_point, steady_state_gain, write_trace_csv, GainSchedule};
use crate::model::{sample_trajectories, spectral_radius, LinearGaussianModel, TrajectoryBatch};
use crate::particle::systematic_resample;
use crate::rnn::{construct_memorization_params, init_random_params, rnn_forward, write_checkpoint, HiddenState, RnnParams, RnnTopology, ScaleRule, Variant};
use crate::seed::{derive_seed, stream_rng};
use crate::train::{finite_diff_grad, grad_bptt, identity_target, kink_free_params, train, write_loss_history, TrainConfig};

/// Overrides `output.directory` when set.
pub const OUTPUT_DIR_ENV: &str = "NEUROFILTER_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnSection {
    pub variant: Variant,
    pub widths: Vec<usize>,
    #[serde(default = "default_init")]
    pub init: ScaleRule,
}

fn default_init() -> ScaleRule {
    ScaleRule::GlorotUniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_particles")]
    pub count: usize,
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self { enabled: true, count: default_particles() }
    }
}

fn default_true() -> bool {
    true
}
fn default_particles() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_contraction_horizon")]
    pub horizon: usize,
    /// Size of the initial-state perturbation along every coordinate.
    #[serde(default = "default_offset")]
    pub offset: f64,
}

impl Default for ContractionSection {
    fn default() -> Self {
        Self { n_pairs: default_pairs(), horizon: default_contraction_horizon(), offset: default_offset() }
    }
}

fn default_pairs() -> usize {
    200
}
fn default_contraction_horizon() -> usize {
    60
}
fn default_offset() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_test: usize,
    pub horizon: usize,
    #[serde(default = "default_early")]
    pub early_window: [usize; 2],
    #[serde(default = "default_late")]
    pub late_window: [usize; 2],
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Onset of accumulation: first `t` after `onset_reference` where the
    /// RMSE exceeds `onset_factor` times its value at `onset_reference`.
    #[serde(default = "default_onset_reference")]
    pub onset_reference: usize,
    #[serde(default = "default_onset_factor")]
    pub onset_factor: f64,
    #[serde(default)]
    pub contraction: ContractionSection,
}

fn default_early() -> [usize; 2] {
    [100, 300]
}
fn default_late() -> [usize; 2] {
    [1800, 2000]
}
fn default_threshold() -> f64 {
    crate::eval::DEFAULT_ACCUMULATION_THRESHOLD
}
fn default_onset_reference() -> usize {
    100
}
fn default_onset_factor() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub model: ModelSection,
    pub rnn: RnnSection,
    pub train: TrainConfig,
    #[serde(default)]
    pub particle: ParticleSection,
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn matrix(field: &str, rows: &[Vec<f64>], shape: (usize, usize)) -> Result<DMatrix<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(config_err(field, format!("expected a {}x{} matrix", shape.0, shape.1)));
    }
    Ok(DMatrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn dim_x(&self) -> usize {
        self.model.f.len()
    }

    pub fn dim_y(&self) -> usize {
        self.model.h.len()
    }

    pub fn build_model(&self) -> Result<LinearGaussianModel> {
        let (dx, dy) = (self.dim_x(), self.dim_y());
        if dx == 0 {
            return Err(config_err("model.F", "must be non-empty"));
        }
        if dy == 0 {
            return Err(config_err("model.H", "must be non-empty"));
        }
        let f = matrix("model.F", &self.model.f, (dx, dx))?;
        let h = matrix("model.H", &self.model.h, (dy, dx))?;
        let q = matrix("model.Q", &self.model.q, (dx, dx))?;
        let r = matrix("model.R", &self.model.r, (dy, dy))?;
        if self.model.init_mean.len() != dx {
            return Err(config_err("model.init_mean", format!("expected length {dx}")));
        }
        let c0 = matrix("model.init_cov", &self.model.init_cov, (dx, dx))?;
        let m0 = DVector::from_column_slice(&self.model.init_mean);
        LinearGaussianModel::new(f, h, q, r, m0, c0).map_err(|e| config_err("model", e))
    }

    pub fn build_topology(&self) -> Result<RnnTopology> {
        let w = &self.rnn.widths;
        let topo = RnnTopology::new(self.rnn.variant, w.clone()).map_err(|e| config_err("rnn.widths", e))?;
        if w[0] != self.dim_y() {
            return Err(config_err("rnn.widths", format!("input width {} must equal d_y = {}", w[0], self.dim_y())));
        }
        if *w.last().expect("non-empty") != self.dim_x() {
            return Err(config_err("rnn.widths", format!("output width must equal d_x = {}", self.dim_x())));
        }
        Ok(topo)
    }

    /// Checks every section and cross-section consistency.
    pub fn validate(&self) -> Result<()> {
        self.build_model()?;
        self.build_topology()?;
        self.train.validate()?;
        if self.particle.enabled && self.particle.count == 0 {
            return Err(config_err("particle.count", "must be positive"));
        }
        let e = &self.eval;
        if e.n_test == 0 {
            return Err(config_err("eval.n_test", "must be positive"));
        }
        if e.horizon == 0 {
            return Err(config_err("eval.horizon", "must be positive"));
        }
        for (field, [a, b]) in [("eval.early_window", e.early_window), ("eval.late_window", e.late_window)] {
            if a == 0 || a > b || b > e.horizon {
                return Err(config_err(field, format!("[{a}, {b}] must be a non-empty range inside 1..={}", e.horizon)));
            }
        }
        if e.early_window[1] >= e.late_window[0] {
            return Err(config_err("eval.late_window", "must start after eval.early_window ends"));
        }
        if !(e.threshold > 0.0) {
            return Err(config_err("eval.threshold", "must be positive"));
        }
        if e.onset_reference == 0 || e.onset_reference >= e.horizon {
            return Err(config_err("eval.onset_reference", format!("must lie in 1..{}", e.horizon)));
        }
        if !(e.onset_factor > 1.0) {
            return Err(config_err("eval.onset_factor", "must exceed 1"));
        }
        let c = &e.contraction;
        if c.n_pairs == 0 {
            return Err(config_err("eval.contraction.n_pairs", "must be positive"));
        }
        if c.horizon < 2 {
            return Err(config_err("eval.contraction.horizon", "must be at least 2"));
        }
        if !(c.offset != 0.0 && c.offset.is_finite()) {
            return Err(config_err("eval.contraction.offset", "must be finite and non-zero"));
        }
        if self.output.formats.is_empty() {
            return Err(config_err("output.formats", "must list at least one format"));
        }
        Ok(())
    }

    /// `NEUROFILTER_OUTPUT_DIR` if set, else `output.directory`.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.output.directory.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub train_data: u64,
    pub init: u64,
    pub minibatch_order: u64,
    pub test_data: u64,
    pub contraction: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            train_data: derive_seed(master, "train-data"),
            init: derive_seed(master, "init"),
            minibatch_order: derive_seed(master, "minibatch-order"),
            test_data: derive_seed(master, "test-data"),
            contraction: derive_seed(master, "contraction"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: EvalReport,
    pub loss_history: Vec<f64>,
    pub params: RnnParams,
    pub topology: RnnTopology,
    pub rnn_accumulation: AccumulationResult,
    pub rnn_onset: Option<usize>,
    pub kalman_contraction: ContractionEstimate,
    /// Spectral radius of `F - K H F` at the steady-state gain.
    pub kalman_contraction_closed_form: f64,
    pub rnn_contraction: ContractionEstimate,
    pub output_dir: PathBuf,
    pub seeds: Seeds,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    crate_version: &'a str,
    config: &'a ExperimentConfig,
    seeds: Seeds,
    wall_clock_seconds: f64,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<ManifestResults<'a>>,
}

#[derive(Serialize)]
struct ManifestResults<'a> {
    final_training_loss: f64,
    rnn_accumulation: &'a AccumulationResult,
    rnn_onset: Option<usize>,
    kalman_kappa_hat: f64,
    kalman_kappa_closed_form: f64,
    rnn_kappa_hat: f64,
    rnn_kappa_upper_bound_only: bool,
    window_means: Vec<(String, f64, f64)>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(e.into()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Loads, validates and runs a configuration file.
pub fn run_experiment_file(path: &Path, output_dir: Option<&Path>) -> Result<RunSummary> {
    run_experiment(&ExperimentConfig::load(path)?, output_dir)
}

/// Samples training data, trains the network, evaluates it against the
/// Kalman oracle (with the particle filter and the zero predictor), probes
/// contraction and writes every artifact to `output_dir` (or
/// [`ExperimentConfig::output_dir`]).
pub fn run_experiment(config: &ExperimentConfig, output_dir: Option<&Path>) -> Result<RunSummary> {
    let started = Instant::now();
    config.validate()?;
    let model = config.build_model()?;
    let topology = config.build_topology()?;
    let seeds = Seeds::from_master(config.master_seed);
    let dir = output_dir.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir());
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();

    let mut train_cfg = config.train.clone();
    train_cfg.seed = config.master_seed;
    let data = sample_trajectories(&model, train_cfg.horizon, train_cfg.count, seeds.train_data)?;
    log::info!("training on N={} trajectories of length {}", train_cfg.count, train_cfg.horizon);
    let (params, history) = match train(&train_cfg, &topology, &data, &identity_target) {
        Ok(v) => v,
        Err(err) => {
            if let Error::TrainingDiverged { history, .. } = &err {
                write_loss_history(history, create(&dir.join("loss_history.csv"))?)?;
                artifacts.push("loss_history.csv".to_string());
            }
            let manifest = Manifest {
                status: "failed",
                crate_version: env!("CARGO_PKG_VERSION"),
                config,
                seeds,
                wall_clock_seconds: started.elapsed().as_secs_f64(),
                artifacts,
                error: Some(err.to_string()),
                results: None,
            };
            write_manifest(&dir, &manifest)?;
            return Err(err);
        }
    };
    write_loss_history(&history, create(&dir.join("loss_history.csv"))?)?;
    write_checkpoint(&params, &topology, create(&dir.join("checkpoint.bin"))?)?;
    artifacts.extend(["loss_history.csv".to_string(), "checkpoint.bin".to_string()]);

    let e = &config.eval;
    log::info!("evaluating on n_test={} trajectories of length {}", e.n_test, e.horizon);
    let schedule = GainSchedule::new(&model, e.horizon)?;
    let kalman = KalmanMethod::new(&model, e.horizon)?;
    let rnn = RnnMethod::new("rnn", params.clone(), topology.clone())?;
    let zero = ConstantMethod::zero(model.dim_x(), model.dim_y());
    let particle = ParticleMethod::new(&model, config.particle.count.max(1))?;
    let mut methods: Vec<&dyn FilterMethod> = vec![&kalman, &rnn, &zero];
    if config.particle.enabled {
        methods.push(&particle);
    }
    let report = evaluate_filters(&model, &schedule, &methods, e.n_test, e.horizon, seeds.test_data)?;
    for format in &config.output.formats {
        match format {
            OutputFormat::Csv => {
                report.write_csv(create(&dir.join("report.csv"))?)?;
                artifacts.push("report.csv".into());
            }
            OutputFormat::Json => {
                let text = serde_json::to_string(&report).map_err(|e| Error::Io(e.into()))?;
                fs::write(dir.join("report.json"), text)?;
                artifacts.push("report.json".into());
            }
        }
    }
    let window = |w: [usize; 2]| (w[0], w[1]);
    let rnn_accumulation =
        detect_error_accumulation(&report, "rnn", window(e.early_window), window(e.late_window), e.threshold)?;
    let rnn_onset = accumulation_onset(report.method("rnn")?, e.onset_reference, e.onset_factor, e.horizon);

    let c = &e.contraction;
    let fixed_point = riccati_fixed_point(&model, 1e-13, 1_000_000)?;
    let gain = steady_state_gain(&model, &fixed_point)?;
    let kalman_contraction_closed_form = spectral_radius(&(model.f() - &gain * model.h() * model.f()))?;
    let kalman_probe = KalmanMeanProbe::new(&model, gain)?;
    let kalman_contraction = estimate_contraction(
        &kalman_probe,
        &model,
        c.n_pairs,
        &[vec![c.offset; model.dim_x()]],
        c.horizon,
        seeds.contraction,
    )?;
    let rnn_probe = RnnStateProbe { params: &params, topology: &topology };
    let state_dim: usize = params.init_hidden.iter().map(|s| s.len()).sum();
    let rnn_contraction =
        estimate_contraction(&rnn_probe, &model, c.n_pairs, &[vec![c.offset; state_dim]], c.horizon, seeds.contraction)?;
    kalman_contraction.write_csv(create(&dir.join("contraction_kalman.csv"))?)?;
    rnn_contraction.write_csv(create(&dir.join("contraction_rnn.csv"))?)?;
    artifacts.extend(["contraction_kalman.csv".to_string(), "contraction_rnn.csv".to_string()]);
    artifacts.push("manifest.json".into());

    let window_means = report
        .methods
        .iter()
        .map(|m| (m.name.clone(), m.window_mean(window(e.early_window)), m.window_mean(window(e.late_window))))
        .collect();
    let manifest = Manifest {
        status: "ok",
        crate_version: env!("CARGO_PKG_VERSION"),
        config,
        seeds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        artifacts,
        error: None,
        results: Some(ManifestResults {
            final_training_loss: *history.last().expect("history holds the initial loss"),
            rnn_accumulation: &rnn_accumulation,
            rnn_onset,
            kalman_kappa_hat: kalman_contraction.kappa_hat,
            kalman_kappa_closed_form: kalman_contraction_closed_form,
            rnn_kappa_hat: rnn_contraction.kappa_hat,
            rnn_kappa_upper_bound_only: rnn_contraction.early_convergence,
            window_means,
        }),
    };
    write_manifest(&dir, &manifest)?;
    Ok(RunSummary {
        report,
        loss_history: history,
        params,
        topology,
        rnn_accumulation,
        rnn_onset,
        kalman_contraction,
        kalman_contraction_closed_form,
        rnn_contraction,
        output_dir: dir,
        seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast oracle battery: BPTT against finite differences, the Kalman
/// covariance against the scalar Riccati recursion and its closed-form
/// fixed point, memorization exactness and systematic-resampling
/// unbiasedness. With `corrupt_gradient` the BPTT gradient is perturbed
/// before comparison, which must make the first check fail.
pub fn verify_suite(corrupt_gradient: bool) -> Vec<CheckOutcome> {
    let outcome = |name, r: Result<(bool, String)>| match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
    };
    vec![
        outcome("gradient", check_gradient(corrupt_gradient)),
        outcome("riccati", check_riccati()),
        outcome("memorization", check_memorization()),
        outcome("resampling", check_resampling()),
    ]
}

fn check_gradient(corrupt: bool) -> Result<(bool, String)> {
    let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0)?;
    let batch = sample_trajectories(&model, 5, 2, 11)?;
    let topo = RnnTopology::new(Variant::Recursive, vec![1, 7, 7, 1])?;
    let params = kink_free_params(&topo, &batch, 1e-3, 11, 1000)?;
    let mut bptt = grad_bptt(&params, &topo, &batch, &identity_target)?.grad.to_flat();
    if corrupt {
        bptt[0] = bptt[0] * 1.01 + 0.01;
    }
    let fd = finite_diff_grad(&params, &topo, &batch, &identity_target, 1e-5)?.grad.to_flat();
    let worst = bptt.iter().zip(&fd).map(|(a, b)| (a - b).abs() / b.abs().max(1.0)).fold(0.0, f64::max);
    Ok((worst <= 1e-5, format!("{} parameters, worst relative error {worst:.2e}", fd.len())))
}

fn check_riccati() -> Result<(bool, String)> {
    let (alpha, r) = (0.98f64, 4.0f64);
    let model = LinearGaussianModel::scalar(alpha, r.sqrt(), 25.0)?;
    let observations = vec![DVector::zeros(1); 100];
    let states = kalman_filter(&model, &observations)?;
    let mut c = 25.0;
    let mut worst: f64 = 0.0;
    for s in &states[1..] {
        let p = alpha * alpha * c + 1.0;
        c = p * r / (p + r);
        worst = worst.max((s.cov[(0, 0)] - c).abs());
    }
    // Fixed point of c = p r / (p + r), p = alpha^2 c + 1.
    let a = alpha * alpha;
    let (b, k) = (1.0 + r - a * r, -r);
    let root = (-b + (b * b - 4.0 * a * k).sqrt()) / (2.0 * a);
    let fp = riccati_fixed_point(&model, 1e-14, 100_000)?[(0, 0)];
    let ss = (fp - root).abs();
    Ok((worst <= 1e-12 && ss <= 1e-10, format!("sequence error {worst:.1e}, fixed point error {ss:.1e}")))
}

fn check_memorization() -> Result<(bool, String)> {
    use rand_distr::StandardNormal;
    let (horizon, b) = (20, 50.0);
    let mut rng = stream_rng(5, 0);
    let mut worst: f64 = 0.0;
    for seq in 0..100 {
        let dy = 1 + seq % 3;
        let net = construct_memorization_params(horizon, dy, &[0.0], b)?;
        let ys: Vec<Vec<f64>> = (0..horizon).map(|_| (0..dy).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let mut hidden = HiddenState::initial(&net.params);
        for t in 1..=horizon {
            hidden = rnn_forward(&net.params, &net.topology, &hidden, &DVector::from_column_slice(&ys[t - 1]))?.1;
            let state = net.half_layer_state(&hidden);
            let mut expected = vec![t as f64, 0.0];
            for s in (0..t).rev() {
                expected.extend_from_slice(&ys[s]);
            }
            expected.resize(state.len(), 0.0);
            for (x, e) in state.iter().zip(&expected) {
                worst = worst.max((x - e).abs());
            }
        }
    }
    let ulp = b * f64::EPSILON;
    Ok((worst <= ulp, format!("worst deviation {worst:.1e} (ulp(b) = {ulp:.1e})")))
}

fn check_resampling() -> Result<(bool, String)> {
    let weights = [0.3, 0.25, 0.2, 0.25];
    let draws = 10_000;
    let mut rng = stream_rng(8, 0);
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        for a in systematic_resample(&weights, rng.random()) {
            counts[a] += 1;
        }
    }
    let p = weights.len() as f64;
    let worst = counts
        .iter()
        .zip(&weights)
        .map(|(c, w)| (*c as f64 / draws as f64 - p * w).abs() / (p * w))
        .fold(0.0, f64::max);
    Ok((worst <= 0.02, format!("worst relative deviation of mean copy count {worst:.2e}")))
}

/// Writes small reference data sets for cross-checking other
/// implementations: trajectories, a Kalman trace, memorization states, a
/// gradient instance and systematic-resampling ancestors.
pub fn export_fixtures(dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    let model = LinearGaussianModel::scalar(0.98, 2.0, 25.0)?;
    let batch = sample_trajectories(&model, 10, 4, 1)?;
    batch.write_csv(create(&path("trajectories.csv"))?)?;
    let obs: Vec<DVector<f64>> = (1..=10).map(|t| DVector::from_column_slice(batch.observation(0, t))).collect();
    write_trace_csv(&kalman_filter(&model, &obs)?, create(&path("kalman_trace.csv"))?)?;

    let net = construct_memorization_params(3, 1, &[0.0], 10.0)?;
    let mut w = csv::Writer::from_writer(create(&path("memorization_states.csv"))?);
    let width = net.topology.width(1);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((0..width).map(|i| format!("s_{i}")));
    w.write_record(&header)?;
    let mut hidden = HiddenState::initial(&net.params);
    for (t, y) in [0.5, -0.2, 1.1].into_iter().enumerate() {
        hidden = rnn_forward(&net.params, &net.topology, &hidden, &DVector::from_element(1, y))?.1;
        let mut row = vec![(t + 1).to_string(), y.to_string()];
        row.extend(net.half_layer_state(&hidden).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let small: TrajectoryBatch = sample_trajectories(&model, 5, 2, 11)?;
    let topo = RnnTopology::new(Variant::Recursive, vec![1, 7, 7, 1])?;
    let params = init_random_params(&topo, 11, ScaleRule::GlorotUniform);
    small.write_csv(create(&path("gradient_batch.csv"))?)?;
    write_checkpoint(&params, &topo, create(&path("gradient_params.bin"))?)?;
    let grad = grad_bptt(&params, &topo, &small, &identity_target)?;
    let mut w = csv::Writer::from_writer(create(&path("gradient_bptt.csv"))?);
    w.write_record(["index", "value"])?;
    for (i, g) in grad.grad.values().enumerate() {
        w.write_record([i.to_string(), g.to_string()])?;
    }
    w.write_record(["loss".to_string(), grad.loss.to_string()])?;
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&path("systematic_resample.csv"))?);
    w.write_record(["u", "ancestors"])?;
    let weights = [0.3, 0.25, 0.2, 0.25];
    for u in [0.0, 0.1, 0.5, 0.9, 0.999] {
        let a = systematic_resample(&weights, u);
        w.write_record([u.to_string(), a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")])?;
    }
    w.flush()?;
    Ok(written)
}
