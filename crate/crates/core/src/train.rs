//! Mini-batch training, evaluation, multi-seed aggregation and the margin and
//! scale sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColoredDataset, Regime, RGB_LEN};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::{head_loss, head_scores, stable_softmax, LossConfig, LossKind};
use crate::margin::{load_margin_table, MarginTable};
use crate::model::{batch_backward, batch_forward, init_params, ModelSpec, Params};

const SHUFFLE_STREAM: u64 = 20;
/// Samples per work unit inside a batch; fixed so results do not depend on
/// the thread count.
const GRAD_CHUNK: usize = 64;
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            other => Err(Error::ConfigInvalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub name: String,
    pub model: ModelSpec,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seeds: Vec<u64>,
    /// Dataset directory with `train/` and `test/`.
    pub data: Option<PathBuf>,
    /// Margin table CSV, required for MMDB.
    pub margins: Option<PathBuf>,
    /// Train on the first `n` training samples only.
    #[serde(default)]
    pub train_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            name: "run".into(),
            model: ModelSpec::mlp(),
            loss: LossConfig::default(),
            epochs: 15,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seeds: vec![0, 1, 2, 3, 4],
            data: None,
            margins: None,
            train_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::ConfigInvalid("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch size must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::ConfigInvalid("at least one seed is required".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Running accuracy and loss over the last epoch.
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Training samples skipped because their features had zero norm.
    pub skipped: usize,
    /// Batches whose loss was NaN or infinite.
    pub non_finite_batches: usize,
    pub curve: Vec<EpochStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        let n = values.len();
        if n == 0 {
            return Aggregate { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Aggregate { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub seeds: Vec<SeedResult>,
    pub train_accuracy: Aggregate,
    pub train_loss: Aggregate,
    pub test_accuracy: Aggregate,
    pub test_loss: Aggregate,
    /// Seeds whose 3-epoch smoothed training loss rose at some point.
    pub loss_trend_flags: Vec<u64>,
    /// Regime of the training split, when known.
    #[serde(default)]
    pub regime: Option<Regime>,
    /// Kept out of `report.json` so that reruns write identical bytes; see
    /// `timing.json`.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    fn assemble(config: TrainConfig, seeds: Vec<SeedResult>, wall_clock_seconds: f64) -> Self {
        let pick = |f: fn(&SeedResult) -> f64| Aggregate::of(&seeds.iter().map(f).collect::<Vec<_>>());
        let loss_trend_flags = seeds.iter().filter(|r| !smoothed_non_increasing(&r.curve)).map(|r| r.seed).collect();
        RunReport {
            train_accuracy: pick(|r| r.train_accuracy),
            train_loss: pick(|r| r.train_loss),
            test_accuracy: pick(|r| r.test_accuracy),
            test_loss: pick(|r| r.test_loss),
            loss_trend_flags,
            regime: None,
            config,
            seeds,
            wall_clock_seconds,
        }
    }

    /// True when no seed saw a NaN or infinite batch loss.
    pub fn all_finite(&self) -> bool {
        self.seeds.iter().all(|s| s.non_finite_batches == 0 && s.train_loss.is_finite() && s.test_loss.is_finite())
    }
}

fn smoothed_non_increasing(curve: &[EpochStats]) -> bool {
    let smooth: Vec<f64> = curve.windows(3).map(|w| w.iter().map(|e| e.train_loss).sum::<f64>() / 3.0).collect();
    smooth.windows(2).all(|w| w[1] <= w[0])
}

/// Per-sample output of [`evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub bias_factor: u8,
    pub predicted: u8,
    /// Softmax of the inference scores.
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean training-objective loss over samples with nonzero features.
    pub mean_loss: f64,
    pub predictions: Vec<Prediction>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn one_hot(label: u8, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label as usize] = 1.0;
    y
}

fn margin_row(margins: Option<&MarginTable>, factor: u8) -> Option<&[f64]> {
    margins.and_then(|t| (usize::from(factor) < t.factors()).then(|| t.row(factor as usize)))
}

fn check_compat(params: &Params, loss: &LossConfig, margins: Option<&MarginTable>) -> Result<()> {
    if loss.kind == LossKind::Mmdb {
        let table = margins.ok_or(Error::MissingMarginTable)?;
        if table.omega() != params.spec.classes {
            return Err(Error::ShapeMismatch(format!(
                "margin table has {} classes, model has {}",
                table.omega(),
                params.spec.classes
            )));
        }
    }
    Ok(())
}

fn load_inputs(data: &ColoredDataset, indices: &[usize]) -> Vec<f64> {
    let mut buf = vec![0.0; indices.len() * RGB_LEN];
    for (out, &i) in buf.chunks_exact_mut(RGB_LEN).zip(indices) {
        data.get(i).fill_f64(out);
    }
    buf
}

/// Summed loss and gradient over a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient {
    pub loss_sum: f64,
    pub grad: Vec<f64>,
    pub used: usize,
    pub correct: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct ChunkStats {
    loss_sum: f64,
    used: usize,
    correct: usize,
}

/// Gradient of the summed loss over `indices` of `data`. Samples whose
/// features have zero norm are skipped.
pub fn batch_gradient(
    params: &Params,
    loss: &LossConfig,
    data: &ColoredDataset,
    indices: &[usize],
    margins: Option<&MarginTable>,
    exec: Execution,
) -> Result<BatchGradient> {
    let mut buffers = Vec::new();
    let stats = accumulate_gradient(params, loss, data, indices, margins, exec, &mut buffers)?;
    let grad = buffers.swap_remove(0);
    Ok(BatchGradient { loss_sum: stats.loss_sum, grad, used: stats.used, correct: stats.correct })
}

/// Sums per-chunk gradients into `buffers[0]`, reusing the buffers across
/// calls.
fn accumulate_gradient(
    params: &Params,
    loss: &LossConfig,
    data: &ColoredDataset,
    indices: &[usize],
    margins: Option<&MarginTable>,
    exec: Execution,
    buffers: &mut Vec<Vec<f64>>,
) -> Result<ChunkStats> {
    check_compat(params, loss, margins)?;
    let chunks = indices.len().div_ceil(GRAD_CHUNK).max(1);
    buffers.resize_with(buffers.len().max(chunks), Vec::new);
    let classes = params.spec.classes;
    let head_at = params.feature_param_count();
    let stats = exec.map_chunks_with(indices, GRAD_CHUNK, buffers, |chunk, grad| -> Result<ChunkStats> {
        grad.clear();
        grad.resize(params.len(), 0.0);
        let mut stats = ChunkStats::default();
        let xbuf = load_inputs(data, chunk);
        let xs: Vec<&[f64]> = xbuf.chunks_exact(RGB_LEN).collect();
        let cache = batch_forward(params, &xs);
        let d = params.spec.feature_dim;
        let mut dfeat = vec![0.0; chunk.len() * d];
        for (s, &i) in chunk.iter().enumerate() {
            let sample = data.get(i);
            let y = one_hot(sample.label, classes);
            let row = match loss.kind {
                LossKind::Mmdb => Some(margin_row(margins, sample.bias_factor).ok_or(Error::IndexOutOfRange {
                    what: "bias factor",
                    value: sample.bias_factor as usize,
                    limit: margins.map_or(0, |t| t.factors()),
                })?),
                _ => None,
            };
            let g = match head_loss(loss, params.head(), &cache.features()[s * d..(s + 1) * d], &y, row) {
                Ok(g) => g,
                Err(Error::DegenerateInput(_)) => continue,
                Err(e) => return Err(e),
            };
            stats.loss_sum += g.loss;
            stats.used += 1;
            if argmax(&g.probs) == sample.label as usize {
                stats.correct += 1;
            }
            dfeat[s * d..(s + 1) * d].copy_from_slice(&g.dl_dx);
            for (a, b) in grad[head_at..].iter_mut().zip(&g.dl_dw) {
                *a += b;
            }
        }
        batch_backward(params, &cache, &dfeat, grad);
        Ok(stats)
    });
    let mut total = ChunkStats::default();
    for s in stats {
        let s = s?;
        total.loss_sum += s.loss_sum;
        total.used += s.used;
        total.correct += s.correct;
    }
    if chunks == 1 && indices.is_empty() {
        buffers[0].clear();
        buffers[0].resize(params.len(), 0.0);
    }
    let (first, rest) = buffers.split_at_mut(1);
    for part in &rest[..chunks - 1] {
        for (a, b) in first[0].iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(total)
}

/// Accuracy, mean loss and per-sample predictions on `data`. For MMDB the
/// loss uses `margins` (the table estimated on the training split).
pub fn evaluate(
    params: &Params,
    data: &ColoredDataset,
    loss: &LossConfig,
    margins: Option<&MarginTable>,
    exec: Execution,
) -> Result<Evaluation> {
    check_compat(params, loss, margins)?;
    if data.is_empty() {
        return Err(Error::ShapeMismatch("empty dataset".into()));
    }
    let classes = params.spec.classes;
    let indices: Vec<usize> = (0..data.len()).collect();
    let parts = exec.map_chunks(&indices, EVAL_CHUNK, |chunk| -> Result<(Vec<Prediction>, f64, usize)> {
        let xbuf = load_inputs(data, chunk);
        let xs: Vec<&[f64]> = xbuf.chunks_exact(RGB_LEN).collect();
        let cache = batch_forward(params, &xs);
        let d = params.spec.feature_dim;
        let mut preds = Vec::with_capacity(chunk.len());
        let (mut loss_sum, mut used) = (0.0, 0);
        for (s, &i) in chunk.iter().enumerate() {
            let sample = data.get(i);
            if usize::from(sample.label) >= classes {
                return Err(Error::ShapeMismatch(format!("label {} for {classes} classes", sample.label)));
            }
            let features = &cache.features()[s * d..(s + 1) * d];
            let scores = match head_scores(loss, params.head(), features) {
                Ok(s) => s,
                Err(Error::DegenerateInput(_)) => vec![0.0; classes],
                Err(e) => return Err(e),
            };
            let y = one_hot(sample.label, classes);
            let row = if loss.kind == LossKind::Mmdb { margin_row(margins, sample.bias_factor) } else { None };
            if loss.kind != LossKind::Mmdb || row.is_some() {
                if let Ok(g) = head_loss(loss, params.head(), features, &y, row) {
                    loss_sum += g.loss;
                    used += 1;
                }
            }
            preds.push(Prediction {
                label: sample.label,
                bias_factor: sample.bias_factor,
                predicted: argmax(&scores) as u8,
                probs: stable_softmax(&scores),
            });
        }
        Ok((preds, loss_sum, used))
    });
    let mut predictions = Vec::with_capacity(data.len());
    let (mut loss_sum, mut used) = (0.0, 0usize);
    for part in parts {
        let (p, l, u) = part?;
        predictions.extend(p);
        loss_sum += l;
        used += u;
    }
    let correct = predictions.iter().filter(|p| p.correct()).count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
        predictions,
    })
}

enum Optimizer {
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
    Sgd { velocity: Vec<f64> },
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    const MOMENTUM: f64 = 0.9;

    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 },
            OptimizerKind::SgdMomentum => Optimizer::Sgd { velocity: vec![0.0; len] },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - Self::BETA1.powi(*t);
                let c2 = 1.0 - Self::BETA2.powi(*t);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g;
                    v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g * g;
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
            Optimizer::Sgd { velocity } => {
                for i in 0..params.len() {
                    velocity[i] = Self::MOMENTUM * velocity[i] + grad[i];
                    params[i] -= lr * velocity[i];
                }
            }
        }
    }
}

/// Trains one seed and evaluates it on `test`.
pub fn train_seed(
    config: &TrainConfig,
    seed: u64,
    train: &ColoredDataset,
    test: &ColoredDataset,
    margins: Option<&MarginTable>,
    exec: Execution,
) -> Result<(SeedResult, Params)> {
    config.validate()?;
    let mut params = init_params(config.model, seed)?;
    check_compat(&params, &config.loss, margins)?;
    let n = config.train_limit.map_or(train.len(), |l| l.min(train.len()));
    if n == 0 {
        return Err(Error::ConfigInvalid("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut optimizer = Optimizer::new(config.optimizer, params.len());
    let mut curve = Vec::with_capacity(config.epochs);
    let (mut skipped, mut non_finite_batches) = (0, 0);
    let mut buffers = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut used, mut correct) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let g = accumulate_gradient(&params, &config.loss, train, batch, margins, exec, &mut buffers)?;
            skipped += batch.len() - g.used;
            if g.used == 0 {
                continue;
            }
            if !g.loss_sum.is_finite() {
                non_finite_batches += 1;
                continue;
            }
            loss_sum += g.loss_sum;
            used += g.used;
            correct += g.correct;
            let grad = &mut buffers[0];
            let scale = 1.0 / g.used as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            optimizer.step(params.as_mut_slice(), grad, config.learning_rate);
        }
        curve.push(EpochStats {
            epoch: epoch + 1,
            train_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            train_accuracy: if used > 0 { correct as f64 / n as f64 } else { 0.0 },
        });
    }
    let eval = evaluate(&params, test, &config.loss, margins, exec)?;
    let last = curve.last().copied().expect("epochs >= 1");
    let result = SeedResult {
        seed,
        train_accuracy: last.train_accuracy,
        train_loss: last.train_loss,
        test_accuracy: eval.accuracy,
        test_loss: eval.mean_loss,
        skipped,
        non_finite_batches,
        curve,
    };
    Ok((result, params))
}

/// A finished run: the report plus the trained parameters of every seed.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub report: RunReport,
    pub params: Vec<Params>,
}

/// Trains every configured seed on in-memory data.
pub fn train_on(
    config: &TrainConfig,
    train: &ColoredDataset,
    test: &ColoredDataset,
    margins: Option<&MarginTable>,
    exec: Execution,
) -> Result<TrainedRun> {
    config.validate()?;
    if config.loss.kind == LossKind::Mmdb && margins.is_none() {
        return Err(Error::MissingMarginTable);
    }
    let started = Instant::now();
    let mut seeds = Vec::with_capacity(config.seeds.len());
    let mut params = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (r, p) = train_seed(config, seed, train, test, margins, exec)?;
        seeds.push(r);
        params.push(p);
    }
    let mut report = RunReport::assemble(config.clone(), seeds, started.elapsed().as_secs_f64());
    report.regime = Some(train.manifest.regime);
    Ok(TrainedRun { report, params })
}

/// Loads the dataset (and margin table, for MMDB) named in `config` and
/// trains.
pub fn train(config: &TrainConfig, exec: Execution) -> Result<TrainedRun> {
    config.validate()?;
    let data = config.data.as_ref().ok_or_else(|| Error::ConfigInvalid("no dataset directory".into()))?;
    let margins = match (&config.margins, config.loss.kind) {
        (Some(path), _) => Some(load_margin_table(path)?),
        (None, LossKind::Mmdb) => return Err(Error::MissingMarginTable),
        (None, _) => None,
    };
    let (train, test) = crate::dataset::load_pair(data)?;
    train_on(config, &train, &test, margins.as_ref(), exec)
}

#[derive(Serialize)]
struct Timing<'a> {
    name: &'a str,
    wall_clock_seconds: f64,
}

/// Writes `config.json`, `report.json`, `curves.csv` and `checkpoint.bin`
/// (first seed) under `dir`, plus the wall clock in `timing.json`.
pub fn write_run(dir: &Path, run: &TrainedRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), &run.report.config)?;
    write_json(&dir.join("report.json"), &run.report)?;
    let timing = Timing { name: &run.report.config.name, wall_clock_seconds: run.report.wall_clock_seconds };
    write_json(&dir.join("timing.json"), &timing)?;
    let curves = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves)?;
    w.write_record(["seed", "epoch", "train_loss", "train_accuracy"])?;
    for r in &run.report.seeds {
        for e in &r.curve {
            w.serialize((r.seed, e.epoch, e.train_loss, e.train_accuracy))?;
        }
    }
    w.flush().map_err(|e| Error::io(&curves, e))?;
    if let Some(p) = run.params.first() {
        p.save(&dir.join("checkpoint.bin"))?;
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_sweep(path: &Path) -> Result<SweepReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: String,
    /// Fixed margin or scale, depending on the sweep.
    pub value: Option<f64>,
    pub report: RunReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Baseline, NSL, fixed margins and adaptive margins.
    Margin,
    /// Accuracy against the scale.
    Scale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub model: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, method: &str, value: Option<f64>) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.method == method && c.value == value)
    }
}

pub const SWEEP_MARGINS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const SWEEP_SCALES: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

fn run_cells(
    cells: Vec<(String, Option<f64>, TrainConfig)>,
    train: &ColoredDataset,
    test: &ColoredDataset,
    margins: Option<&MarginTable>,
    exec: Execution,
    jobs: usize,
) -> Result<Vec<SweepCell>> {
    let results = exec.install(jobs, || {
        exec.map(&cells, |(method, value, cfg)| {
            let m = if cfg.loss.kind == LossKind::Mmdb { margins } else { None };
            train_on(cfg, train, test, m, exec).map(|run| SweepCell {
                method: method.clone(),
                value: *value,
                report: run.report,
            })
        })
    });
    results.into_iter().collect()
}

/// Baseline, NSL, LMCL at each fixed margin, and adaptive MMDB.
pub fn sweep_margin(
    base: &TrainConfig,
    fixed_margins: &[f64],
    train: &ColoredDataset,
    test: &ColoredDataset,
    margins: &MarginTable,
    exec: Execution,
    jobs: usize,
) -> Result<SweepReport> {
    let with = |name: &str, kind: LossKind, m: f64| {
        let mut cfg = base.clone();
        cfg.name = format!("{}-{name}", base.name);
        cfg.loss.kind = kind;
        cfg.loss.fixed_margin = m;
        cfg
    };
    let mut cells = vec![
        ("baseline".to_string(), None, with("baseline", LossKind::Softmax, 0.0)),
        ("nsl".to_string(), None, with("nsl", LossKind::Nsl, 0.0)),
    ];
    for &m in fixed_margins {
        cells.push(("fixed".to_string(), Some(m), with(&format!("m{m}"), LossKind::Lmcl, m)));
    }
    cells.push(("adaptive".to_string(), None, with("adaptive", LossKind::Mmdb, 0.0)));
    Ok(SweepReport {
        kind: SweepKind::Margin,
        model: base.model.kind.name().to_string(),
        cells: run_cells(cells, train, test, Some(margins), exec, jobs)?,
    })
}

/// Accuracy against the scale for each cosine method in `methods`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_scale(
    base: &TrainConfig,
    methods: &[LossKind],
    scales: &[f64],
    train: &ColoredDataset,
    test: &ColoredDataset,
    margins: Option<&MarginTable>,
    exec: Execution,
    jobs: usize,
) -> Result<SweepReport> {
    let mut cells = Vec::new();
    for &kind in methods {
        if !kind.is_cosine() {
            return Err(Error::ConfigInvalid(format!("{} has no scale", kind.name())));
        }
        for &s in scales {
            let mut cfg = base.clone();
            cfg.name = format!("{}-{}-s{s}", base.name, kind.name());
            cfg.loss.kind = kind;
            cfg.loss.scale = s;
            cells.push((kind.name().to_string(), Some(s), cfg));
        }
    }
    Ok(SweepReport {
        kind: SweepKind::Scale,
        model: base.model.kind.name().to_string(),
        cells: run_cells(cells, train, test, margins, exec, jobs)?,
    })
}

/// `table6.csv`: one row per margin-sweep cell.
pub fn write_table6(path: &Path, sweep: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "method", "margin", "accuracy_mean", "accuracy_std", "seeds"])?;
    for c in &sweep.cells {
        let a = c.report.test_accuracy;
        let margin = c.value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            sweep.model.clone(),
            c.method.clone(),
            margin,
            format!("{:.4}", a.mean * 100.0),
            format!("{:.4}", a.std * 100.0),
            a.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `fig6.csv`: accuracy against the scale, per method.
pub fn write_fig6(path: &Path, sweep: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "method", "scale", "accuracy_mean", "accuracy_std", "all_finite"])?;
    for c in &sweep.cells {
        let a = c.report.test_accuracy;
        w.write_record([
            sweep.model.clone(),
            c.method.clone(),
            c.value.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.4}", a.mean * 100.0),
            format!("{:.4}", a.std * 100.0),
            c.report.all_finite().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `sweep.json`, one directory per cell, `timing.json`, and
/// `table6.csv` or `fig6.csv` depending on the sweep kind.
pub fn write_sweep(dir: &Path, sweep: &SweepReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("sweep.json"), sweep)?;
    let timing: Vec<Timing> = sweep
        .cells
        .iter()
        .map(|c| Timing { name: &c.report.config.name, wall_clock_seconds: c.report.wall_clock_seconds })
        .collect();
    write_json(&dir.join("timing.json"), &timing)?;
    for c in &sweep.cells {
        let cell_dir = dir.join(&c.report.config.name);
        fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
        write_json(&cell_dir.join("report.json"), &c.report)?;
        write_json(&cell_dir.join("config.json"), &c.report.config)?;
    }
    match sweep.kind {
        SweepKind::Margin => write_table6(&dir.join("table6.csv"), sweep),
        SweepKind::Scale => write_fig6(&dir.join("fig6.csv"), sweep),
    }
}
