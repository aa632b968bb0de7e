//! Forward and analytic backward passes for the classification losses.
//!
//! All cosine losses share one kernel: logits `z_j = s * (cos θ_j - μ_j)`
//! followed by cross entropy, where the per-class offset `μ` is
//!
//! * zero for the normalized softmax loss (NSL),
//! * the fixed margin on the target class only for LMCL,
//! * the adaptive margin row of the sample's bias factor for MMDB.
//!
//! Every softmax is stabilized by max-logit subtraction, so no kernel produces
//! NaN or Inf for finite inputs regardless of the scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;
pub const DEFAULT_SCALE: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Plain cross entropy over `W x` (no bias vector).
    Softmax,
    Nsl,
    Lmcl,
    Mmdb,
}

impl LossKind {
    pub fn is_cosine(self) -> bool {
        self != LossKind::Softmax
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::Nsl => "nsl",
            LossKind::Lmcl => "lmcl",
            LossKind::Mmdb => "mmdb",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "baseline" => Ok(LossKind::Softmax),
            "nsl" => Ok(LossKind::Nsl),
            "lmcl" => Ok(LossKind::Lmcl),
            "mmdb" => Ok(LossKind::Mmdb),
            other => Err(Error::ConfigInvalid(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Scale `s` on cosine logits; ignored by `Softmax`.
    pub scale: f64,
    /// Fixed cosine margin; used by `Lmcl` only.
    pub fixed_margin: f64,
    pub norm_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Softmax,
            scale: DEFAULT_SCALE,
            fixed_margin: 0.0,
            norm_epsilon: DEFAULT_NORM_EPSILON,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig { kind, ..LossConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_cosine() && !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::ConfigInvalid(format!("scale must be positive, got {}", self.scale)));
        }
        if !(-1.0..=1.0).contains(&self.fixed_margin) {
            return Err(Error::ConfigInvalid(format!("fixed margin {} outside [-1, 1]", self.fixed_margin)));
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::ConfigInvalid("norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value with gradients for the feature vector and the head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Training-time probabilities (with margins applied, if any).
    pub probs: Vec<f64>,
    pub dl_dx: Vec<f64>,
    /// Row-major `|Ω| × D`.
    pub dl_dw: Vec<f64>,
}

fn log_sum_exp(z: &[f64]) -> (f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    (max, max + sum.ln())
}

/// Softmax with max subtraction.
pub fn stable_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Cross entropy `-Σ y_i log p_i` with `p = softmax(z)`, and its gradient
/// `(Σ_j y_j) p - y` with respect to the logits.
pub fn softmax_loss(z: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(z.len(), y.len());
    let (_, lse) = log_sum_exp(z);
    let loss: f64 = z.iter().zip(y).filter(|(_, &t)| t != 0.0).map(|(&zi, &t)| -t * (zi - lse)).sum();
    let total: f64 = y.iter().sum();
    let grad = z.iter().zip(y).map(|(&zi, &t)| total * (zi - lse).exp() - t).collect();
    (loss, grad)
}

fn check_shapes(w: &[f64], x: &[f64], omega: usize) -> Result<()> {
    if x.is_empty() || w.len() != omega * x.len() {
        return Err(Error::ShapeMismatch(format!(
            "weights of length {} do not form {omega} rows of dimension {}",
            w.len(),
            x.len()
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized geometry of one feature vector against every class weight.
struct Cosines {
    raw: Vec<f64>,
    dots: Vec<f64>,
    x_norm: f64,
    w_norms: Vec<f64>,
    eps: f64,
}

impl Cosines {
    fn compute(w: &[f64], x: &[f64], eps: f64) -> Result<Self> {
        let d = x.len();
        let x_norm = norm(x);
        if !(x_norm > eps) {
            return Err(Error::DegenerateInput(format!("feature norm {x_norm:e} <= {eps:e}")));
        }
        let mut dots = Vec::with_capacity(w.len() / d);
        let mut w_norms = Vec::with_capacity(w.len() / d);
        let mut raw = Vec::with_capacity(w.len() / d);
        for (i, row) in w.chunks_exact(d).enumerate() {
            let wn = norm(row);
            if !(wn > eps) {
                return Err(Error::DegenerateInput(format!("weight row {i} norm {wn:e} <= {eps:e}")));
            }
            let dp = dot(row, x);
            raw.push(dp / ((wn + eps) * (x_norm + eps)));
            dots.push(dp);
            w_norms.push(wn);
        }
        Ok(Cosines { raw, dots, x_norm, w_norms, eps })
    }

    fn clamped(&self) -> Vec<f64> {
        self.raw.iter().map(|c| c.clamp(-1.0, 1.0)).collect()
    }

    /// Pulls `dL/dcos` back to `dL/dx` and `dL/dW`.
    fn backward(&self, w: &[f64], x: &[f64], dcos: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = x.len();
        let a = self.x_norm + self.eps;
        let mut dx = vec![0.0; d];
        let mut dw = vec![0.0; w.len()];
        let mut radial = 0.0;
        for (j, row) in w.chunks_exact(d).enumerate() {
            let g = dcos[j];
            if g == 0.0 {
                continue;
            }
            let b = self.w_norms[j] + self.eps;
            // d cos / dx = w / (a b) - dot / (a^2 b) * x / |x|
            let cx = g / (a * b);
            dx.iter_mut().zip(row).for_each(|(o, &wv)| *o += cx * wv);
            radial += g * self.dots[j] / (a * a * b);
            // d cos / dw = x / (a b) - dot / (a b^2) * w / |w|
            let cw = g * self.dots[j] / (a * b * b * self.w_norms[j]);
            for ((o, &xv), &wv) in dw[j * d..(j + 1) * d].iter_mut().zip(x).zip(row) {
                *o += cx * xv - cw * wv;
            }
        }
        let rx = radial / self.x_norm;
        dx.iter_mut().zip(x).for_each(|(o, &xv)| *o -= rx * xv);
        (dx, dw)
    }
}

/// `cos θ_i = W_i·x / ((|W_i| + ε)(|x| + ε))`, clamped to `[-1, 1]`.
pub fn cosine_logits(w: &[f64], x: &[f64], norm_epsilon: f64) -> Result<Vec<f64>> {
    if x.is_empty() || !w.len().is_multiple_of(x.len()) {
        return Err(Error::ShapeMismatch(format!("{} weights for dimension {}", w.len(), x.len())));
    }
    Ok(Cosines::compute(w, x, norm_epsilon)?.clamped())
}

/// Shared kernel: cross entropy over `s (cos θ_j - offsets_j)`.
pub fn offset_cosine_loss(w: &[f64], x: &[f64], y: &[f64], s: f64, offsets: &[f64], eps: f64) -> Result<LossGrad> {
    let omega = y.len();
    check_shapes(w, x, omega)?;
    if offsets.len() != omega {
        return Err(Error::RowLengthMismatch { found: offsets.len(), expected: omega });
    }
    let geo = Cosines::compute(w, x, eps)?;
    let z: Vec<f64> = geo.clamped().iter().zip(offsets).map(|(c, m)| s * (c - m)).collect();
    let (loss, dz) = softmax_loss(&z, y);
    let dcos: Vec<f64> = dz.iter().map(|g| g * s).collect();
    let (dl_dx, dl_dw) = geo.backward(w, x, &dcos);
    Ok(LossGrad { loss, probs: stable_softmax(&z), dl_dx, dl_dw })
}

/// Plain softmax cross entropy over `W x`.
pub fn linear_softmax_loss(w: &[f64], x: &[f64], y: &[f64]) -> Result<LossGrad> {
    check_shapes(w, x, y.len())?;
    let d = x.len();
    let z: Vec<f64> = w.chunks_exact(d).map(|row| dot(row, x)).collect();
    let (loss, dz) = softmax_loss(&z, y);
    let mut dl_dx = vec![0.0; d];
    let mut dl_dw = vec![0.0; w.len()];
    for (j, row) in w.chunks_exact(d).enumerate() {
        let g = dz[j];
        dl_dx.iter_mut().zip(row).for_each(|(o, &wv)| *o += g * wv);
        dl_dw[j * d..(j + 1) * d].iter_mut().zip(x).for_each(|(o, &xv)| *o = g * xv);
    }
    Ok(LossGrad { loss, probs: stable_softmax(&z), dl_dx, dl_dw })
}

pub fn nsl_loss(w: &[f64], x: &[f64], y: &[f64], s: f64) -> Result<LossGrad> {
    offset_cosine_loss(w, x, y, s, &vec![0.0; y.len()], DEFAULT_NORM_EPSILON)
}

fn single_target(y: &[f64]) -> Result<usize> {
    let mut positives = y.iter().enumerate().filter(|(_, &v)| v > 0.0);
    match (positives.next(), positives.next()) {
        (Some((i, _)), None) => Ok(i),
        (None, _) => Err(Error::ConfigInvalid("target vector has no positive entry".into())),
        _ => Err(Error::MultiLabelUnsupported),
    }
}

/// Fixed margin `m` subtracted from the target class cosine only.
pub fn lmcl_loss(w: &[f64], x: &[f64], y: &[f64], s: f64, m: f64) -> Result<LossGrad> {
    let target = single_target(y)?;
    let mut offsets = vec![0.0; y.len()];
    offsets[target] = m;
    offset_cosine_loss(w, x, y, s, &offsets, DEFAULT_NORM_EPSILON)
}

/// Per-class margins from the sample's bias-factor row, applied to every
/// class logit.
pub fn mmdb_loss(w: &[f64], x: &[f64], y: &[f64], s: f64, margin_row: &[f64]) -> Result<LossGrad> {
    if margin_row.iter().any(|m| !m.is_finite()) {
        return Err(Error::ConfigInvalid("margin row has non-finite entries".into()));
    }
    offset_cosine_loss(w, x, y, s, margin_row, DEFAULT_NORM_EPSILON)
}

/// `(dL/dx, dL/dW)` of [`mmdb_loss`].
pub fn mmdb_backward(w: &[f64], x: &[f64], y: &[f64], s: f64, margin_row: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = mmdb_loss(w, x, y, s, margin_row)?;
    Ok((g.dl_dx, g.dl_dw))
}

/// Dispatches on the configured loss kind. `margin_row` is required for MMDB.
pub fn head_loss(cfg: &LossConfig, w: &[f64], x: &[f64], y: &[f64], margin_row: Option<&[f64]>) -> Result<LossGrad> {
    let eps = cfg.norm_epsilon;
    match cfg.kind {
        LossKind::Softmax => linear_softmax_loss(w, x, y),
        LossKind::Nsl => offset_cosine_loss(w, x, y, cfg.scale, &vec![0.0; y.len()], eps),
        LossKind::Lmcl => {
            let target = single_target(y)?;
            let mut offsets = vec![0.0; y.len()];
            offsets[target] = cfg.fixed_margin;
            offset_cosine_loss(w, x, y, cfg.scale, &offsets, eps)
        }
        LossKind::Mmdb => {
            let row = margin_row.ok_or(Error::MissingMarginTable)?;
            offset_cosine_loss(w, x, y, cfg.scale, row, eps)
        }
    }
}

/// Inference scores: `W x` for softmax, `s cos θ` for cosine heads. Margins
/// are a training-time device and never enter prediction.
pub fn head_scores(cfg: &LossConfig, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if cfg.kind.is_cosine() {
        Ok(cosine_logits(w, x, cfg.norm_epsilon)?.into_iter().map(|c| cfg.scale * c).collect())
    } else {
        if x.is_empty() || !w.len().is_multiple_of(x.len()) {
            return Err(Error::ShapeMismatch(format!("{} weights for dimension {}", w.len(), x.len())));
        }
        Ok(w.chunks_exact(x.len()).map(|row| dot(row, x)).collect())
    }
}

/// Probabilities `softmax(s (cos θ - m))`.
pub fn mmdb_probs(w: &[f64], x: &[f64], s: f64, margin_row: &[f64]) -> Result<Vec<f64>> {
    check_shapes(w, x, margin_row.len())?;
    let cos = cosine_logits(w, x, DEFAULT_NORM_EPSILON)?;
    let z: Vec<f64> = cos.iter().zip(margin_row).map(|(c, m)| s * (c - m)).collect();
    Ok(stable_softmax(&z))
}

/// The same probabilities written as a per-class temperature softmax:
/// `p_i ∝ exp(W̃_i·x̃) / T_i` with `T_i = exp(s m_i)`, where `W̃_i` and `x̃`
/// are the unit vectors scaled by `√s` so that `W̃_i·x̃ = s cos θ_i`.
pub fn temperature_probs(w: &[f64], x: &[f64], s: f64, margin_row: &[f64]) -> Result<Vec<f64>> {
    let omega = margin_row.len();
    check_shapes(w, x, omega)?;
    let d = x.len();
    let eps = DEFAULT_NORM_EPSILON;
    let x_norm = norm(x);
    if !(x_norm > eps) {
        return Err(Error::DegenerateInput(format!("feature norm {x_norm:e} <= {eps:e}")));
    }
    let root = s.sqrt();
    let x_scaled: Vec<f64> = x.iter().map(|v| root * v / (x_norm + eps)).collect();
    let mut activations = Vec::with_capacity(omega);
    for (i, row) in w.chunks_exact(d).enumerate() {
        let wn = norm(row);
        if !(wn > eps) {
            return Err(Error::DegenerateInput(format!("weight row {i} norm {wn:e} <= {eps:e}")));
        }
        let scaled: Vec<f64> = row.iter().map(|v| root * v / (wn + eps)).collect();
        activations.push(dot(&scaled, &x_scaled).clamp(-s, s));
    }
    let temperatures: Vec<f64> = margin_row.iter().map(|m| (s * m).exp()).collect();
    let max = activations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = activations.iter().zip(&temperatures).map(|(a, t)| (a - max).exp() / t).collect();
    let sum: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|v| v / sum).collect())
}

/// Knowledge-distillation softening `softmax(z / T)`.
pub fn kd_softened_probs(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    let z: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    Ok(stable_softmax(&z))
}

/// Probability of the target class in the ideal configuration: target angle
/// 0, every other class at 180 degrees.
pub fn ideal_probability(margin_row: &[f64], target: usize, s: f64) -> f64 {
    let mi = margin_row[target];
    // exp(s(1 - m_i)) / (Σ_{j≠i} exp(s(-1 - m_j)) + exp(s(1 - m_i)))
    let rest: f64 =
        margin_row.iter().enumerate().filter(|&(j, _)| j != target).map(|(_, &mj)| (s * (mi - mj - 2.0)).exp()).sum();
    1.0 / (1.0 + rest)
}

/// Lower bound on the scale for the target class to reach probability
/// `p_target`:
///
/// ```text
/// s >= ln(1/P - 1) / (m_i + Σ_{j≠i} m_j / (|Ω| - 1) - 2)
/// ```
pub fn scale_lower_bound(margin_row: &[f64], target: usize, p_target: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::InvalidProbability(p_target));
    }
    let omega = margin_row.len();
    if omega < 2 || target >= omega {
        return Err(Error::BadDimensions(format!("target {target} with {omega} classes")));
    }
    let others: f64 = margin_row.iter().enumerate().filter(|&(j, _)| j != target).map(|(_, m)| m).sum();
    let denom = margin_row[target] + others / (omega - 1) as f64 - 2.0;
    if !(denom < 0.0) {
        return Err(Error::DegenerateDenominator(denom));
    }
    Ok((1.0 / p_target - 1.0).ln() / denom)
}
