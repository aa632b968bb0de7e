//! Bias recognition and analysis tools: per-factor Jensen–Shannon divergence
//! of wrong predictions, probability sharpness of temperature softening versus
//! adaptive margins, and 2-D feature embeddings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColoredDataset, RGB_LEN};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::loss::{cosine_logits, kd_softened_probs, stable_softmax, DEFAULT_NORM_EPSILON};
use crate::margin::BiasCounts;
use crate::model::{forward, Params};
use crate::train::Prediction;

const DIST_TOL: f64 = 1e-9;
const EMBED_CHUNK: usize = 256;

pub const KD_TEMPERATURES: [f64; 3] = [0.1, 1.0, 10.0];

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotADistribution(format!("{name} has entry {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DIST_TOL {
        return Err(Error::NotADistribution(format!("{name} sums to {total}")));
    }
    Ok(())
}

fn kl_to_mid(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (2.0 * a / (a + b)).log2()).sum()
}

/// Jensen–Shannon divergence in bits, `½KL(p‖m) + ½KL(q‖m)` with
/// `m = (p + q) / 2`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::NotADistribution(format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    // Summing the two halves in a fixed order keeps jsd(p, q) == jsd(q, p).
    let (a, b) = (kl_to_mid(p, q), kl_to_mid(q, p));
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok((0.5 * (lo + hi)).clamp(0.0, 1.0))
}

/// What stands for the model output of the wrong predictions of a factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDistribution {
    /// Average softmax vector of the wrong samples.
    #[default]
    MeanScores,
    /// Normalized histogram of their predicted labels.
    ArgmaxHistogram,
}

impl std::str::FromStr for ErrorDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-scores" => Ok(ErrorDistribution::MeanScores),
            "argmax-histogram" => Ok(ErrorDistribution::ArgmaxHistogram),
            other => Err(Error::ConfigInvalid(format!("unknown error distribution {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorJsd {
    pub factor: usize,
    pub wrong: usize,
    /// `None` when the factor has no wrong predictions.
    pub jsd_bits: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsdSummary {
    pub distribution: ErrorDistribution,
    pub factors: Vec<FactorJsd>,
}

impl JsdSummary {
    /// Mean over factors that have wrong predictions.
    pub fn mean(&self) -> Option<f64> {
        let present: Vec<f64> = self.factors.iter().filter_map(|f| f.jsd_bits).collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// JSD between the training label distribution of factor `k` and the output
/// distribution of the wrong predictions carrying that factor.
pub fn factor_jsd(
    predictions: &[Prediction],
    counts: &BiasCounts,
    k: usize,
    distribution: ErrorDistribution,
) -> Result<(usize, f64)> {
    let omega = counts.omega();
    let p = counts.conditional(k).ok_or(Error::EmptyErrorSet(k))?;
    let mut q = vec![0.0; omega];
    let mut wrong = 0usize;
    for pred in predictions.iter().filter(|p| !p.correct() && usize::from(p.bias_factor) == k) {
        match distribution {
            ErrorDistribution::MeanScores => {
                if pred.probs.len() != omega {
                    return Err(Error::ShapeMismatch(format!("{} scores for {omega} classes", pred.probs.len())));
                }
                q.iter_mut().zip(&pred.probs).for_each(|(a, b)| *a += b);
            }
            ErrorDistribution::ArgmaxHistogram => {
                let c = usize::from(pred.predicted);
                if c >= omega {
                    return Err(Error::IndexOutOfRange { what: "predicted label", value: c, limit: omega });
                }
                q[c] += 1.0;
            }
        }
        wrong += 1;
    }
    if wrong == 0 {
        return Err(Error::EmptyErrorSet(k));
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    Ok((wrong, jsd(&p, &q)?))
}

/// Per-factor JSD over the wrong predictions. Factors without wrong
/// predictions, or never seen in training, are reported as absent.
pub fn bias_jsd_report(
    predictions: &[Prediction],
    counts: &BiasCounts,
    distribution: ErrorDistribution,
) -> Result<JsdSummary> {
    let mut factors = Vec::with_capacity(counts.factors());
    for k in 0..counts.factors() {
        let wrong = predictions.iter().filter(|p| !p.correct() && usize::from(p.bias_factor) == k).count();
        let jsd_bits = match factor_jsd(predictions, counts, k, distribution) {
            Ok((_, v)) => Some(v),
            Err(Error::EmptyErrorSet(_)) => None,
            Err(e) => return Err(e),
        };
        factors.push(FactorJsd { factor: k, wrong, jsd_bits });
    }
    Ok(JsdSummary { distribution, factors })
}

pub fn write_jsd_csv(path: &Path, summary: &JsdSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["factor", "n_wrong", "jsd_bits"])?;
    for f in &summary.factors {
        let v = f.jsd_bits.map(|v| format!("{v:.9}")).unwrap_or_default();
        w.write_record([f.factor.to_string(), f.wrong.to_string(), v])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessProfile {
    pub method: String,
    /// Per-sample probabilities sorted ascending, averaged over samples.
    pub sorted: Vec<f64>,
    pub mean: f64,
    /// Mean per-sample entropy in bits.
    pub entropy_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessTable {
    pub scale: f64,
    pub profiles: Vec<SharpnessProfile>,
}

impl SharpnessTable {
    pub fn profile(&self, method: &str) -> Option<&SharpnessProfile> {
        self.profiles.iter().find(|p| p.method == method)
    }
}

pub fn kd_method_name(t: f64) -> String {
    format!("kd-t{t}")
}

fn profile(method: String, rows: &[Vec<f64>]) -> SharpnessProfile {
    let omega = rows[0].len();
    let mut sorted = vec![0.0; omega];
    let mut entropy = 0.0;
    for p in rows {
        let mut s = p.clone();
        s.sort_by(f64::total_cmp);
        sorted.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        entropy += entropy_bits(p);
    }
    let n = rows.len() as f64;
    sorted.iter_mut().for_each(|v| *v /= n);
    let mean = sorted.iter().sum::<f64>() / omega as f64;
    SharpnessProfile { method, sorted, mean, entropy_bits: entropy / n }
}

/// Sorted probability profiles of knowledge-distillation softening of the
/// logits `s cos θ` at each temperature, next to the adaptive-margin
/// probabilities `softmax(s (cos θ - m))` using each sample's margin row.
pub fn sharpness_compare(
    cosines: &[Vec<f64>],
    margin_rows: &[Vec<f64>],
    scale: f64,
    temperatures: &[f64],
) -> Result<SharpnessTable> {
    if cosines.is_empty() {
        return Err(Error::ShapeMismatch("no samples".into()));
    }
    if cosines.len() != margin_rows.len() {
        return Err(Error::ShapeMismatch(format!("{} samples, {} margin rows", cosines.len(), margin_rows.len())));
    }
    let omega = cosines[0].len();
    if omega < 2 {
        return Err(Error::BadDimensions(format!("{omega} classes")));
    }
    for (c, m) in cosines.iter().zip(margin_rows) {
        if c.len() != omega {
            return Err(Error::ShapeMismatch(format!("cosine row of length {}", c.len())));
        }
        if m.len() != omega {
            return Err(Error::RowLengthMismatch { found: m.len(), expected: omega });
        }
    }
    let mut profiles = Vec::with_capacity(temperatures.len() + 1);
    for &t in temperatures {
        let rows = cosines
            .iter()
            .map(|c| kd_softened_probs(&c.iter().map(|v| scale * v).collect::<Vec<_>>(), t))
            .collect::<Result<Vec<_>>>()?;
        profiles.push(profile(kd_method_name(t), &rows));
    }
    let rows: Vec<Vec<f64>> = cosines
        .iter()
        .zip(margin_rows)
        .map(|(c, m)| stable_softmax(&c.iter().zip(m).map(|(c, m)| scale * (c - m)).collect::<Vec<_>>()))
        .collect();
    profiles.push(profile("mmdb".into(), &rows));
    Ok(SharpnessTable { scale, profiles })
}

/// Long format: one row per (method, rank).
pub fn write_sharpness_csv(path: &Path, table: &SharpnessTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "rank", "probability", "mean", "entropy_bits"])?;
    for p in &table.profiles {
        for (rank, v) in p.sorted.iter().enumerate() {
            w.write_record([
                p.method.clone(),
                rank.to_string(),
                format!("{v:.9e}"),
                format!("{:.9}", p.mean),
                format!("{:.9}", p.entropy_bits),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Top two principal components of the centered features.
    Linear2d,
    /// Cosines to the head weights of two classes.
    CosineAngle { first: usize, second: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub x: f64,
    pub y: f64,
    pub label: u8,
    pub bias_factor: u8,
}

/// Feature rows with their `(label, bias_factor)` tags.
pub type TaggedFeatures = (Vec<Vec<f64>>, Vec<(u8, u8)>);

/// Features of every sample of `data`, optionally restricted to one bias
/// factor, in dataset order.
pub fn extract_features(
    params: &Params,
    data: &ColoredDataset,
    factor: Option<u8>,
    exec: Execution,
) -> Result<TaggedFeatures> {
    let indices: Vec<usize> = (0..data.len()).filter(|&i| factor.is_none_or(|k| data.bias_factors()[i] == k)).collect();
    let parts = exec.map_chunks(&indices, EMBED_CHUNK, |chunk| {
        let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.get(i).to_f64()).collect();
        debug_assert!(xs.iter().all(|x| x.len() == RGB_LEN));
        forward(params, &xs).map(|(f, _)| f)
    });
    let mut features = Vec::with_capacity(indices.len());
    for p in parts {
        features.extend(p?);
    }
    let tags = indices.iter().map(|&i| (data.labels()[i], data.bias_factors()[i])).collect();
    Ok((features, tags))
}

/// Projects features to 2-D. `tags` holds `(label, bias_factor)` per row.
pub fn project(
    features: &[Vec<f64>],
    tags: &[(u8, u8)],
    head: &[f64],
    projection: Projection,
) -> Result<Vec<EmbeddingPoint>> {
    let n = features.len();
    if n < 3 {
        return Err(Error::TooFewSamples(n));
    }
    if tags.len() != n {
        return Err(Error::ShapeMismatch(format!("{} tags for {n} samples", tags.len())));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::ShapeMismatch("ragged feature rows".into()));
    }
    let coords: Vec<(f64, f64)> = match projection {
        Projection::Linear2d => pca_2d(features)?,
        Projection::CosineAngle { first, second } => {
            let omega = head.len() / d.max(1);
            for c in [first, second] {
                if c >= omega {
                    return Err(Error::IndexOutOfRange { what: "class", value: c, limit: omega });
                }
            }
            features
                .iter()
                .map(|f| {
                    let cos = cosine_logits(head, f, DEFAULT_NORM_EPSILON).unwrap_or_else(|_| vec![0.0; omega]);
                    (cos[first], cos[second])
                })
                .collect()
        }
    };
    Ok(coords
        .into_iter()
        .zip(tags)
        .map(|((x, y), &(label, bias_factor))| EmbeddingPoint { x, y, label, bias_factor })
        .collect())
}

fn pca_2d(features: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let n = features.len();
    let d = features[0].len();
    if d < 2 {
        return Err(Error::BadDimensions(format!("feature dimension {d}")));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::with_capacity(2);
    for &k in &order[..2] {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Eigenvector signs are arbitrary; pin the largest component positive.
        let lead = v.iamax();
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        axes.push(v);
    }
    let px = &x * &axes[0];
    let py = &x * &axes[1];
    Ok((0..n).map(|i| (px[i], py[i])).collect())
}

/// Features of `data` projected to 2-D.
pub fn export_embeddings(
    params: &Params,
    data: &ColoredDataset,
    factor: Option<u8>,
    projection: Projection,
    exec: Execution,
) -> Result<Vec<EmbeddingPoint>> {
    let (features, tags) = extract_features(params, data, factor, exec)?;
    project(&features, &tags, params.head(), projection)
}

/// Between-class over within-class scatter of labeled 2-D points.
pub fn class_separation(points: &[EmbeddingPoint]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (mx / n, my / n);
    let mut sums = [(0.0f64, 0.0f64, 0usize); 256];
    for p in points {
        let s = &mut sums[usize::from(p.label)];
        s.0 += p.x;
        s.1 += p.y;
        s.2 += 1;
    }
    let centers: Vec<(f64, f64)> =
        sums.iter().map(|&(x, y, c)| if c > 0 { (x / c as f64, y / c as f64) } else { (0.0, 0.0) }).collect();
    let between: f64 = sums
        .iter()
        .zip(&centers)
        .filter(|((_, _, c), _)| *c > 0)
        .map(|(&(_, _, c), &(cx, cy))| c as f64 * ((cx - mx).powi(2) + (cy - my).powi(2)))
        .sum();
    let within: f64 = points
        .iter()
        .map(|p| {
            let (cx, cy) = centers[usize::from(p.label)];
            (p.x - cx).powi(2) + (p.y - cy).powi(2)
        })
        .sum();
    if within > 0.0 {
        between / within
    } else {
        f64::INFINITY
    }
}

pub fn write_embedding_csv(path: &Path, points: &[EmbeddingPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "label", "bias_factor"])?;
    for p in points {
        w.write_record([
            format!("{:.9e}", p.x),
            format!("{:.9e}", p.y),
            p.label.to_string(),
            p.bias_factor.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SVG_SIZE: f64 = 480.0;
const SVG_PAD: f64 = 40.0;
const LABEL_COLORS: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#, SVG_SIZE / 2.0);
}

/// Scatter plot of embedding points colored by label.
pub fn embedding_svg(points: &[EmbeddingPoint], title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let bounds = |f: fn(&EmbeddingPoint) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let ((x0, x1), (y0, y1)) = (bounds(|p| p.x), bounds(|p| p.y));
    let span = SVG_SIZE - 2.0 * SVG_PAD;
    for p in points {
        let cx = SVG_PAD + (p.x - x0) / (x1 - x0) * span;
        let cy = SVG_SIZE - SVG_PAD - (p.y - y0) / (y1 - y0) * span;
        let color = LABEL_COLORS[usize::from(p.label) % LABEL_COLORS.len()];
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#);
    }
    out.push_str("</svg>\n");
    out
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box plot of per-factor JSD values on a `[0, 1]` bit axis with the 0.5
/// reference line.
pub fn jsd_svg(summary: &JsdSummary, title: &str) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let span = SVG_SIZE - 2.0 * SVG_PAD;
    let y = |v: f64| SVG_SIZE - SVG_PAD - v * span;
    let _ = writeln!(
        out,
        r#"<line x1="{SVG_PAD}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="red" stroke-dasharray="4"/>"#,
        SVG_SIZE - SVG_PAD,
        y(0.5),
        y(0.5)
    );
    let mut values: Vec<f64> = summary.factors.iter().filter_map(|f| f.jsd_bits).collect();
    values.sort_by(f64::total_cmp);
    if !values.is_empty() {
        let cx = SVG_SIZE / 2.0;
        let (q1, q2, q3) = (quantile(&values, 0.25), quantile(&values, 0.5), quantile(&values, 0.75));
        let (lo, hi) = (values[0], values[values.len() - 1]);
        let _ = writeln!(out, r#"<line x1="{cx}" x2="{cx}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#, y(lo), y(hi));
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{:.2}" width="80" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            cx - 40.0,
            y(q3),
            y(q1) - y(q3)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - 40.0,
            cx + 40.0,
            y(q2),
            y(q2)
        );
        for v in &values {
            let _ = writeln!(out, r#"<circle cx="{}" cy="{:.2}" r="3" fill="black"/>"#, cx + 60.0, y(*v));
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: u8, bias_factor: u8, predicted: u8, probs: Vec<f64>) -> Prediction {
        Prediction { label, bias_factor, predicted, probs }
    }

    #[test]
    fn jsd_reference_values() {
        assert_eq!(jsd(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-9);
        // ½ (0.5 log2(0.5/0.75) + 0.5 log2(0.5/0.25)) + ½ log2(1/0.75)
        let expected = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5) + 0.5 * (1.0f64 / 0.75).log2();
        let v = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn jsd_rejects_invalid_inputs() {
        assert!(matches!(jsd(&[0.5, 0.6], &[0.5, 0.5]), Err(Error::NotADistribution(_))));
        assert!(matches!(jsd(&[1.5, -0.5], &[0.5, 0.5]), Err(Error::NotADistribution(_))));
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(Error::NotADistribution(_))));
    }

    #[test]
    fn uniform_against_one_hot() {
        let n = 10.0f64;
        let mut onehot = vec![0.0; 10];
        onehot[0] = 1.0;
        let m0 = (1.0 + 1.0 / n) / 2.0;
        let expected = 0.5 * (1.0 / m0).log2() + 0.5 * ((1.0 / n) * (1.0 / n / m0).log2() + (n - 1.0) / n);
        let v = jsd(&[0.1; 10], &onehot).unwrap();
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        assert!((v - 0.7583).abs() < 1e-4);
    }

    #[test]
    fn report_matches_conditional_and_marks_absent_factors() {
        let counts = BiasCounts::from_rows(vec![vec![3, 1], vec![0, 4], vec![2, 2]]).unwrap();
        let preds = vec![
            pred(1, 0, 0, vec![0.75, 0.25]),
            pred(0, 0, 1, vec![0.75, 0.25]),
            pred(1, 1, 1, vec![0.1, 0.9]),
            pred(0, 2, 1, vec![0.2, 0.8]),
        ];
        let r = bias_jsd_report(&preds, &counts, ErrorDistribution::MeanScores).unwrap();
        assert_eq!(r.factors[0].wrong, 2);
        assert!(r.factors[0].jsd_bits.unwrap().abs() < 1e-12);
        assert_eq!(r.factors[1].jsd_bits, None);
        assert!(r.factors[2].jsd_bits.unwrap() > 0.0);
        assert!(matches!(factor_jsd(&preds, &counts, 1, ErrorDistribution::MeanScores), Err(Error::EmptyErrorSet(1))));
        let hist = bias_jsd_report(&preds, &counts, ErrorDistribution::ArgmaxHistogram).unwrap();
        // Wrong argmaxes of factor 0 are {0, 1}: uniform against (0.75, 0.25).
        let expected = jsd(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        assert!((hist.factors[0].jsd_bits.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sharpness_profiles_are_sorted_and_normalized() {
        let cos = vec![vec![0.9, -0.2, 0.1, 0.3], vec![0.1, 0.2, -0.5, 0.0]];
        let rows = vec![vec![0.1, 0.9, 0.8, 0.7]; 2];
        let t = sharpness_compare(&cos, &rows, 16.0, &KD_TEMPERATURES).unwrap();
        assert_eq!(t.profiles.len(), 4);
        for p in &t.profiles {
            assert!(p.sorted.windows(2).all(|w| w[0] <= w[1]));
            assert!((p.mean - 0.25).abs() < 1e-12);
        }
        let e = |m: &str| t.profile(m).unwrap().entropy_bits;
        assert!(e("kd-t10") > e("kd-t1") && e("kd-t1") > e("kd-t0.1"));
    }

    #[test]
    fn pca_is_centered_and_deterministic() {
        let features: Vec<Vec<f64>> =
            (0..20).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 3.0 - i as f64 * 0.5, 1.0]).collect();
        let tags: Vec<(u8, u8)> = (0..20).map(|i| ((i % 3) as u8, 0)).collect();
        let a = project(&features, &tags, &[], Projection::Linear2d).unwrap();
        let b = project(&features, &tags, &[], Projection::Linear2d).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        assert!((a.iter().map(|p| p.x).sum::<f64>() / n).abs() < 1e-9);
        assert!((a.iter().map(|p| p.y).sum::<f64>() / n).abs() < 1e-9);
        let same = project(&vec![vec![1.0, 2.0]; 3], &tags[..3], &[], Projection::Linear2d).unwrap();
        assert!(same.windows(2).all(|w| w[0].x == w[1].x && w[0].y == w[1].y));
        assert!(matches!(project(&features[..2], &tags[..2], &[], Projection::Linear2d), Err(Error::TooFewSamples(2))));
    }

    #[test]
    fn cosine_projection_reads_head_rows() {
        let head = [1.0, 0.0, 0.0, 1.0];
        let features = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]];
        let tags = vec![(0, 0), (1, 0), (0, 1)];
        let p = project(&features, &tags, &head, Projection::CosineAngle { first: 0, second: 1 }).unwrap();
        assert!((p[0].x - 1.0).abs() < 1e-9 && p[0].y.abs() < 1e-9);
        assert!((p[2].x - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(project(&features, &tags, &head, Projection::CosineAngle { first: 0, second: 5 }).is_err());
    }

    #[test]
    fn separation_prefers_tight_clusters() {
        let cluster = |spread: f64| -> Vec<EmbeddingPoint> {
            (0..30)
                .map(|i| {
                    let label = (i % 3) as u8;
                    let jitter = ((i * 7) % 5) as f64 - 2.0;
                    EmbeddingPoint {
                        x: label as f64 * 10.0 + spread * jitter,
                        y: spread * jitter,
                        label,
                        bias_factor: 0,
                    }
                })
                .collect()
        };
        assert!(class_separation(&cluster(0.5)) > class_separation(&cluster(3.0)));
    }

    #[test]
    fn svg_outputs_are_well_formed() {
        let pts = vec![EmbeddingPoint { x: 0.0, y: 1.0, label: 3, bias_factor: 0 }; 3];
        let s = embedding_svg(&pts, "t");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        let summary = JsdSummary {
            distribution: ErrorDistribution::MeanScores,
            factors: vec![FactorJsd { factor: 0, wrong: 1, jsd_bits: Some(0.2) }],
        };
        assert!(jsd_svg(&summary, "j").contains("<rect"));
    }
}
