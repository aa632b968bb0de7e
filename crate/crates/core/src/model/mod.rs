//! Feature extractors with hand-written backpropagation, plus the bias-free
//! classifier head `W` (`|Ω| × D`) consumed by the losses.
//!
//! Parameters live in one flat `f64` buffer so optimizers, checkpoints and
//! finite-difference checks all address them uniformly. Dense layers are
//! stored input-major (`in × out`): a nonzero input then touches one
//! contiguous row, which lets the first layer skip the black background of
//! colored digits.

mod lenet;
mod mlp;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NUM_CLASSES, RGB_LEN};
use crate::error::{Error, Result};

pub use lenet::LeNetLayout;
pub use mlp::MlpLayout;

const INIT_STREAM: u64 = 10;
const CHECKPOINT_MAGIC: &[u8; 4] = b"MBCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lenet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Lenet => "lenet",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "lenet" => Ok(ModelKind::Lenet),
            other => Err(Error::ConfigInvalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Feature dimension `D` fed to the head.
    pub feature_dim: usize,
    /// MLP hidden width `H`; unused by LeNet.
    pub hidden: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn mlp() -> Self {
        ModelSpec { kind: ModelKind::Mlp, feature_dim: 64, hidden: 256, classes: NUM_CLASSES }
    }

    pub fn lenet() -> Self {
        ModelSpec { kind: ModelKind::Lenet, feature_dim: 64, hidden: 0, classes: NUM_CLASSES }
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Mlp => Self::mlp(),
            ModelKind::Lenet => Self::lenet(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return Err(Error::BadDimensions(format!("feature dimension {} < 2", self.feature_dim)));
        }
        if self.classes < 2 {
            return Err(Error::BadDimensions(format!("{} classes", self.classes)));
        }
        if self.kind == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::BadDimensions("MLP hidden width is zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layout {
    Mlp(MlpLayout),
    Lenet(LeNetLayout),
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        match spec.kind {
            ModelKind::Mlp => Layout::Mlp(MlpLayout::new(RGB_LEN, spec.hidden, spec.feature_dim)),
            ModelKind::Lenet => Layout::Lenet(LeNetLayout::new(spec.feature_dim)),
        }
    }

    fn feature_len(&self) -> usize {
        match self {
            Layout::Mlp(l) => l.param_count(),
            Layout::Lenet(l) => l.param_count(),
        }
    }

    /// `(offset, len, fan_in, followed_by_relu)` for every weight block.
    fn weight_blocks(&self) -> Vec<(usize, usize, usize, bool)> {
        match self {
            Layout::Mlp(l) => l.weight_blocks(),
            Layout::Lenet(l) => l.weight_blocks(),
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Flat parameter buffer: feature-extractor parameters followed by the head.
#[derive(Debug)]
pub struct Params {
    pub spec: ModelSpec,
    pub seed: u64,
    data: Vec<f64>,
    layout: Layout,
    id: u64,
    generation: u64,
}

impl Clone for Params {
    fn clone(&self) -> Self {
        Params {
            spec: self.spec,
            seed: self.seed,
            data: self.data.clone(),
            layout: self.layout.clone(),
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.seed == other.seed && self.data == other.data
    }
}

impl Params {
    fn from_data(spec: ModelSpec, seed: u64, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let expected = layout.feature_len() + spec.classes * spec.feature_dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!("{} parameters, expected {expected}", data.len())));
        }
        Ok(Params { spec, seed, data, layout, id: NEXT_ID.fetch_add(1, Ordering::Relaxed), generation: 0 })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access bumps the generation, invalidating earlier caches.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Parameters of the feature extractor, excluding the head.
    pub fn feature_param_count(&self) -> usize {
        self.layout.feature_len()
    }

    pub fn head(&self) -> &[f64] {
        &self.data[self.layout.feature_len()..]
    }

    fn stamp(&self) -> (u64, u64) {
        (self.id, self.generation)
    }

    /// Features for one sample without keeping the backward cache.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(x)?;
        Ok(batch_forward(self, &[x]).features().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + self.data.len() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let kind: u32 = match self.spec.kind {
            ModelKind::Mlp => 0,
            ModelKind::Lenet => 1,
        };
        for v in [kind, self.spec.classes as u32, self.spec.feature_dim as u32, self.spec.hidden as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        const HEADER: usize = 4 + 4 + 16 + 8 + 8;
        if bytes.len() < HEADER {
            return Err(Error::Truncated { expected: HEADER, found: bytes.len() });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
            return Err(Error::BadMagic { found, expected: u32::from_be_bytes(*CHECKPOINT_MAGIC) });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let kind = match u32_at(8) {
            0 => ModelKind::Mlp,
            1 => ModelKind::Lenet,
            k => return Err(Error::ConfigInvalid(format!("unknown model kind tag {k}"))),
        };
        let spec = ModelSpec {
            kind,
            classes: u32_at(12) as usize,
            feature_dim: u32_at(16) as usize,
            hidden: u32_at(20) as usize,
        };
        let seed = u64_at(24);
        let count = u64_at(32) as usize;
        let expected = HEADER + count * 8;
        if bytes.len() != expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        let data = bytes[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Params::from_data(spec, seed, data)
    }
}

/// Fan-in scaled uniform weights, zero biases; deterministic per seed.
pub fn init_params(spec: ModelSpec, seed: u64) -> Result<Params> {
    spec.validate()?;
    let layout = Layout::new(&spec);
    let head_offset = layout.feature_len();
    let mut data = vec![0.0; head_offset + spec.classes * spec.feature_dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut blocks = layout.weight_blocks();
    blocks.push((head_offset, spec.classes * spec.feature_dim, spec.feature_dim, false));
    for (offset, len, fan_in, relu) in blocks {
        let gain = if relu { 6.0 } else { 3.0 };
        let bound = (gain / fan_in as f64).sqrt();
        for v in &mut data[offset..offset + len] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Params::from_data(spec, seed, data)
}

fn check_input(x: &[f64]) -> Result<()> {
    if x.len() != RGB_LEN {
        return Err(Error::ShapeMismatch(format!("input of length {}, expected {RGB_LEN}", x.len())));
    }
    Ok(())
}

/// Activations of a batch retained for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum BatchCache {
    Mlp(mlp::MlpCache),
    Lenet(lenet::LeNetCache),
}

impl BatchCache {
    /// Row-major `B × D` features.
    pub(crate) fn features(&self) -> &[f64] {
        match self {
            BatchCache::Mlp(c) => &c.features,
            BatchCache::Lenet(c) => &c.features,
        }
    }
}

/// Forward pass over inputs already checked for length.
pub(crate) fn batch_forward(params: &Params, xs: &[&[f64]]) -> BatchCache {
    match &params.layout {
        Layout::Mlp(l) => BatchCache::Mlp(l.forward(&params.data, xs)),
        Layout::Lenet(l) => BatchCache::Lenet(l.forward(&params.data, xs)),
    }
}

/// Accumulates feature-extractor gradients into `grad` for row-major
/// cotangents `dfeat` (`B × D`). The head block is left untouched.
pub(crate) fn batch_backward(params: &Params, cache: &BatchCache, dfeat: &[f64], grad: &mut [f64]) {
    match (&params.layout, cache) {
        (Layout::Mlp(l), BatchCache::Mlp(c)) => l.backward(&params.data, c, dfeat, grad),
        (Layout::Lenet(l), BatchCache::Lenet(c)) => l.backward(&params.data, c, dfeat, grad),
        _ => unreachable!("cache built by the same layout"),
    }
}

/// Activations of one forward call; consumed by exactly one [`backward`].
#[derive(Debug)]
pub struct ForwardCache {
    stamp: (u64, u64),
    batch: usize,
    inner: BatchCache,
}

/// Batched forward pass returning `B × D` features.
pub fn forward<X: AsRef<[f64]>>(params: &Params, batch: &[X]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    let xs: Vec<&[f64]> = batch.iter().map(|x| x.as_ref()).collect();
    for x in &xs {
        check_input(x)?;
    }
    let inner = batch_forward(params, &xs);
    let features = inner.features().chunks_exact(params.spec.feature_dim).map(|f| f.to_vec()).collect();
    Ok((features, ForwardCache { stamp: params.stamp(), batch: xs.len(), inner }))
}

/// Full-parameter gradients (the head block is zero) for the given feature
/// cotangents.
pub fn backward(params: &Params, cache: ForwardCache, dl_dfeatures: &[Vec<f64>]) -> Result<Vec<f64>> {
    if cache.stamp != params.stamp() {
        return Err(Error::StaleCache);
    }
    if dl_dfeatures.len() != cache.batch {
        return Err(Error::ShapeMismatch(format!(
            "{} cotangent rows for a batch of {}",
            dl_dfeatures.len(),
            cache.batch
        )));
    }
    let d = params.spec.feature_dim;
    let mut flat = Vec::with_capacity(cache.batch * d);
    for row in dl_dfeatures {
        if row.len() != d {
            return Err(Error::ShapeMismatch(format!("cotangent of length {}", row.len())));
        }
        flat.extend_from_slice(row);
    }
    let mut grad = vec![0.0; params.len()];
    batch_backward(params, &cache.inner, &flat, &mut grad);
    Ok(grad)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fixed-length `y += a x`; the known length lets the loop unroll fully.
#[inline(always)]
pub(crate) fn axpy_n<const N: usize>(a: f64, x: &[f64], y: &mut [f64]) {
    let x: &[f64; N] = x[..N].try_into().expect("length checked by slicing");
    let y: &mut [f64; N] = (&mut y[..N]).try_into().expect("length checked by slicing");
    for i in 0..N {
        y[i] += a * x[i];
    }
}

/// Fixed-length [`dot`] with the same summation order.
#[inline(always)]
pub(crate) fn dot_n<const N: usize>(a: &[f64], b: &[f64]) -> f64 {
    let a: &[f64; N] = a[..N].try_into().expect("length checked by slicing");
    let b: &[f64; N] = b[..N].try_into().expect("length checked by slicing");
    let mut acc = [0.0; 8];
    let full = N / 8 * 8;
    for c in (0..full).step_by(8) {
        for i in 0..8 {
            acc[i] += a[c + i] * b[c + i];
        }
    }
    let mut tail = 0.0;
    for i in full..N {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// `y += Σ a_i x_i` over four rows with a single pass over `y`.
#[inline]
pub(crate) fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for i in 0..n {
        y[i] += (a[0] * x0[i] + a[1] * x1[i]) + (a[2] * x2[i] + a[3] * x3[i]);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent partial sums keep the loop vectorizable while the
    // summation order stays fixed.
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..RGB_LEN).map(|_| if rng.gen::<f64>() < 0.3 { rng.gen::<f64>() } else { 0.0 }).collect()
    }

    #[test]
    fn mlp_parameter_count() {
        let p = init_params(ModelSpec::mlp(), 0).unwrap();
        assert_eq!(p.feature_param_count(), 618_816);
        assert_eq!(p.len(), 618_816 + 640);
    }

    #[test]
    fn init_is_seed_deterministic() {
        for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
            assert_eq!(init_params(spec, 3).unwrap(), init_params(spec, 3).unwrap());
            assert_ne!(init_params(spec, 0).unwrap().as_slice(), init_params(spec, 1).unwrap().as_slice());
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let spec = ModelSpec { feature_dim: 1, ..ModelSpec::mlp() };
        assert!(matches!(init_params(spec, 0), Err(Error::BadDimensions(_))));
    }

    #[test]
    fn zero_image_gives_zero_features_with_zero_biases() {
        for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
            let p = init_params(spec, 1).unwrap();
            let f = p.features(&vec![0.0; RGB_LEN]).unwrap();
            assert!(f.iter().all(|&v| v == 0.0));
            assert!(crate::loss::cosine_logits(p.head(), &f, 1e-12).is_err());
        }
    }

    #[test]
    fn batch_rows_match_single_samples() {
        for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
            let p = init_params(spec, 2).unwrap();
            let batch: Vec<Vec<f64>> = (0..32).map(random_input).collect();
            let (feats, _) = forward(&p, &batch).unwrap();
            let (single, _) = forward(&p, &batch[17..18]).unwrap();
            for (a, b) in single[0].iter().zip(&feats[17]) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(feats.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient_and_backprop_is_linear() {
        for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
            let p = init_params(spec, 4).unwrap();
            let batch: Vec<Vec<f64>> = (0..3).map(|i| random_input(i + 10)).collect();
            let (_, cache) = forward(&p, &batch).unwrap();
            let g = backward(&p, cache, &vec![vec![0.0; 64]; 3]).unwrap();
            assert!(g.iter().all(|&v| v == 0.0));

            let d: Vec<Vec<f64>> = (0..3).map(|i| (0..64).map(|j| ((i * 64 + j) as f64).sin()).collect()).collect();
            let d2: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
            let (_, c1) = forward(&p, &batch).unwrap();
            let (_, c2) = forward(&p, &batch).unwrap();
            let g1 = backward(&p, c1, &d).unwrap();
            let g2 = backward(&p, c2, &d2).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = init_params(ModelSpec::mlp(), 5).unwrap();
        let (_, cache) = forward(&p, &[random_input(1)]).unwrap();
        p.as_mut_slice()[0] += 1.0;
        assert!(matches!(backward(&p, cache, &[vec![1.0; 64]]), Err(Error::StaleCache)));
        let q = p.clone();
        let (_, cache) = forward(&q, &[random_input(1)]).unwrap();
        assert!(matches!(backward(&p, cache, &[vec![1.0; 64]]), Err(Error::StaleCache)));
    }

    #[test]
    fn input_shape_is_checked() {
        let p = init_params(ModelSpec::mlp(), 5).unwrap();
        assert!(matches!(forward(&p, &[vec![0.0; 10]]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(forward::<Vec<f64>>(&p, &[]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
            let p = init_params(spec, 9).unwrap();
            let path = dir.path().join("ck.bin");
            p.save(&path).unwrap();
            let q = Params::load(&path).unwrap();
            assert_eq!(p, q);
            assert!(p.as_slice().iter().zip(q.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOPE0000000000000000000000000000000000000000").unwrap();
        assert!(matches!(Params::load(&path), Err(Error::BadMagic { .. })));
    }
}
