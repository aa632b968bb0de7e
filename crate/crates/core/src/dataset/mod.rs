//! Colored-digit datasets with a controllable color/label correlation.
//!
//! Each sample is an MNIST digit multiplied by one palette color. The train
//! split draws colors from the identity map `digit -> color`; in the OoD
//! regime the test split uses a derangement of it, so every digit's dominant
//! color changes between splits.

mod color;
mod idx;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use color::{
    assign_colors, assignment_map, colorize, colorize_bytes, derangement, DerangementKind, Palette, Regime, Split,
    NUM_COLORS,
};
pub use idx::{
    encode_images, encode_labels, parse_idx, GrayImage, IdxData, Mnist, RawDigits, GRAY_LEN, IMAGE_MAGIC, LABEL_MAGIC,
    SIDE,
};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 10;
pub const RGB_LEN: usize = GRAY_LEN * 3;

/// Everything needed to regenerate a dataset pair bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub regime: Regime,
    pub seed: Option<u64>,
    pub rho: f64,
    pub derangement: DerangementKind,
    pub palette: Palette,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            regime: Regime::Ood,
            seed: None,
            rho: 0.9,
            derangement: DerangementKind::Random,
            palette: Palette::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub regime: Regime,
    pub seed: u64,
    pub rho: f64,
    pub derangement: DerangementKind,
    pub palette: Palette,
    pub train_map: Vec<u8>,
    pub test_map: Vec<u8>,
    pub count: usize,
    pub label_counts: Vec<usize>,
    pub color_counts: Vec<usize>,
}

/// Borrowed view of one colored sample; pixels are interleaved 8-bit RGB.
#[derive(Clone, Copy, Debug)]
pub struct ColoredSample<'a> {
    pub pixels: &'a [u8],
    pub label: u8,
    pub bias_factor: u8,
}

impl ColoredSample<'_> {
    /// Writes intensities scaled to `[0, 1]` into `out`.
    pub fn fill_f64(&self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(self.pixels) {
            *o = f64::from(b) / 255.0;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.pixels.len()];
        self.fill_f64(&mut v);
        v
    }
}

/// An immutable split of colored samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ColoredDataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    bias_factors: Vec<u8>,
    pub manifest: Manifest,
}

impl ColoredDataset {
    /// Assembles a dataset from parts, checking sizes and index ranges.
    pub fn from_parts(pixels: Vec<u8>, labels: Vec<u8>, bias_factors: Vec<u8>, mut manifest: Manifest) -> Result<Self> {
        if pixels.len() != labels.len() * RGB_LEN || labels.len() != bias_factors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pixel bytes for {} labels and {} bias factors",
                pixels.len(),
                labels.len(),
                bias_factors.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::IndexOutOfRange { what: "label", value: l as usize, limit: NUM_CLASSES });
        }
        if let Some(&k) = bias_factors.iter().find(|&&k| k as usize >= NUM_COLORS) {
            return Err(Error::IndexOutOfRange { what: "bias factor", value: k as usize, limit: NUM_COLORS });
        }
        manifest.count = labels.len();
        manifest.label_counts = histogram(&labels, NUM_CLASSES);
        manifest.color_counts = histogram(&bias_factors, NUM_COLORS);
        Ok(ColoredDataset { pixels, labels, bias_factors, manifest })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> ColoredSample<'_> {
        ColoredSample {
            pixels: &self.pixels[i * RGB_LEN..(i + 1) * RGB_LEN],
            label: self.labels[i],
            bias_factor: self.bias_factors[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ColoredSample<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn bias_factors(&self) -> &[u8] {
        &self.bias_factors
    }

    /// A new dataset holding the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> ColoredDataset {
        let mut pixels = Vec::with_capacity(indices.len() * RGB_LEN);
        for &i in indices {
            pixels.extend_from_slice(self.get(i).pixels);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let factors = indices.iter().map(|&i| self.bias_factors[i]).collect();
        ColoredDataset::from_parts(pixels, labels, factors, self.manifest.clone())
            .expect("selection of a valid dataset is valid")
    }

    /// Writes `manifest.json` and `samples.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

        let path = dir.join("samples.bin");
        let mut buf = Vec::with_capacity(4 + self.len() * (RGB_LEN + 2));
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for s in self.iter() {
            buf.push(s.label);
            buf.push(s.bias_factor);
            buf.extend_from_slice(s.pixels);
        }
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;

        let path = dir.join("samples.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() < 4 {
            return Err(Error::Truncated { expected: 4, found: bytes.len() });
        }
        let count = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let expected = 4 + count * (RGB_LEN + 2);
        if bytes.len() != expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        let mut pixels = Vec::with_capacity(count * RGB_LEN);
        let mut labels = Vec::with_capacity(count);
        let mut factors = Vec::with_capacity(count);
        for rec in bytes[4..].chunks_exact(RGB_LEN + 2) {
            labels.push(rec[0]);
            factors.push(rec[1]);
            pixels.extend_from_slice(&rec[2..]);
        }
        ColoredDataset::from_parts(pixels, labels, factors, manifest)
    }
}

fn histogram(values: &[u8], n: usize) -> Vec<usize> {
    let mut h = vec![0; n];
    values.iter().for_each(|&v| h[v as usize] += 1);
    h
}

fn colorize_split(raw: &RawDigits, colors: &[u8], palette: &Palette) -> Vec<u8> {
    let mut pixels = vec![0u8; raw.len() * RGB_LEN];
    for (i, out) in pixels.chunks_exact_mut(RGB_LEN).enumerate() {
        colorize_bytes(raw.image_bytes(i), palette.colors[colors[i] as usize], out);
    }
    pixels
}

/// Colors both MNIST splits according to `config`.
pub fn build_dataset(mnist: &Mnist, config: &BuildConfig) -> Result<(ColoredDataset, ColoredDataset)> {
    let seed = config.seed.ok_or(Error::SeedMissing)?;
    config.palette.validate()?;
    let train_map = assignment_map(config.regime, Split::Train, config.derangement, seed);
    let test_map = assignment_map(config.regime, Split::Test, config.derangement, seed);

    let make = |raw: &RawDigits, split: Split, map: &[u8]| -> Result<ColoredDataset> {
        let colors = assign_colors(&raw.labels, map, split, seed, config.rho)?;
        let pixels = colorize_split(raw, &colors, &config.palette);
        let manifest = Manifest {
            split,
            regime: config.regime,
            seed,
            rho: config.rho,
            derangement: config.derangement,
            palette: config.palette.clone(),
            train_map: train_map.clone(),
            test_map: test_map.clone(),
            count: 0,
            label_counts: Vec::new(),
            color_counts: Vec::new(),
        };
        ColoredDataset::from_parts(pixels, raw.labels.clone(), colors, manifest)
    };
    Ok((make(&mnist.train, Split::Train, &train_map)?, make(&mnist.test, Split::Test, &test_map)?))
}

/// Loads MNIST from `dir` and builds the colored pair.
pub fn build_dataset_from_dir(dir: &Path, config: &BuildConfig) -> Result<(ColoredDataset, ColoredDataset)> {
    build_dataset(&Mnist::load_dir(dir)?, config)
}

/// Loads a `train/` + `test/` dataset pair written by [`save_pair`].
pub fn load_pair(dir: &Path) -> Result<(ColoredDataset, ColoredDataset)> {
    Ok((ColoredDataset::load(&dir.join("train"))?, ColoredDataset::load(&dir.join("test"))?))
}

pub fn save_pair(dir: &Path, train: &ColoredDataset, test: &ColoredDataset) -> Result<()> {
    train.save(&dir.join("train"))?;
    test.save(&dir.join("test"))
}

#[cfg(test)]
pub(crate) fn synthetic_mnist(train: usize, test: usize) -> Mnist {
    // Blocky fake digits: each class lights a different band of rows.
    let make = |n: usize, offset: usize| {
        let labels: Vec<u8> = (0..n).map(|i| ((i + offset) % 10) as u8).collect();
        let mut pixels = vec![0u8; n * GRAY_LEN];
        for (i, img) in pixels.chunks_exact_mut(GRAY_LEN).enumerate() {
            let d = labels[i] as usize;
            for r in (2 * d + 4)..(2 * d + 7) {
                for c in 4..24 {
                    img[r * SIDE + c] = (128 + (i * 13 + c) % 128) as u8;
                }
            }
        }
        RawDigits { pixels, labels }
    };
    Mnist { train: make(train, 0), test: make(test, 3) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(regime: Regime) -> BuildConfig {
        BuildConfig { regime, seed: Some(7), ..BuildConfig::default() }
    }

    #[test]
    fn iid_shares_assignment_maps() {
        let (train, test) = build_dataset(&synthetic_mnist(200, 50), &config(Regime::Iid)).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(test.len(), 50);
        assert_eq!(train.manifest.train_map, train.manifest.test_map);
        assert_eq!(test.manifest.test_map, (0..10).collect::<Vec<u8>>());
    }

    #[test]
    fn ood_records_different_maps() {
        let (train, test) = build_dataset(&synthetic_mnist(200, 50), &config(Regime::Ood)).unwrap();
        assert_ne!(train.manifest.train_map, train.manifest.test_map);
        assert_eq!(train.manifest.test_map, test.manifest.test_map);
    }

    #[test]
    fn builds_are_deterministic() {
        let mnist = synthetic_mnist(300, 30);
        let a = build_dataset(&mnist, &config(Regime::Ood)).unwrap();
        let b = build_dataset(&mnist, &config(Regime::Ood)).unwrap();
        assert_eq!(a, b);
        let mut other = config(Regime::Ood);
        other.seed = Some(8);
        assert_ne!(a.0.bias_factors(), build_dataset(&mnist, &other).unwrap().0.bias_factors());
    }

    #[test]
    fn missing_seed_is_an_error() {
        let cfg = BuildConfig::default();
        assert!(matches!(build_dataset(&synthetic_mnist(10, 10), &cfg), Err(Error::SeedMissing)));
    }

    #[test]
    fn foreground_pixels_follow_palette_ratios() {
        let (train, _) = build_dataset(&synthetic_mnist(50, 10), &config(Regime::Ood)).unwrap();
        let palette = Palette::default();
        for s in train.iter() {
            let c = palette.colors[s.bias_factor as usize];
            let cmax = *c.iter().max().unwrap() as f64;
            for px in s.pixels.chunks(3) {
                let pmax = *px.iter().max().unwrap() as f64;
                if pmax < 100.0 {
                    continue;
                }
                for ch in 0..3 {
                    let ratio = px[ch] as f64 / pmax - c[ch] as f64 / cmax;
                    assert!(ratio.abs() < 0.02, "{px:?} vs {c:?}");
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = build_dataset(&synthetic_mnist(40, 20), &config(Regime::Ood)).unwrap();
        save_pair(dir.path(), &train, &test).unwrap();
        let (a, b) = load_pair(dir.path()).unwrap();
        assert_eq!(a, train);
        assert_eq!(b, test);
        let bytes = fs::read(dir.path().join("train/samples.bin")).unwrap();
        assert_eq!(bytes.len(), 4 + 40 * (2 + RGB_LEN));
        assert_eq!(&bytes[..4], &40u32.to_le_bytes());
        assert_eq!(bytes[4], train.labels()[0]);
        assert_eq!(bytes[5], train.bias_factors()[0]);
    }
}
