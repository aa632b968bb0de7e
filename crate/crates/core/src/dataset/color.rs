//! Palette, per-pixel colorization and color-assignment maps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_COLORS: usize = 10;

/// RNG stream ids, one per independent draw sequence derived from a seed.
const STREAM_DERANGEMENT: u64 = 1;
const STREAM_TRAIN_COLORS: u64 = 2;
const STREAM_TEST_COLORS: u64 = 3;

/// Ten distinct, non-black RGB colors stored as 8-bit channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        let entries: [(&str, [u8; 3]); NUM_COLORS] = [
            ("red", [255, 0, 0]),
            ("green", [0, 255, 0]),
            ("blue", [0, 0, 255]),
            ("yellow", [255, 255, 0]),
            ("magenta", [255, 0, 255]),
            ("cyan", [0, 255, 255]),
            ("orange", [255, 140, 0]),
            ("purple", [128, 0, 255]),
            ("brown", [150, 75, 38]),
            ("pink", [255, 150, 200]),
        ];
        Palette {
            names: entries.iter().map(|(n, _)| n.to_string()).collect(),
            colors: entries.iter().map(|(_, c)| *c).collect(),
        }
    }
}

impl Palette {
    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != NUM_COLORS || self.names.len() != NUM_COLORS {
            return Err(Error::ConfigInvalid(format!(
                "palette needs {NUM_COLORS} colors, found {}",
                self.colors.len()
            )));
        }
        for (i, c) in self.colors.iter().enumerate() {
            if *c == [0, 0, 0] {
                return Err(Error::ConfigInvalid(format!("palette entry {i} is black")));
            }
            if self.colors[..i].contains(c) {
                return Err(Error::ConfigInvalid(format!("palette entry {i} is duplicated")));
            }
        }
        Ok(())
    }

    /// Color `k` with channels scaled to `[0, 1]`.
    pub fn rgb(&self, k: usize) -> [f64; 3] {
        self.colors[k].map(|c| f64::from(c) / 255.0)
    }
}

/// Multiplies each gray intensity by the color, giving interleaved RGB.
pub fn colorize(gray: &[f64], color: [f64; 3]) -> Vec<f64> {
    gray.iter().flat_map(|&g| color.map(|c| g * c)).collect()
}

/// 8-bit version of [`colorize`]: `round(g * c / 255)` per channel.
pub fn colorize_bytes(gray: &[u8], color: [u8; 3], out: &mut [u8]) {
    debug_assert_eq!(out.len(), gray.len() * 3);
    for (px, &g) in out.chunks_exact_mut(3).zip(gray) {
        for (o, &c) in px.iter_mut().zip(&color) {
            *o = ((u32::from(g) * u32::from(c) + 127) / 255) as u8;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Train and test share the same digit→color map.
    #[serde(alias = "in-domain")]
    Iid,
    /// The test split uses a derangement of the training map.
    Ood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerangementKind {
    /// Seeded uniformly random permutation without fixed points.
    #[default]
    Random,
    /// `d -> (d + 1) mod 10`.
    Cyclic,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A permutation of `0..n` with no fixed points.
pub fn derangement(n: usize, kind: DerangementKind, seed: u64) -> Vec<u8> {
    match kind {
        DerangementKind::Cyclic => (0..n).map(|d| ((d + 1) % n) as u8).collect(),
        DerangementKind::Random => {
            let mut rng = stream_rng(seed, STREAM_DERANGEMENT);
            let mut perm: Vec<u8> = (0..n as u8).collect();
            loop {
                perm.shuffle(&mut rng);
                if perm.iter().enumerate().all(|(i, &p)| i != p as usize) {
                    return perm;
                }
            }
        }
    }
}

/// The digit→color map a split draws its biased colors from.
pub fn assignment_map(regime: Regime, split: Split, kind: DerangementKind, seed: u64) -> Vec<u8> {
    match (regime, split) {
        (Regime::Ood, Split::Test) => derangement(NUM_COLORS, kind, seed),
        _ => (0..NUM_COLORS as u8).collect(),
    }
}

/// Draws one color index per label: the mapped color with probability `rho`,
/// otherwise a uniformly random one.
pub fn assign_colors(labels: &[u8], map: &[u8], split: Split, seed: u64, rho: f64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::ConfigInvalid(format!("bias strength {rho} outside [0, 1]")));
    }
    let stream = match split {
        Split::Train => STREAM_TRAIN_COLORS,
        Split::Test => STREAM_TEST_COLORS,
    };
    let mut rng = stream_rng(seed, stream);
    labels
        .iter()
        .map(|&d| {
            let d = d as usize;
            if d >= map.len() {
                return Err(Error::IndexOutOfRange { what: "label", value: d, limit: map.len() });
            }
            let biased = rng.gen::<f64>() < rho;
            Ok(if biased { map[d] } else { rng.gen_range(0..NUM_COLORS as u8) })
        })
        .collect()
}
