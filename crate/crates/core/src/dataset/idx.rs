//! Reader for the big-endian IDX container used by the MNIST files.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const GRAY_LEN: usize = SIDE * SIDE;

/// A 28×28 grayscale digit with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub pixels: Vec<f64>,
    pub label: u8,
}

impl GrayImage {
    /// Raw byte intensities, the lossless form used for storage.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }
}

/// Parsed contents of one IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `count` images of 28×28 bytes, row-major, concatenated.
    Images {
        count: usize,
        bytes: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated { expected: at + 4, found: bytes.len() })
}

/// Parses an image (`0x00000803`) or label (`0x00000801`) IDX stream.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        IMAGE_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            if rows != SIDE || cols != SIDE {
                return Err(Error::DimMismatch { rows, cols });
            }
            let expected = 16 + count * GRAY_LEN;
            if bytes.len() < expected {
                return Err(Error::Truncated { expected, found: bytes.len() });
            }
            Ok(IdxData::Images { count, bytes: bytes[16..expected].to_vec() })
        }
        LABEL_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let expected = 8 + count;
            if bytes.len() < expected {
                return Err(Error::Truncated { expected, found: bytes.len() });
            }
            Ok(IdxData::Labels(bytes[8..expected].to_vec()))
        }
        found => Err(Error::BadMagic { found, expected: IMAGE_MAGIC }),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Raw MNIST split: byte intensities plus labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDigits {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDigits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.pixels[i * GRAY_LEN..(i + 1) * GRAY_LEN]
    }

    pub fn image(&self, i: usize) -> GrayImage {
        GrayImage { pixels: self.image_bytes(i).iter().map(|&b| f64::from(b) / 255.0).collect(), label: self.labels[i] }
    }

    /// Loads an images/labels file pair.
    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        let pixels = match parse_idx(&read_file(images)?)? {
            IdxData::Images { bytes, .. } => bytes,
            IdxData::Labels(_) => return Err(Error::BadMagic { found: LABEL_MAGIC, expected: IMAGE_MAGIC }),
        };
        let labels = match parse_idx(&read_file(labels)?)? {
            IdxData::Labels(l) => l,
            IdxData::Images { .. } => return Err(Error::BadMagic { found: IMAGE_MAGIC, expected: LABEL_MAGIC }),
        };
        let images = pixels.len() / GRAY_LEN;
        if images != labels.len() {
            return Err(Error::CountMismatch { images, labels: labels.len() });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= 10) {
            return Err(Error::IndexOutOfRange { what: "label", value: l as usize, limit: 10 });
        }
        Ok(RawDigits { pixels, labels })
    }
}

/// The standard train/test MNIST pair.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train: RawDigits,
    pub test: RawDigits,
}

impl Mnist {
    /// Loads the four canonical file names from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Mnist {
            train: RawDigits::load(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?,
            test: RawDigits::load(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?,
        })
    }

    /// Writes the four canonical files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (raw, prefix) in [(&self.train, "train"), (&self.test, "t10k")] {
            let images = encode_images(raw.len(), SIDE as u32, SIDE as u32, &raw.pixels);
            let path = dir.join(format!("{prefix}-images-idx3-ubyte"));
            std::fs::write(&path, images).map_err(|e| Error::io(&path, e))?;
            let path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
            std::fs::write(&path, encode_labels(&raw.labels)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// IDX image container around a raw row-major payload.
pub fn encode_images(count: usize, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_images_and_scales_endpoints() {
        let mut payload = vec![0u8; 2 * GRAY_LEN];
        payload[0] = 255;
        payload[GRAY_LEN + 5] = 128;
        let data = parse_idx(&encode_images(2, 28, 28, &payload)).unwrap();
        let IdxData::Images { count, bytes } = data else { panic!("expected images") };
        assert_eq!(count, 2);
        let raw = RawDigits { pixels: bytes, labels: vec![3, 7] };
        let first = raw.image(0);
        assert_eq!(first.pixels.len(), GRAY_LEN);
        assert_eq!(first.pixels[0], 1.0);
        assert_eq!(first.pixels[1], 0.0);
        assert_eq!(first.label, 3);
        assert!((raw.image(1).pixels[5] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_magic() {
        let mut bytes = encode_images(0, 28, 28, &[]);
        bytes[3] = 0x02;
        assert!(matches!(parse_idx(&bytes), Err(Error::BadMagic { found: 0x802, .. })));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = encode_images(2, 28, 28, &vec![0u8; GRAY_LEN + 10]);
        assert!(matches!(parse_idx(&bytes), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn rejects_non_mnist_dims() {
        let bytes = encode_images(1, 32, 32, &vec![0u8; 1024]);
        assert!(matches!(parse_idx(&bytes), Err(Error::DimMismatch { rows: 32, cols: 32 })));
    }

    #[test]
    fn parses_labels() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 9]);
        assert_eq!(parse_idx(&bytes).unwrap(), IdxData::Labels(vec![1, 2, 9]));
    }

    #[test]
    fn save_dir_round_trips() {
        let raw = |n: usize| RawDigits {
            pixels: (0..n * GRAY_LEN).map(|i| (i % 251) as u8).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
        };
        let mnist = Mnist { train: raw(3), test: raw(2) };
        let dir = tempfile::tempdir().unwrap();
        mnist.save_dir(dir.path()).unwrap();
        let back = Mnist::load_dir(dir.path()).unwrap();
        assert_eq!(back.train, mnist.train);
        assert_eq!(back.test, mnist.test);
    }
}
