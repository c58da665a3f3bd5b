//! Image containers, the CIFAR-10 binary format, and channel normalization.
//!
//! Raw images are stored channel-major (the full R plane, then G, then B),
//! row-major within each plane, exactly as they appear in a CIFAR-10 record.

mod export;
mod mask;
mod planted;
mod source;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub use export::{export_image, ExportFormat, ExportImage};
pub use mask::{Mask, Rect, RunLengthMask};
pub use planted::{
    generate_planted_dataset, load_planted, Corner, PatchSpec, PatchTruth, PlantedConfig,
    PlantedDataset, PlantedTruth,
};
pub use source::{load_dataset_dir, DatasetBundle, DatasetKind};

/// Side length of a square image.
pub const SIDE: usize = 32;
/// Pixels per channel plane.
pub const PLANE: usize = SIDE * SIDE;
/// Color channels.
pub const CHANNELS: usize = 3;
/// Intensities per image.
pub const IMAGE_LEN: usize = CHANNELS * PLANE;
/// Bytes per CIFAR-10 record: one label byte then the pixels.
pub const RECORD_LEN: usize = IMAGE_LEN + 1;
/// Number of classes in CIFAR-10.
pub const CIFAR10_CLASSES: usize = 10;

pub const CIFAR10_NAMES: [&str; CIFAR10_CLASSES] = [
    "plane", "car", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

#[inline]
pub fn pixel_index(channel: usize, row: usize, col: usize) -> usize {
    channel * PLANE + row * SIDE + col
}

/// A 3x32x32 grid of 8-bit intensities.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct RawImage {
    pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != IMAGE_LEN {
            return Err(Error::Shape {
                expected: IMAGE_LEN,
                actual: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    pub fn zeros() -> Self {
        Self {
            pixels: vec![0; IMAGE_LEN],
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.pixels[pixel_index(channel, row, col)]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: u8) {
        self.pixels[pixel_index(channel, row, col)] = value;
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        &self.pixels[channel * PLANE..(channel + 1) * PLANE]
    }
}

impl TryFrom<Vec<u8>> for RawImage {
    type Error = Error;

    fn try_from(pixels: Vec<u8>) -> Result<Self> {
        Self::new(pixels)
    }
}

impl From<RawImage> for Vec<u8> {
    fn from(image: RawImage) -> Self {
        image.pixels
    }
}

impl std::fmt::Debug for RawImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RawImage").finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub id: String,
    pub label: usize,
    pub image: RawImage,
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub fn new(mean: [f64; CHANNELS], std: [f64; CHANNELS]) -> Result<Self> {
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..CHANNELS {
            if !(self.std[c] > 0.0 && self.std[c].is_finite()) {
                return Err(Error::DegenerateChannel { channel: c });
            }
            if !self.mean[c].is_finite() {
                return Err(Error::OutOfRange(format!("channel {c} mean is not finite")));
            }
        }
        Ok(())
    }

    /// Normalized value corresponding to a raw intensity on `channel`.
    #[inline]
    pub fn normalize_value(&self, channel: usize, raw: f64) -> f64 {
        (raw - self.mean[channel]) / self.std[channel]
    }
}

/// A 3x32x32 grid of normalized reals in the same layout as [`RawImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    values: Vec<f64>,
}

impl NormalizedImage {
    /// Wraps pre-normalized values. Used by gradient checks and by callers
    /// that perturb inputs directly.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != IMAGE_LEN {
            return Err(Error::Shape {
                expected: IMAGE_LEN,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("normalized values must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Parses the concatenated records of a CIFAR-10 binary batch.
///
/// Ids are `"{prefix}:{index}"` with the record index in file order.
pub fn parse_cifar10(bytes: &[u8], prefix: &str) -> Result<Vec<LabeledImage>> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::TruncatedFile {
            len: bytes.len(),
            record: RECORD_LEN,
        });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if usize::from(label) >= CIFAR10_CLASSES {
                return Err(Error::InvalidLabel { record: i, label });
            }
            Ok(LabeledImage {
                id: format!("{prefix}:{i}"),
                label: usize::from(label),
                image: RawImage {
                    pixels: rec[1..].to_vec(),
                },
            })
        })
        .collect()
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Vec<LabeledImage>> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    let prefix = path.file_stem().and_then(|s| s.to_str()).unwrap_or("batch");
    parse_cifar10(&bytes, prefix)
}

pub fn encode_cifar10(images: &[LabeledImage]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(images.len() * RECORD_LEN);
    for (i, img) in images.iter().enumerate() {
        let label = u8::try_from(img.label)
            .ok()
            .filter(|&l| usize::from(l) < CIFAR10_CLASSES)
            .ok_or(Error::InvalidLabel {
                record: i,
                label: img.label.min(255) as u8,
            })?;
        out.push(label);
        out.extend_from_slice(img.image.pixels());
    }
    Ok(out)
}

pub fn write_cifar10(path: impl AsRef<Path>, images: &[LabeledImage]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cifar10(images)?;
    let mut file = fs::File::create(path).at(path)?;
    file.write_all(&bytes).at(path)?;
    Ok(())
}

/// Mean and population standard deviation of every channel over all pixels
/// of all images.
///
/// Sums are accumulated in exact integer arithmetic, so the result does not
/// depend on image order.
pub fn compute_channel_stats(images: &[LabeledImage]) -> Result<ChannelStats> {
    let (mean, var) = channel_moments(images)?;
    let mut std = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        if var[c] <= 0.0 {
            return Err(Error::DegenerateChannel { channel: c });
        }
        std[c] = var[c].sqrt();
    }
    Ok(ChannelStats { mean, std })
}

/// Like [`compute_channel_stats`], but a zero-variance channel receives
/// `floor` as its standard deviation instead of failing.
pub fn compute_channel_stats_with_floor(
    images: &[LabeledImage],
    floor: f64,
) -> Result<ChannelStats> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "std floor must be positive, got {floor}"
        )));
    }
    let (mean, var) = channel_moments(images)?;
    let std = var.map(|v| if v > 0.0 { v.sqrt() } else { floor });
    Ok(ChannelStats { mean, std })
}

fn channel_moments(images: &[LabeledImage]) -> Result<([f64; CHANNELS], [f64; CHANNELS])> {
    if images.is_empty() {
        return Err(Error::Empty("channel statistics need at least one image"));
    }
    let mut sum = [0u128; CHANNELS];
    let mut sum_sq = [0u128; CHANNELS];
    for img in images {
        for c in 0..CHANNELS {
            let (s, q) = img.image.plane(c).iter().fold((0u64, 0u64), |(s, q), &p| {
                let p = u64::from(p);
                (s + p, q + p * p)
            });
            sum[c] += u128::from(s);
            sum_sq[c] += u128::from(q);
        }
    }
    let n = (images.len() * PLANE) as u128;
    let mut mean = [0.0; CHANNELS];
    let mut var = [0.0; CHANNELS];
    for c in 0..CHANNELS {
        mean[c] = sum[c] as f64 / n as f64;
        // n * sum_sq - sum^2 is exact and non-negative.
        let centered = n * sum_sq[c] - sum[c] * sum[c];
        var[c] = centered as f64 / (n as f64 * n as f64);
    }
    Ok((mean, var))
}

pub fn normalize_image(image: &RawImage, stats: &ChannelStats) -> Result<NormalizedImage> {
    stats.validate()?;
    let mut values = Vec::with_capacity(IMAGE_LEN);
    for c in 0..CHANNELS {
        let (mu, sigma) = (stats.mean[c], stats.std[c]);
        values.extend(image.plane(c).iter().map(|&p| (f64::from(p) - mu) / sigma));
    }
    Ok(NormalizedImage { values })
}
