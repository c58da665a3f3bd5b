//! Per-pixel attribution maps and top-p pixel selection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{input_gradient, predict, ModelParams, ScoreVector};
use crate::dataset::{
    normalize_image, ChannelStats, NormalizedImage, RawImage, CHANNELS, PLANE, SIDE,
};
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencySource {
    #[default]
    Gradient,
    Occlusion,
}

impl std::str::FromStr for SaliencySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "occlusion" => Ok(Self::Occlusion),
            other => Err(Error::Config(format!("unknown saliency method {other:?}"))),
        }
    }
}

/// A 32x32 nonnegative map, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub source: SaliencySource,
    pub target_class: usize,
}

impl SaliencyMap {
    pub fn new(values: Vec<f64>, source: SaliencySource, target_class: usize) -> Result<Self> {
        if values.len() != PLANE {
            return Err(Error::Shape {
                expected: PLANE,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::OutOfRange(
                "saliency values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            values,
            source,
            target_class,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * SIDE + col]
    }

    pub fn to_grid(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks_exact(SIDE)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// 32 lines of 32 comma-separated values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks_exact(SIDE) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Min-max scaled to [0,255]; a constant map is all black.
    pub fn to_gray_bytes(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).at(path)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(SIDE as u32, SIDE as u32, self.to_gray_bytes())
            .expect("buffer sized for 32x32");
        img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Selected pixels as `(row, col)`, most salient first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSet {
    pub pixels: Vec<(usize, usize)>,
    pub fraction: f64,
}

impl PixelSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Raw intensity written into the occluded patch.
    pub fill: u8,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            patch_size: 3,
            stride: 1,
            fill: 0,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) || self.patch_size > SIDE {
            return Err(Error::Config(format!(
                "occlusion patch size must be odd and in 1..=32, got {}",
                self.patch_size
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("occlusion stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Channel-max of `|∂p_target/∂x|` with the predicted class as target.
pub fn gradient_saliency(params: &ModelParams, image: &NormalizedImage) -> Result<SaliencyMap> {
    let target = predict(params, image)?.predicted_label;
    let grad = input_gradient(params, image, target)?;
    let values = (0..PLANE)
        .map(|i| {
            (0..CHANNELS)
                .map(|c| grad[c * PLANE + i].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    SaliencyMap::new(values, SaliencySource::Gradient, target)
}

/// Score drop of the base prediction when a patch centred on each stride
/// grid point is filled, spread to every pixel the patch covers (max over
/// patches, floored at zero). Works with any scorer.
pub fn occlusion_saliency<F>(
    scorer: F,
    image: &RawImage,
    stats: &ChannelStats,
    cfg: &OcclusionConfig,
) -> Result<SaliencyMap>
where
    F: Fn(&NormalizedImage) -> Result<ScoreVector> + Sync,
{
    cfg.validate()?;
    let base = scorer(&normalize_image(image, stats)?)?;
    let target = base.argmax();
    let base_score = base.as_slice()[target];
    let half = cfg.patch_size / 2;
    let centers: Vec<(usize, usize)> = (0..SIDE)
        .step_by(cfg.stride)
        .flat_map(|r| (0..SIDE).step_by(cfg.stride).map(move |c| (r, c)))
        .collect();
    let extent = |c: usize| (c.saturating_sub(half), (c + half).min(SIDE - 1));
    let drops: Vec<f64> = centers
        .par_iter()
        .map(|&(r, c)| {
            let mut occluded = image.clone();
            let (r0, r1) = extent(r);
            let (c0, c1) = extent(c);
            for ch in 0..CHANNELS {
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        occluded.set(ch, rr, cc, cfg.fill);
                    }
                }
            }
            let scores = scorer(&normalize_image(&occluded, stats)?)?;
            Ok(base_score - scores.as_slice()[target])
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0f64; PLANE];
    for (&(r, c), &drop) in centers.iter().zip(&drops) {
        let (r0, r1) = extent(r);
        let (c0, c1) = extent(c);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                let v = &mut values[rr * SIDE + cc];
                *v = v.max(drop);
            }
        }
    }
    SaliencyMap::new(values, SaliencySource::Occlusion, target)
}

/// Number of pixels selected for fraction `p`: `ceil(p · 1024)`, with a
/// guard so that products like `0.25 · 1024` are not pushed up by rounding.
pub fn top_count(p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::OutOfRange(format!(
            "fraction must lie in (0,1], got {p}"
        )));
    }
    let raw = p * PLANE as f64;
    Ok(((raw - 1e-9).ceil() as usize).clamp(1, PLANE))
}

/// The `ceil(p · 1024)` largest pixels, ties broken in row-major order.
pub fn top_fraction(map: &SaliencyMap, p: f64) -> Result<PixelSet> {
    let k = top_count(p)?;
    let mut order: Vec<usize> = (0..PLANE).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    Ok(PixelSet {
        pixels: order[..k].iter().map(|&i| (i / SIDE, i % SIDE)).collect(),
        fraction: p,
    })
}
