//! Synthetic datasets with a known label rule and a known spurious cue.
//!
//! Every image carries an 8x8 glyph in the center that decides its label.
//! Some images also carry a solid block in one corner, lit on the channel
//! whose index names a "confound class". During training the confound class
//! agrees with the label with probability `correlation` and is uniform
//! otherwise. The test split contains a flagged interference subset whose
//! corner block always names a class other than the label.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_cifar10, LabeledImage, Mask, RawImage, Rect, CHANNELS, SIDE};
use crate::error::{Error, IoContext, Result};

const GLYPH: usize = 8;
const GLYPH_ORIGIN: usize = (SIDE - GLYPH) / 2;
const MANIFEST_FORMAT: &str = "miscause-planted/1";

pub const GLYPH_RECT: Rect = Rect {
    row: GLYPH_ORIGIN,
    col: GLYPH_ORIGIN,
    height: GLYPH,
    width: GLYPH,
};

/// Largest class count with a distinct glyph and patch channel.
pub const MAX_PLANTED_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub corner: Corner,
    pub size: usize,
    pub intensity: u8,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            corner: Corner::TopLeft,
            size: 6,
            intensity: 255,
        }
    }
}

impl PatchSpec {
    pub fn rect(&self) -> Rect {
        let far = SIDE.saturating_sub(self.size);
        let (row, col) = match self.corner {
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (0, far),
            Corner::BottomLeft => (far, 0),
            Corner::BottomRight => (far, far),
        };
        Rect {
            row,
            col,
            height: self.size,
            width: self.size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub num_classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub glyph_intensity: u8,
    /// Background pixels are uniform in `0..=noise_amplitude`.
    pub noise_amplitude: u8,
    pub patch: PatchSpec,
    /// Fraction of training (and clean test) images carrying a patch.
    pub patch_fraction: f64,
    /// Probability that a patch names the image's own label.
    pub correlation: f64,
    /// Fraction of the test split that is a flagged interference image.
    pub interference_fraction: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            train_size: 600,
            test_size: 300,
            glyph_intensity: 90,
            noise_amplitude: 60,
            patch: PatchSpec::default(),
            patch_fraction: 0.9,
            correlation: 0.0,
            interference_fraction: 0.3,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=MAX_PLANTED_CLASSES).contains(&self.num_classes) {
            return fail(format!(
                "num_classes must be in 2..={MAX_PLANTED_CLASSES}, got {}",
                self.num_classes
            ));
        }
        for (name, v) in [
            ("patch_fraction", self.patch_fraction),
            ("correlation", self.correlation),
            ("interference_fraction", self.interference_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0,1], got {v}"));
            }
        }
        let rect = self.patch.rect();
        if self.patch.size == 0 || !rect.fits() {
            return fail(format!(
                "patch of size {} does not fit the image",
                self.patch.size
            ));
        }
        if rect.intersects(&GLYPH_RECT) {
            return fail("patch overlaps the glyph region".into());
        }
        if self.glyph_intensity <= self.noise_amplitude
            || self.patch.intensity <= self.noise_amplitude
        {
            return fail("glyph and patch intensities must exceed the noise amplitude".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchTruth {
    pub rect: Rect,
    /// Channel lit by the patch, which is also the class it stands for.
    pub class: usize,
}

/// Ground truth recorded for each generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub id: String,
    pub label: usize,
    pub object: Rect,
    pub patch: Option<PatchTruth>,
    pub interference: bool,
}

impl PlantedTruth {
    pub fn object_mask(&self) -> Mask {
        Mask::from_rect(&self.object)
    }

    pub fn patch_mask(&self) -> Mask {
        self.patch
            .as_ref()
            .map(|p| Mask::from_rect(&p.rect))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDataset {
    pub seed: u64,
    pub config: PlantedConfig,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub train_truth: Vec<PlantedTruth>,
    pub test_truth: Vec<PlantedTruth>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    seed: u64,
    config: PlantedConfig,
    train: Vec<PlantedTruth>,
    test: Vec<PlantedTruth>,
}

fn glyph_pixel(label: usize, r: usize, c: usize) -> bool {
    match label {
        0 => true,
        1 => (3..=4).contains(&r) || (3..=4).contains(&c),
        _ => r == c,
    }
}

fn render(
    rng: &mut ChaCha8Rng,
    cfg: &PlantedConfig,
    label: usize,
    patch: Option<usize>,
) -> RawImage {
    let mut img = RawImage::zeros();
    for c in 0..CHANNELS {
        for r in 0..SIDE {
            for col in 0..SIDE {
                img.set(c, r, col, rng.random_range(0..=cfg.noise_amplitude));
            }
        }
    }
    for r in 0..GLYPH {
        for col in 0..GLYPH {
            if glyph_pixel(label, r, col) {
                for c in 0..CHANNELS {
                    img.set(c, GLYPH_ORIGIN + r, GLYPH_ORIGIN + col, cfg.glyph_intensity);
                }
            }
        }
    }
    if let Some(class) = patch {
        let rect = cfg.patch.rect();
        for r in rect.row..rect.row + rect.height {
            for col in rect.col..rect.col + rect.width {
                img.set(class, r, col, cfg.patch.intensity);
            }
        }
    }
    img
}

/// Generates the train and test splits. Identical seeds yield identical
/// datasets.
pub fn generate_planted_dataset(cfg: &PlantedConfig, seed: u64) -> Result<PlantedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.num_classes;
    let rect = cfg.patch.rect();

    let make = |rng: &mut ChaCha8Rng,
                id: String,
                label: usize,
                patch: Option<usize>,
                interference: bool| {
        let image = render(rng, cfg, label, patch);
        let truth = PlantedTruth {
            id: id.clone(),
            label,
            object: GLYPH_RECT,
            patch: patch.map(|class| PatchTruth { rect, class }),
            interference,
        };
        (LabeledImage { id, label, image }, truth)
    };

    let sample_patch = |rng: &mut ChaCha8Rng, label: usize| -> Option<usize> {
        if rng.random::<f64>() < cfg.patch_fraction {
            if rng.random::<f64>() < cfg.correlation {
                Some(label)
            } else {
                Some(rng.random_range(0..k))
            }
        } else {
            None
        }
    };

    let mut train = Vec::with_capacity(cfg.train_size);
    let mut train_truth = Vec::with_capacity(cfg.train_size);
    for i in 0..cfg.train_size {
        let label = i % k;
        let patch = sample_patch(&mut rng, label);
        let (img, truth) = make(&mut rng, format!("train-{i:05}"), label, patch, false);
        train.push(img);
        train_truth.push(truth);
    }

    let n_interference = (cfg.interference_fraction * cfg.test_size as f64).round() as usize;
    let mut test = Vec::with_capacity(cfg.test_size);
    let mut test_truth = Vec::with_capacity(cfg.test_size);
    for i in 0..cfg.test_size {
        let label = i % k;
        let interference = i < n_interference;
        let patch = if interference {
            // uniform over the other classes
            let other = rng.random_range(0..k - 1);
            Some(if other >= label { other + 1 } else { other })
        } else {
            sample_patch(&mut rng, label)
        };
        let (img, truth) = make(&mut rng, format!("test-{i:05}"), label, patch, interference);
        test.push(img);
        test_truth.push(truth);
    }

    Ok(PlantedDataset {
        seed,
        config: cfg.clone(),
        train,
        test,
        train_truth,
        test_truth,
    })
}

impl PlantedDataset {
    pub fn truth(&self, id: &str) -> Option<&PlantedTruth> {
        self.train_truth
            .iter()
            .chain(&self.test_truth)
            .find(|t| t.id == id)
    }

    /// Writes `train.bin`, `test.bin` (CIFAR-10 record format) and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).at(dir)?;
        write_cifar10(dir.join("train.bin"), &self.train)?;
        write_cifar10(dir.join("test.bin"), &self.test)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            seed: self.seed,
            config: self.config.clone(),
            train: self.train_truth.clone(),
            test: self.test_truth.clone(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
        Ok(())
    }
}

/// Reads a dataset written by [`PlantedDataset::write`]; ids come from the
/// manifest.
pub fn load_planted(dir: impl AsRef<Path>) -> Result<PlantedDataset> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).at(&path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Config(format!(
            "unknown manifest format {}",
            manifest.format
        )));
    }
    let attach = |file: &str, truth: &[PlantedTruth]| -> Result<Vec<LabeledImage>> {
        let mut images = super::load_cifar10(dir.join(file))?;
        if images.len() != truth.len() {
            return Err(Error::Config(format!(
                "{file} holds {} images but the manifest lists {}",
                images.len(),
                truth.len()
            )));
        }
        for (img, t) in images.iter_mut().zip(truth) {
            if img.label != t.label {
                return Err(Error::Config(format!("label mismatch for {}", t.id)));
            }
            img.id = t.id.clone();
        }
        Ok(images)
    };
    let train = attach("train.bin", &manifest.train)?;
    let test = attach("test.bin", &manifest.test)?;
    Ok(PlantedDataset {
        seed: manifest.seed,
        config: manifest.config,
        train,
        test,
        train_truth: manifest.train,
        test_truth: manifest.test,
    })
}
