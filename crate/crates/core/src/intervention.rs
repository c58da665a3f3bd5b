//! Erase boxes anchored at the most salient pixels, keep a spared region
//! untouched, and reclassify.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict, ClassificationRecord, ModelParams};
use crate::dataset::{
    normalize_image, ChannelStats, LabeledImage, Mask, RawImage, CHANNELS, PLANE, SIDE,
};
use crate::error::{Error, Result};
use crate::saliency::{gradient_saliency, top_fraction, PixelSet};

/// Default fraction of pixels used as anchors.
pub const DEFAULT_TOP_P: f64 = 0.05;

/// A box centred on an anchor. Even sizes reach one pixel further right
/// (or down). Extents are inclusive and already clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub center: (usize, usize),
    pub dx: usize,
    pub dy: usize,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl BoundingBox {
    pub fn new(center: (usize, usize), dx: usize, dy: usize) -> Result<Self> {
        if dx == 0 || dy == 0 {
            return Err(Error::OutOfRange(
                "box dimensions must be at least 1".into(),
            ));
        }
        let (r, c) = center;
        if r >= SIDE || c >= SIDE {
            return Err(Error::OutOfRange(format!(
                "anchor ({r},{c}) outside the image"
            )));
        }
        let span = |x: usize, d: usize| (x.saturating_sub((d - 1) / 2), (x + d / 2).min(SIDE - 1));
        Ok(Self {
            center,
            dx,
            dy,
            rows: span(r, dy),
            cols: span(c, dx),
        })
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.rows.0..=self.rows.1).contains(&row) && (self.cols.0..=self.cols.1).contains(&col)
    }
}

pub fn anchor_boxes(
    anchors: &PixelSet,
    dx: usize,
    dy: usize,
    spare_mask: Option<&Mask>,
) -> Result<Vec<BoundingBox>> {
    anchors
        .pixels
        .iter()
        .filter(|&&(r, c)| !spare_mask.is_some_and(|m| m.contains(r, c)))
        .map(|&p| BoundingBox::new(p, dx, dy))
        .collect()
}

/// Pixels covered by some box and not spared.
pub fn erasure_mask(boxes: &[BoundingBox], spare_mask: Option<&Mask>) -> Mask {
    let mut m = Mask::empty();
    for b in boxes {
        for r in b.rows.0..=b.rows.1 {
            for c in b.cols.0..=b.cols.1 {
                if !spare_mask.is_some_and(|s| s.contains(r, c)) {
                    m.set(r, c, true);
                }
            }
        }
    }
    m
}

/// Sets every erased pixel to raw 0 on all channels; returns the new image
/// and the number of erased pixel positions.
pub fn apply_erasure(
    image: &RawImage,
    boxes: &[BoundingBox],
    spare_mask: Option<&Mask>,
) -> (RawImage, usize) {
    let erase = erasure_mask(boxes, spare_mask);
    let mut out = image.clone();
    for r in 0..SIDE {
        for c in 0..SIDE {
            if erase.contains(r, c) {
                for ch in 0..CHANNELS {
                    out.set(ch, r, c, 0);
                }
            }
        }
    }
    (out, erase.count())
}

/// Where the zeroing is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErasureSpace {
    /// Raw intensity 0, then renormalized.
    #[default]
    Raw,
    /// Normalized value 0, i.e. the channel mean.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub top_p: f64,
    pub dx: usize,
    pub dy: usize,
    pub spare_mask: Option<Mask>,
    #[serde(default)]
    pub space: ErasureSpace,
}

impl InterventionSpec {
    pub fn new(top_p: f64, dx: usize, dy: usize) -> Self {
        Self {
            top_p,
            dx,
            dy,
            spare_mask: None,
            space: ErasureSpace::Raw,
        }
    }

    pub fn with_mask(mut self, mask: Option<Mask>) -> Self {
        self.spare_mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::OutOfRange(format!(
                "top_p must lie in (0,1], got {}",
                self.top_p
            )));
        }
        if self.dx == 0 || self.dy == 0 {
            return Err(Error::OutOfRange(
                "box dimensions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub before: ClassificationRecord,
    pub after: ClassificationRecord,
    pub erased_pixel_count: usize,
    pub flipped_to_true: bool,
    pub anchors: PixelSet,
    pub boxes: Vec<BoundingBox>,
}

/// predict → gradient saliency → top-p anchors → boxes → erase → renormalize
/// with the same stats → predict again.
pub fn do_intervention(
    params: &ModelParams,
    stats: &ChannelStats,
    image: &LabeledImage,
    spec: &InterventionSpec,
    model_id: &str,
) -> Result<InterventionResult> {
    spec.validate()?;
    let mask = spec.spare_mask.as_ref();
    let input = normalize_image(&image.image, stats)?;
    let before = ClassificationRecord::from_prediction(
        &image.id,
        image.label,
        predict(params, &input)?,
        model_id,
    );
    let anchors = top_fraction(&gradient_saliency(params, &input)?, spec.top_p)?;
    let boxes = anchor_boxes(&anchors, spec.dx, spec.dy, mask)?;
    let erase = erasure_mask(&boxes, mask);
    let erased_pixel_count = erase.count();
    let after = if erased_pixel_count == 0 {
        before.clone()
    } else {
        let modified = match spec.space {
            ErasureSpace::Raw => {
                normalize_image(&apply_erasure(&image.image, &boxes, mask).0, stats)?
            }
            ErasureSpace::Normalized => {
                let mut x = input;
                let values = x.values_mut();
                for (i, &hit) in erase.bits().iter().enumerate() {
                    if hit {
                        for ch in 0..CHANNELS {
                            values[ch * PLANE + i] = 0.0;
                        }
                    }
                }
                x
            }
        };
        ClassificationRecord::from_prediction(
            &image.id,
            image.label,
            predict(params, &modified)?,
            model_id,
        )
    };
    Ok(InterventionResult {
        flipped_to_true: after.predicted_label == image.label,
        before,
        after,
        erased_pixel_count,
        anchors,
        boxes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub top_p: Vec<f64>,
    pub dx: Vec<usize>,
    pub dy: Vec<usize>,
}

impl SweepGrid {
    /// Cells in row order: `top_p` outermost, then `dx`, then `dy`.
    pub fn cells(&self) -> Vec<(f64, usize, usize)> {
        let mut out = Vec::new();
        for &p in &self.top_p {
            for &dx in &self.dx {
                for &dy in &self.dy {
                    out.push((p, dx, dy));
                }
            }
        }
        out
    }
}

/// An image entering the sweep, with its optional spare mask.
#[derive(Debug, Clone, Copy)]
pub struct SweepItem<'a> {
    pub image: &'a LabeledImage,
    pub spare_mask: Option<&'a Mask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub top_p: f64,
    pub dx: usize,
    pub dy: usize,
    pub flip_rate: f64,
    pub collateral_rate: f64,
    /// Mean over every intervened image, misclassified and control.
    pub mean_erased_pixels: f64,
    pub misclassified: usize,
    pub flipped: usize,
    pub controls: usize,
    pub collateral: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    /// Upper bound on the correctly classified control set, taken in input
    /// order. `None` uses every correct image.
    pub max_controls: Option<usize>,
    pub space: ErasureSpace,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_controls: Some(200),
            space: ErasureSpace::Raw,
        }
    }
}

/// Runs every grid cell over the misclassified images and a control set of
/// correctly classified ones. Rates over an empty subset are 0.
pub fn sweep(
    params: &ModelParams,
    stats: &ChannelStats,
    items: &[SweepItem<'_>],
    grid: &SweepGrid,
    options: &SweepOptions,
    model_id: &str,
) -> Result<Vec<SweepRow>> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let correct: Vec<bool> = items
        .par_iter()
        .map(|it| {
            Ok(
                predict(params, &normalize_image(&it.image.image, stats)?)?.predicted_label
                    == it.image.label,
            )
        })
        .collect::<Result<_>>()?;
    let wrong: Vec<&SweepItem> = items
        .iter()
        .zip(&correct)
        .filter(|(_, &c)| !c)
        .map(|(it, _)| it)
        .collect();
    let limit = options.max_controls.unwrap_or(usize::MAX);
    let controls: Vec<&SweepItem> = items
        .iter()
        .zip(&correct)
        .filter(|(_, &c)| c)
        .map(|(it, _)| it)
        .take(limit)
        .collect();
    let subjects: Vec<&SweepItem> = wrong.iter().chain(&controls).copied().collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..subjects.len()).map(move |i| (c, i)))
        .collect();
    let outcomes: Vec<(bool, usize)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let (p, dx, dy) = cells[c];
            let it = subjects[i];
            let spec = InterventionSpec {
                top_p: p,
                dx,
                dy,
                spare_mask: it.spare_mask.cloned(),
                space: options.space,
            };
            let r = do_intervention(params, stats, it.image, &spec, model_id)?;
            Ok((r.after.is_correct(), r.erased_pixel_count))
        })
        .collect::<Result<_>>()?;
    let per_cell = subjects.len();
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(top_p, dx, dy))| {
            let chunk = &outcomes[c * per_cell..(c + 1) * per_cell];
            let (mis, ctl) = chunk.split_at(wrong.len());
            let flipped = mis.iter().filter(|o| o.0).count();
            let collateral = ctl.iter().filter(|o| !o.0).count();
            let erased: usize = chunk.iter().map(|o| o.1).sum();
            SweepRow {
                top_p,
                dx,
                dy,
                flip_rate: rate(flipped, mis.len()),
                collateral_rate: rate(collateral, ctl.len()),
                mean_erased_pixels: if per_cell == 0 {
                    0.0
                } else {
                    erased as f64 / per_cell as f64
                },
                misclassified: mis.len(),
                flipped,
                controls: ctl.len(),
                collateral,
            }
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
