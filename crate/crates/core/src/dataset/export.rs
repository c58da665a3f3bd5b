use std::fs;
use std::path::Path;

use super::{NormalizedImage, RawImage, CHANNELS, PLANE, SIDE};
use crate::error::{IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Png,
    /// Binary PPM (P6).
    Ppm,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ppm") => Self::Ppm,
            _ => Self::Png,
        }
    }
}

pub enum ExportImage<'a> {
    Raw(&'a RawImage),
    /// Mapped back to [0,255] by a per-channel affine min-max stretch.
    Normalized(&'a NormalizedImage),
}

impl ExportImage<'_> {
    /// Interleaved RGB bytes, row-major.
    pub fn to_rgb_bytes(&self) -> Vec<u8> {
        let planar: Vec<u8> = match self {
            ExportImage::Raw(img) => img.pixels().to_vec(),
            ExportImage::Normalized(img) => stretch(img),
        };
        let mut out = Vec::with_capacity(planar.len());
        for i in 0..PLANE {
            for c in 0..CHANNELS {
                out.push(planar[c * PLANE + i]);
            }
        }
        out
    }
}

fn stretch(img: &NormalizedImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHANNELS * PLANE);
    for plane in img.values().chunks_exact(PLANE) {
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        out.extend(plane.iter().map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
    }
    out
}

pub fn export_image(
    image: ExportImage<'_>,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let rgb = image.to_rgb_bytes();
    match format {
        ExportFormat::Ppm => {
            let mut bytes = format!("P6\n{SIDE} {SIDE}\n255\n").into_bytes();
            bytes.extend_from_slice(&rgb);
            fs::write(path, bytes).at(path)
        }
        ExportFormat::Png => {
            let buf = image::RgbImage::from_raw(SIDE as u32, SIDE as u32, rgb)
                .expect("buffer length matches dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)?;
            Ok(())
        }
    }
}
