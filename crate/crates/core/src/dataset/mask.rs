use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PLANE, SIDE};
use crate::error::{Error, IoContext, Result};

/// Axis-aligned pixel rectangle; `row`/`col` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row
            && row < self.row + self.height
            && col >= self.col
            && col < self.col + self.width
    }

    pub fn fits(&self) -> bool {
        self.height > 0
            && self.width > 0
            && self.row + self.height <= SIDE
            && self.col + self.width <= SIDE
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }
}

/// A 32x32 boolean grid over pixel positions (all channels share it).
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({} set)", self.count())
    }
}

impl Default for Mask {
    fn default() -> Self {
        Self::empty()
    }
}

impl Mask {
    pub fn empty() -> Self {
        Self {
            bits: vec![false; PLANE],
        }
    }

    pub fn from_rect(rect: &Rect) -> Self {
        let mut mask = Self::empty();
        for r in 0..SIDE {
            for c in 0..SIDE {
                if rect.contains(r, c) {
                    mask.set(r, c, true);
                }
            }
        }
        mask
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != PLANE {
            return Err(Error::Shape {
                expected: PLANE,
                actual: bits.len(),
            });
        }
        Ok(Self { bits })
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * SIDE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * SIDE + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !(a & b))
    }

    pub fn to_run_length(&self) -> RunLengthMask {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < PLANE {
            if self.bits[i] {
                let start = i;
                while i < PLANE && self.bits[i] {
                    i += 1;
                }
                runs.push([start, i - start]);
            } else {
                i += 1;
            }
        }
        RunLengthMask {
            height: SIDE,
            width: SIDE,
            runs,
        }
    }

    /// Loads a mask from a run-length `.json` file or from an image where
    /// any nonzero color marks a spared pixel.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let text = fs::read_to_string(path).at(path)?;
            let rle: RunLengthMask = serde_json::from_str(&text)?;
            return rle.to_mask();
        }
        let img = image::open(path)?.to_rgb8();
        if img.width() as usize != SIDE || img.height() as usize != SIDE {
            return Err(Error::Shape {
                expected: PLANE,
                actual: (img.width() * img.height()) as usize,
            });
        }
        let bits = img.pixels().map(|p| p.0.iter().any(|&v| v != 0)).collect();
        Self::from_bits(bits)
    }
}

/// Row-major run-length encoding: each run is `[start_index, length]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLengthMask {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<[usize; 2]>,
}

impl RunLengthMask {
    pub fn to_mask(&self) -> Result<Mask> {
        if self.height != SIDE || self.width != SIDE {
            return Err(Error::Shape {
                expected: PLANE,
                actual: self.height * self.width,
            });
        }
        let mut bits = vec![false; PLANE];
        for &[start, len] in &self.runs {
            let end = start
                .checked_add(len)
                .filter(|&e| e <= PLANE)
                .ok_or_else(|| {
                    Error::OutOfRange(format!("mask run [{start}, {len}] exceeds image"))
                })?;
            bits[start..end].iter_mut().for_each(|b| *b = true);
        }
        Ok(Mask { bits })
    }
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_run_length().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RunLengthMask::deserialize(d)?
            .to_mask()
            .map_err(serde::de::Error::custom)
    }
}
