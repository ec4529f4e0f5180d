//! Binary instance masks and their run-length encoding.
//!
//! Pixels are addressed row-major: pixel `(x, y)` lives at bit `y * width + x`.
//! The run-length form alternates background and foreground runs, starting
//! with a (possibly empty) background run, and must cover exactly
//! `width * height` pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `width × height` grid of bits packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl BitMask {
    pub fn empty(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    /// Builds a mask with the given `(x, y)` pixels set.
    pub fn from_pixels(width: u32, height: u32, pixels: &[(u32, u32)]) -> Result<Self> {
        let mut mask = Self::empty(width, height);
        for &(x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::InvalidArgument(format!(
                    "pixel ({x}, {y}) outside {width}x{height} mask"
                )));
            }
            mask.set(x, y, true);
        }
        Ok(mask)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    /// Number of set pixels.
    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn same_shape(&self, other: &BitMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_shape(&self, other: &BitMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub fn intersection_count(&self, other: &BitMask) -> Result<u64> {
        self.check_shape(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum())
    }

    pub fn union_count(&self, other: &BitMask) -> Result<u64> {
        self.check_shape(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a | b).count_ones()))
            .sum())
    }

    pub fn intersection(&self, other: &BitMask) -> Result<BitMask> {
        self.check_shape(other)?;
        Ok(BitMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn union_with(&mut self, other: &BitMask) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// Encodes as alternating background/foreground run lengths.
    pub fn to_rle(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for i in 0..self.len() {
            let bit = self.words[i / 64] >> (i % 64) & 1 == 1;
            if bit != current {
                runs.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        runs.push(run);
        runs
    }

    pub fn from_rle(width: u32, height: u32, runs: &[u64]) -> Result<Self> {
        let total: u64 = runs.iter().sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::Format(format!(
                "rle covers {total} pixels, mask has {expected}"
            )));
        }
        let mut mask = Self::empty(width, height);
        let mut pos = 0usize;
        for (k, &run) in runs.iter().enumerate() {
            let run = run as usize;
            if k % 2 == 1 {
                for i in pos..pos + run {
                    mask.words[i / 64] |= 1 << (i % 64);
                }
            }
            pos += run;
        }
        Ok(mask)
    }
}

/// Instance-level person masks for the center frame of one shot.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub movie_id: String,
    pub shot_index: u32,
    width: u32,
    height: u32,
    instances: Vec<BitMask>,
}

impl MaskSet {
    pub fn new(
        movie_id: impl Into<String>,
        shot_index: u32,
        width: u32,
        height: u32,
        instances: Vec<BitMask>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("mask dimensions must be positive".into()));
        }
        if let Some(bad) = instances
            .iter()
            .find(|m| m.width() != width || m.height() != height)
        {
            return Err(Error::dims(
                format!("{width}x{height}"),
                format!("{}x{}", bad.width(), bad.height()),
            ));
        }
        Ok(Self {
            movie_id: movie_id.into(),
            shot_index,
            width,
            height,
            instances,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn instances(&self) -> &[BitMask] {
        &self.instances
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    /// Union of all instance masks.
    pub fn union(&self) -> BitMask {
        let mut acc = BitMask::empty(self.width, self.height);
        for m in &self.instances {
            // Shapes were validated at construction.
            acc.union_with(m).expect("instance shape checked in MaskSet::new");
        }
        acc
    }
}

/// JSON layout of `masks.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MasksFile {
    pub width: u32,
    pub height: u32,
    pub shots: Vec<MaskShotEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MaskShotEntry {
    pub shot_index: u32,
    /// One run-length list per instance.
    pub instances: Vec<Vec<u64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_starts_with_background_run() {
        let m = BitMask::from_pixels(3, 2, &[(0, 0), (1, 0), (2, 1)]).unwrap();
        assert_eq!(m.to_rle(), vec![0, 2, 3, 1]);
        assert_eq!(BitMask::from_rle(3, 2, &[0, 2, 3, 1]).unwrap(), m);
    }

    #[test]
    fn rle_length_must_match_grid() {
        let err = BitMask::from_rle(2, 2, &[1, 2]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn union_and_counts() {
        let a = BitMask::from_pixels(4, 4, &[(0, 0), (1, 0)]).unwrap();
        let b = BitMask::from_pixels(4, 4, &[(1, 0), (2, 0)]).unwrap();
        assert_eq!(a.intersection_count(&b).unwrap(), 1);
        assert_eq!(a.union_count(&b).unwrap(), 3);
        let set = MaskSet::new("m", 1, 4, 4, vec![a, b]).unwrap();
        assert_eq!(set.union().count(), 3);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = BitMask::empty(4, 4);
        let b = BitMask::empty(4, 5);
        assert!(a.intersection_count(&b).is_err());
        assert!(MaskSet::new("m", 1, 4, 4, vec![b]).is_err());
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        assert!(BitMask::from_pixels(2, 2, &[(2, 0)]).is_err());
    }
}
