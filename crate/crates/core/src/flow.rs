//! Dense motion fields for synthetic frame sequences.
//!
//! [`block_matching_flow`] is an exhaustive sum-of-absolute-differences block
//! matcher that stands in for a real optical-flow estimator. Shot summaries
//! are the per-pixel mean of the fields computed over sampled frame pairs.

use rayon::prelude::*;

use crate::datastore::FlowSummary;
use crate::error::{Error, Result};

/// A grayscale frame, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGray {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

impl FrameGray {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("frame dimensions must be positive".into()));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::dims(width as usize * height as usize, pixels.len()));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// Per-pixel displacement `(dx, dy)` in pixels per frame step, stored
/// `height × width × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 2 {
            return Err(Error::dims(width as usize * height as usize * 2, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("flow field has non-finite entries".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: u32, height: u32, dx: f32, dy: f32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            data: (0..n).flat_map(|_| [dx, dy]).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, x: u32, y: u32) -> (f32, f32) {
        let i = (y as usize * self.width as usize + x as usize) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn into_summary(self, movie_id: impl Into<String>, shot_index: u32) -> Result<FlowSummary> {
        FlowSummary::new(movie_id, shot_index, self.width, self.height, self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatchParams {
    pub block: u32,
    pub search_radius: u32,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            block: 8,
            search_radius: 4,
        }
    }
}

fn sad(f1: &FrameGray, f2: &FrameGray, x0: u32, y0: u32, dx: i64, dy: i64, block: u32) -> f64 {
    let mut total = 0f64;
    for j in 0..block {
        let y1 = y0 + j;
        let y2 = (i64::from(y1) + dy) as u32;
        for i in 0..block {
            let x1 = x0 + i;
            let x2 = (i64::from(x1) + dx) as u32;
            total += f64::from((f1.at(x1, y1) - f2.at(x2, y2)).abs());
        }
    }
    total
}

/// Integer displacement of each `block × block` tile of `f1` that minimizes
/// SAD against `f2`, broadcast to the tile's pixels.
///
/// The search window is clamped so the displaced tile stays inside the frame.
/// Ties go to the smallest `dx² + dy²`, then to the smallest `(dy, dx)`.
pub fn block_matching_flow(f1: &FrameGray, f2: &FrameGray, params: BlockMatchParams) -> Result<FlowField> {
    let BlockMatchParams { block, search_radius } = params;
    if f1.width != f2.width || f1.height != f2.height {
        return Err(Error::dims(
            format!("{}x{}", f1.width, f1.height),
            format!("{}x{}", f2.width, f2.height),
        ));
    }
    if block == 0 || search_radius == 0 {
        return Err(Error::InvalidArgument("block and search radius must be positive".into()));
    }
    if f1.width % block != 0 || f1.height % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "block {block} does not divide {}x{}",
            f1.width, f1.height
        )));
    }
    let (bw, bh) = (f1.width / block, f1.height / block);
    let r = i64::from(search_radius);

    let vectors: Vec<(i64, i64)> = (0..bw * bh)
        .into_par_iter()
        .map(|b| {
            let (x0, y0) = ((b % bw) * block, (b / bw) * block);
            let dx_lo = (-r).max(-i64::from(x0));
            let dx_hi = r.min(i64::from(f1.width - block - x0));
            let dy_lo = (-r).max(-i64::from(y0));
            let dy_hi = r.min(i64::from(f1.height - block - y0));
            let mut best = (f64::INFINITY, i64::MAX, 0i64, 0i64);
            for dy in dy_lo..=dy_hi {
                for dx in dx_lo..=dx_hi {
                    let key = (sad(f1, f2, x0, y0, dx, dy, block), dx * dx + dy * dy, dy, dx);
                    if key.0 < best.0
                        || (key.0 == best.0 && (key.1, key.2, key.3) < (best.1, best.2, best.3))
                    {
                        best = key;
                    }
                }
            }
            (best.3, best.2)
        })
        .collect();

    let mut data = vec![0f32; f1.width as usize * f1.height as usize * 2];
    for y in 0..f1.height {
        for x in 0..f1.width {
            let (dx, dy) = vectors[((y / block) * bw + x / block) as usize];
            let i = (y as usize * f1.width as usize + x as usize) * 2;
            data[i] = dx as f32;
            data[i + 1] = dy as f32;
        }
    }
    FlowField::new(f1.width, f1.height, data)
}

/// Per-pixel arithmetic mean of the given fields.
pub fn average_flow(fields: &[FlowField]) -> Result<FlowField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of flow fields".into()))?;
    if let Some(bad) = fields
        .iter()
        .find(|f| f.width != first.width || f.height != first.height)
    {
        return Err(Error::dims(
            format!("{}x{}", first.width, first.height),
            format!("{}x{}", bad.width, bad.height),
        ));
    }
    let mut acc = vec![0f64; first.data.len()];
    for f in fields {
        for (a, v) in acc.iter_mut().zip(&f.data) {
            *a += f64::from(*v);
        }
    }
    let n = fields.len() as f64;
    FlowField::new(
        first.width,
        first.height,
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    )
}

/// Flow over frame pairs `(t, t + stride)` for `t = 0, stride, 2·stride, …`,
/// averaged. The mean is over the sampled pairs; fields are not rescaled by
/// the stride.
pub fn shot_flow_summary(frames: &[FrameGray], stride: usize, params: BlockMatchParams) -> Result<FlowField> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if frames.len() < stride + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} frames are too few for stride {stride}",
            frames.len()
        )));
    }
    let fields = (0..frames.len() - stride)
        .step_by(stride)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&t| block_matching_flow(&frames[t], &frames[t + stride], params))
        .collect::<Result<Vec<_>>>()?;
    average_flow(&fields)
}

/// Number of frame pairs [`shot_flow_summary`] samples.
pub fn sampled_pair_count(frame_count: usize, stride: usize) -> usize {
    if stride == 0 || frame_count <= stride {
        0
    } else {
        (frame_count - stride - 1) / stride + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(offset_x: u32, offset_y: u32) -> FrameGray {
        FrameGray::from_fn(16, 16, |x, y| {
            if (offset_x..offset_x + 4).contains(&x) && (offset_y..offset_y + 4).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    fn params(block: u32, radius: u32) -> BlockMatchParams {
        BlockMatchParams {
            block,
            search_radius: radius,
        }
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let f = square(4, 4);
        let flow = block_matching_flow(&f, &f, params(4, 3)).unwrap();
        assert_eq!(flow.max_abs(), 0.0);
    }

    #[test]
    fn translated_square_is_recovered() {
        let flow = block_matching_flow(&square(4, 4), &square(6, 5), params(4, 3)).unwrap();
        for y in 4..8 {
            for x in 4..8 {
                assert_eq!(flow.at(x, y), (2.0, 1.0));
            }
        }
    }

    #[test]
    fn textureless_frames_prefer_zero_motion() {
        let f = FrameGray::from_fn(8, 8, |_, _| 0.5).unwrap();
        assert_eq!(block_matching_flow(&f, &f, params(4, 2)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn block_must_divide_frame() {
        let f = square(0, 0);
        assert!(block_matching_flow(&f, &f, params(5, 2)).is_err());
        let g = FrameGray::from_fn(8, 16, |_, _| 0.0).unwrap();
        assert!(block_matching_flow(&f, &g, params(4, 2)).is_err());
    }

    #[test]
    fn averaging() {
        let a = FlowField::constant(3, 2, 1.0, 0.0);
        let b = FlowField::constant(3, 2, 0.0, 1.0);
        assert_eq!(average_flow(&[a.clone(), b]).unwrap(), FlowField::constant(3, 2, 0.5, 0.5));
        assert_eq!(average_flow(std::slice::from_ref(&a)).unwrap(), a);
        assert!(average_flow(&[]).is_err());
        assert!(average_flow(&[a, FlowField::constant(2, 2, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn sampled_pairs() {
        assert_eq!(sampled_pair_count(3, 1), 2);
        assert_eq!(sampled_pair_count(9, 4), 2);
        assert_eq!(sampled_pair_count(8, 4), 1);
        assert_eq!(sampled_pair_count(4, 4), 0);
        assert!(shot_flow_summary(&vec![square(0, 0); 4], 4, params(4, 2)).is_err());
    }

    /// Deterministic texture on the integer plane.
    pub(crate) fn texture(x: i64, y: i64) -> f32 {
        let h = ((x as f64) * 12.9898 + (y as f64) * 78.233).sin() * 43_758.545_3;
        (h - h.floor()) as f32
    }

    #[test]
    fn constant_motion_summary_equals_pair_field() {
        // Content moves (1, 0) per frame; stride 4 gives a (4, 0) shift per pair.
        let frames: Vec<FrameGray> = (0..9)
            .map(|t| FrameGray::from_fn(32, 32, |x, y| texture(i64::from(x) - t, i64::from(y))).unwrap())
            .collect();
        let p = params(8, 4);
        let summary = shot_flow_summary(&frames, 4, p).unwrap();
        let single = block_matching_flow(&frames[0], &frames[4], p).unwrap();
        // Tiles whose true match stays in frame: every column but the last.
        for y in 0..32 {
            for x in 0..24 {
                assert_eq!(summary.at(x, y), (4.0, 0.0));
                assert_eq!(single.at(x, y), (4.0, 0.0));
            }
        }
    }
}
