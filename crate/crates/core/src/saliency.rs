//! Saliency maps and grid-based saliency ranking.
//!
//! The saliency map is a reduced Itti-Koch model: Gaussian pyramids over an
//! intensity channel and two colour-opponent channels, center-surround
//! differences across scales, per-map peak normalisation, and a bilinear
//! upsample back to the input resolution.
//!
//! Ranking splits the map into a `k x k` grid and scores every segment by
//! the normalised entropy of its saliency histogram, a center-bias term and
//! an optional depth term. The top fraction of segments defines the initial
//! box.

use std::io::Write;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoundingBox};

pub const MIN_IMAGE_SIDE: u32 = 16;

/// Pyramid depth: the base image plus this many 2x reductions.
const PYRAMID_REDUCTIONS: usize = 6;
const CENTER_LEVELS: [usize; 2] = [2, 3];
const SURROUND_OFFSETS: [usize; 2] = [2, 3];
const FLAT_EPS: f32 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaliencyError {
    #[error("image {width}x{height} is smaller than the {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("histogram has no samples")]
    EmptyHistogram,
    #[error("invalid SaRa configuration: {0}")]
    InvalidConfig(String),
}

/// Single-channel float raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl SaliencyMap {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Location of the largest value (first in raster order on ties).
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best as u32 % self.width, best as u32 / self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaraConfig {
    pub k: usize,
    pub threshold: f64,
    pub iterations: usize,
    pub histogram_bins: usize,
}

impl Default for SaraConfig {
    fn default() -> Self {
        Self {
            k: 9,
            threshold: 0.30,
            iterations: 1,
            histogram_bins: 256,
        }
    }
}

impl SaraConfig {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if self.k < 2 {
            return Err(SaliencyError::InvalidConfig(format!("k = {} must be >= 2", self.k)));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(SaliencyError::InvalidConfig(format!(
                "threshold = {} must lie in (0, 1]",
                self.threshold
            )));
        }
        if self.iterations == 0 {
            return Err(SaliencyError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.histogram_bins < 2 {
            return Err(SaliencyError::InvalidConfig("histogram_bins must be >= 2".into()));
        }
        Ok(())
    }

    /// Number of top-ranked segments kept: `floor(threshold * k^2)`, at least one.
    pub fn selected_count(&self) -> usize {
        let total = self.k * self.k;
        let n = (self.threshold * total as f64 + 1e-9).floor() as usize;
        n.clamp(1, total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub row: usize,
    pub col: usize,
    /// Pixel extent `[x0, x1) x [y0, y1)`.
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    /// Raw entropy in bits.
    pub entropy: f64,
    pub entropy_norm: f64,
    pub center_bias: f64,
    pub depth_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyGrid {
    pub k: usize,
    pub segments: Vec<Segment>,
}

impl SaliencyGrid {
    /// Segment indices ordered by descending score, ties by (row, col).
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.segments.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (&self.segments[a], &self.segments[b]);
            sb.score
                .total_cmp(&sa.score)
                .then((sa.row, sa.col).cmp(&(sb.row, sb.col)))
        });
        order
    }

    /// Smallest rectangle covering the top `count` segments.
    pub fn covering_box(&self, count: usize) -> BoundingBox {
        let order = self.ranking();
        let picked = &order[..count.clamp(1, order.len())];
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for &i in picked {
            let s = &self.segments[i];
            x0 = x0.min(s.x0);
            y0 = y0.min(s.y0);
            x1 = x1.max(s.x1);
            y1 = y1.max(s.y1);
        }
        BoundingBox {
            x1: f64::from(x0),
            y1: f64::from(y0),
            x2: f64::from(x1),
            y2: f64::from(y1),
        }
    }
}

/// Shannon entropy in bits of a histogram of counts.
pub fn entropy(histogram: &[u64]) -> Result<f64, SaliencyError> {
    let total: u64 = histogram.iter().sum();
    if total == 0 {
        return Err(SaliencyError::EmptyHistogram);
    }
    let total = total as f64;
    let h = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, data: vec![0.0; w * h] }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    fn blur_decimate(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut tmp = Plane::new(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (t, k) in K.iter().enumerate() {
                    acc += k * self.at(clampi(x as isize + t as isize - 2, self.w), y);
                }
                tmp.data[y * self.w + x] = acc;
            }
        }
        let (nw, nh) = (self.w.div_ceil(2).max(1), self.h.div_ceil(2).max(1));
        let mut out = Plane::new(nw, nh);
        for y in 0..nh {
            for x in 0..nw {
                let sy = (2 * y).min(self.h - 1);
                let mut acc = 0.0;
                for (t, k) in K.iter().enumerate() {
                    acc += k * tmp.at((2 * x).min(self.w - 1), clampi(sy as isize + t as isize - 2, self.h));
                }
                out.data[y * nw + x] = acc;
            }
        }
        out
    }

    /// Bilinear resample to `w x h` with pixel-center alignment.
    fn resize(&self, w: usize, h: usize) -> Plane {
        let mut out = Plane::new(w, h);
        let sx = self.w as f32 / w as f32;
        let sy = self.h as f32 / h as f32;
        for y in 0..h {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let tx = fx - x0 as f32;
                let top = self.at(x0, y0) * (1.0 - tx) + self.at(x1, y0) * tx;
                let bottom = self.at(x0, y1) * (1.0 - tx) + self.at(x1, y1) * tx;
                out.data[y * w + x] = top * (1.0 - ty) + bottom * ty;
            }
        }
        out
    }

    /// Scales to peak 1; near-flat maps become all zeros.
    fn peak_normalize(&mut self) {
        let m = self.max();
        if m <= FLAT_EPS {
            self.data.iter_mut().for_each(|v| *v = 0.0);
        } else {
            self.data.iter_mut().for_each(|v| *v /= m);
        }
    }

    fn add_assign(&mut self, other: &Plane) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn pyramid(base: Plane) -> Vec<Plane> {
    let mut levels = Vec::with_capacity(PYRAMID_REDUCTIONS + 1);
    levels.push(base);
    for _ in 0..PYRAMID_REDUCTIONS {
        let next = levels.last().expect("non-empty").blur_decimate();
        levels.push(next);
    }
    levels
}

/// Summed, peak-normalised center-surround maps of one channel, at the
/// resolution of the finest center level.
fn conspicuity(levels: &[Plane]) -> Plane {
    let target = &levels[CENTER_LEVELS[0]];
    let mut acc = Plane::new(target.w, target.h);
    for &c in &CENTER_LEVELS {
        for &d in &SURROUND_OFFSETS {
            let s = c + d;
            if s >= levels.len() {
                continue;
            }
            let center = &levels[c];
            let surround = levels[s].resize(center.w, center.h);
            let mut diff = Plane::new(center.w, center.h);
            for (o, (a, b)) in diff.data.iter_mut().zip(center.data.iter().zip(&surround.data)) {
                *o = (a - b).abs();
            }
            diff.peak_normalize();
            let diff = if center.w == target.w && center.h == target.h {
                diff
            } else {
                diff.resize(target.w, target.h)
            };
            acc.add_assign(&diff);
        }
    }
    acc.peak_normalize();
    acc
}

/// Computes a saliency map in `[0, 1]` with the same dimensions as `image`.
/// A featureless image yields an all-zero map.
pub fn compute_saliency_map(image: &RgbImage) -> Result<SaliencyMap, SaliencyError> {
    let (width, height) = image.dimensions();
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(SaliencyError::ImageTooSmall { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let mut intensity = Plane::new(w, h);
    let mut red_green = Plane::new(w, h);
    let mut blue_yellow = Plane::new(w, h);
    for (i, p) in image.pixels().enumerate() {
        let r = f32::from(p[0]) / 255.0;
        let g = f32::from(p[1]) / 255.0;
        let b = f32::from(p[2]) / 255.0;
        intensity.data[i] = (r + g + b) / 3.0;
        red_green.data[i] = r - g;
        blue_yellow.data[i] = b - 0.5 * (r + g);
    }

    let mut total = conspicuity(&pyramid(intensity));
    total.add_assign(&conspicuity(&pyramid(red_green)));
    total.add_assign(&conspicuity(&pyramid(blue_yellow)));
    let mut full = total.resize(w, h);

    let lo = full.data.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = full.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo <= FLAT_EPS {
        full.data.iter_mut().for_each(|v| *v = 0.0);
    } else {
        full.data.iter_mut().for_each(|v| *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0));
    }
    Ok(SaliencyMap {
        width,
        height,
        values: full.data,
    })
}

/// Derives segment scores from a saliency map. `depth`, when given, must
/// match the map's dimensions and hold proximity values in `[0, 1]`; its
/// per-segment mean becomes the depth score.
pub fn rank_segments(
    map: &SaliencyMap,
    config: &SaraConfig,
    depth: Option<&SaliencyMap>,
) -> SaliencyGrid {
    let k = config.k;
    let bins = config.histogram_bins;
    let (w, h) = (map.width, map.height);
    let (cx, cy) = (f64::from(w) * 0.5, f64::from(h) * 0.5);
    let d_max = (cx * cx + cy * cy).sqrt();
    let max_entropy = (bins as f64).log2();
    let depth = depth.filter(|d| d.width == w && d.height == h);

    let mut segments = Vec::with_capacity(k * k);
    let mut hist = vec![0u64; bins];
    for row in 0..k {
        let y0 = (row as u64 * u64::from(h) / k as u64) as u32;
        let y1 = ((row as u64 + 1) * u64::from(h) / k as u64) as u32;
        for col in 0..k {
            let x0 = (col as u64 * u64::from(w) / k as u64) as u32;
            let x1 = ((col as u64 + 1) * u64::from(w) / k as u64) as u32;
            hist.iter_mut().for_each(|c| *c = 0);
            let mut depth_sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = map.get(x, y);
                    let bin = ((v * bins as f32) as usize).min(bins - 1);
                    hist[bin] += 1;
                    if let Some(d) = depth {
                        depth_sum += f64::from(d.get(x, y).clamp(0.0, 1.0));
                    }
                }
            }
            let pixels = u64::from(x1 - x0) * u64::from(y1 - y0);
            let ent = entropy(&hist).unwrap_or(0.0);
            let entropy_norm = (ent / max_entropy).clamp(0.0, 1.0);
            let (sx, sy) = (f64::from(x0 + x1) * 0.5, f64::from(y0 + y1) * 0.5);
            let dist = ((sx - cx).powi(2) + (sy - cy).powi(2)).sqrt();
            let center_bias = (1.0 - dist / d_max).clamp(0.0, 1.0);
            let depth_score = if depth.is_some() && pixels > 0 {
                depth_sum / pixels as f64
            } else {
                0.0
            };
            segments.push(Segment {
                row,
                col,
                x0,
                y0,
                x1,
                y1,
                entropy: ent,
                entropy_norm,
                center_bias,
                depth_score,
                score: entropy_norm + center_bias + depth_score,
            });
        }
    }
    SaliencyGrid { k, segments }
}

/// Minimal rectangle around the highest-ranked segments of `image`; with
/// more than one iteration the procedure is repeated on the crop.
pub fn initial_box(image: &RgbImage, config: &SaraConfig) -> Result<BoundingBox, SaliencyError> {
    config.validate()?;
    let map = compute_saliency_map(image)?;
    let grid = rank_segments(&map, config, None);
    refine_from_grid(image, &grid, config)
}

fn refine_from_grid(
    image: &RgbImage,
    grid: &SaliencyGrid,
    config: &SaraConfig,
) -> Result<BoundingBox, SaliencyError> {
    let mut current = grid.covering_box(config.selected_count());
    for _ in 1..config.iterations {
        let (x0, y0, x1, y1) = current.to_pixel_rect(image.width(), image.height());
        if x1 - x0 < MIN_IMAGE_SIDE || y1 - y0 < MIN_IMAGE_SIDE {
            break;
        }
        let crop = image::imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
        let map = compute_saliency_map(&crop)?;
        let inner = rank_segments(&map, config, None).covering_box(config.selected_count());
        current = BoundingBox {
            x1: inner.x1 + f64::from(x0),
            y1: inner.y1 + f64::from(y0),
            x2: inner.x2 + f64::from(x0),
            y2: inner.y2 + f64::from(y0),
        };
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub iterations: usize,
    pub avg_iou: f64,
    pub n_images: usize,
}

/// Average IoU between the initial box and the closest ground-truth box for
/// every `(threshold, iterations)` pair, thresholds varying fastest.
pub fn sweep_thresholds(
    dataset: &[(&RgbImage, Vec<BoundingBox>)],
    base: &SaraConfig,
    thresholds: &[f64],
    iterations: &[usize],
) -> Result<Vec<SweepRow>, SaliencyError> {
    let mut rows = Vec::new();
    if thresholds.is_empty() || iterations.is_empty() || dataset.is_empty() {
        return Ok(rows);
    }
    let grids = dataset
        .iter()
        .map(|(img, _)| compute_saliency_map(img).map(|m| rank_segments(&m, base, None)))
        .collect::<Result<Vec<_>, _>>()?;
    for &iters in iterations {
        for &t in thresholds {
            let cfg = SaraConfig {
                threshold: t,
                iterations: iters,
                ..*base
            };
            cfg.validate()?;
            let mut sum = 0.0;
            for ((img, gts), grid) in dataset.iter().zip(&grids) {
                let b = refine_from_grid(img, grid, &cfg)?;
                sum += gts.iter().map(|g| iou(&b, g)).fold(0.0, f64::max);
            }
            rows.push(SweepRow {
                threshold: t,
                iterations: iters,
                avg_iou: sum / dataset.len() as f64,
                n_images: dataset.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,iterations,avg_iou,n_images")?;
    for r in rows {
        writeln!(
            out,
            "{:.6},{},{:.6},{}",
            r.threshold, r.iterations, r.avg_iou, r.n_images
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn flat_map(w: u32, h: u32, v: f32) -> SaliencyMap {
        SaliencyMap {
            width: w,
            height: h,
            values: vec![v; (w * h) as usize],
        }
    }

    #[test]
    fn entropy_edge_cases() {
        assert_eq!(entropy(&[1u64; 256]).unwrap(), 8.0);
        assert_eq!(entropy(&[0, 7, 0]).unwrap(), 0.0);
        assert_eq!(entropy(&[3, 3]).unwrap(), 1.0);
        assert_eq!(entropy(&[0, 0]), Err(SaliencyError::EmptyHistogram));
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let img = RgbImage::from_pixel(40, 30, Rgb([128, 128, 128]));
        let map = compute_saliency_map(&img).unwrap();
        assert_eq!((map.width, map.height), (40, 30));
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_image_rejected() {
        let img = RgbImage::new(15, 40);
        assert_eq!(
            compute_saliency_map(&img),
            Err(SaliencyError::ImageTooSmall { width: 15, height: 40 })
        );
    }

    #[test]
    fn white_square_is_salient() {
        let mut img = RgbImage::new(128, 128);
        for y in 80..112 {
            for x in 16..48 {
                img.put_pixel(x, y, Rgb([255, 255, 255]));
            }
        }
        let map = compute_saliency_map(&img).unwrap();
        assert!(map.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(map.max_value(), 1.0);
        let (mx, my) = map.argmax();
        // the square's neighbourhood on the 9x9 grid (one cell of slack)
        assert!((16 - 14..48 + 14).contains(&mx), "x = {mx}");
        assert!((80 - 14..112 + 14).contains(&my), "y = {my}");
    }

    #[test]
    fn grid_has_k_squared_segments_with_even_areas() {
        let map = flat_map(100, 77, 0.0);
        let grid = rank_segments(&map, &SaraConfig::default(), None);
        assert_eq!(grid.segments.len(), 81);
        let widths: Vec<u32> = grid.segments.iter().map(|s| s.x1 - s.x0).collect();
        let heights: Vec<u32> = grid.segments.iter().map(|s| s.y1 - s.y0).collect();
        assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
        assert!(heights.iter().max().unwrap() - heights.iter().min().unwrap() <= 1);
        let area: u32 = grid.segments.iter().map(|s| (s.x1 - s.x0) * (s.y1 - s.y0)).sum();
        assert_eq!(area, 100 * 77);
    }

    #[test]
    fn constant_map_ranks_center_first() {
        let map = flat_map(90, 90, 0.5);
        let grid = rank_segments(&map, &SaraConfig::default(), None);
        assert!(grid.segments.iter().all(|s| s.entropy == 0.0 && s.depth_score == 0.0));
        let top = grid.ranking()[0];
        assert_eq!((grid.segments[top].row, grid.segments[top].col), (4, 4));
        for s in &grid.segments {
            assert_eq!(s.score, s.entropy_norm + s.center_bias + s.depth_score);
        }
    }

    #[test]
    fn salient_top_left_ranks_first() {
        // The top-left 10x10 segment holds 100 distinct levels, one per bin:
        // H = log2(100) / log2(128) = 0.949, CB = 1 - 40/45 = 0.111.
        // The centre segment is flat: H = 0, CB = 1. So 1.060 beats 1.0.
        let mut map = flat_map(90, 90, 0.0);
        for y in 0..10u32 {
            for x in 0..10u32 {
                map.values[(y * 90 + x) as usize] = (x + 10 * y) as f32 / 100.0;
            }
        }
        let cfg = SaraConfig {
            histogram_bins: 128,
            ..SaraConfig::default()
        };
        let grid = rank_segments(&map, &cfg, None);
        let tl = &grid.segments[0];
        assert!((tl.entropy - 100f64.log2()).abs() < 1e-12);
        assert!((tl.center_bias - (1.0 - 40.0 / 45.0)).abs() < 1e-12);
        assert!((tl.score - (100f64.log2() / 7.0 + 1.0 - 40.0 / 45.0)).abs() < 1e-12);
        assert_eq!(grid.ranking()[0], 0);
    }

    #[test]
    fn selected_counts() {
        let cfg = SaraConfig::default();
        assert_eq!(cfg.selected_count(), 24);
        assert_eq!(SaraConfig { threshold: 1.0, ..cfg }.selected_count(), 81);
        assert_eq!(SaraConfig { threshold: 0.1, ..cfg }.selected_count(), 8);
    }

    #[test]
    fn full_threshold_gives_full_image() {
        let mut img = RgbImage::from_pixel(60, 50, Rgb([10, 10, 10]));
        img.put_pixel(5, 5, Rgb([250, 250, 250]));
        let cfg = SaraConfig { threshold: 1.0, ..SaraConfig::default() };
        assert_eq!(initial_box(&img, &cfg).unwrap(), BoundingBox::full_image(60, 50));
    }

    #[test]
    fn bright_quadrant_found() {
        let mut img = RgbImage::from_pixel(256, 256, Rgb([20, 20, 20]));
        for y in 0..128 {
            for x in 128..256 {
                img.put_pixel(x, y, Rgb([230, 230, 230]));
            }
        }
        let quadrant = BoundingBox::new(128.0, 0.0, 256.0, 128.0).unwrap();
        let b = initial_box(&img, &SaraConfig::default()).unwrap();
        assert!(b.is_within(256, 256));
        assert!(iou(&b, &quadrant) >= 0.3, "box {b}");
    }

    #[test]
    fn thresholds_are_monotone() {
        let mut img = RgbImage::from_pixel(96, 96, Rgb([30, 30, 30]));
        for y in 10..40 {
            for x in 50..90 {
                img.put_pixel(x, y, Rgb([220, 200, 210]));
            }
        }
        let map = compute_saliency_map(&img).unwrap();
        let grid = rank_segments(&map, &SaraConfig::default(), None);
        let order = grid.ranking();
        assert_eq!(order, rank_segments(&map, &SaraConfig::default(), None).ranking());
        let pick = |t: f64| {
            let n = SaraConfig { threshold: t, ..SaraConfig::default() }.selected_count();
            order[..n].to_vec()
        };
        for w in [0.1, 0.2, 0.3, 0.5, 0.8, 1.0].windows(2) {
            let (small, large) = (pick(w[0]), pick(w[1]));
            assert!(small.iter().all(|i| large.contains(i)));
        }
    }

    #[test]
    fn sweep_edge_cases() {
        let img = RgbImage::from_pixel(32, 32, Rgb([0, 0, 0]));
        let gt = vec![BoundingBox::full_image(32, 32)];
        let data = vec![(&img, gt)];
        let rows = sweep_thresholds(&data, &SaraConfig::default(), &[1.0], &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].avg_iou, 1.0);
        assert!(sweep_thresholds(&data, &SaraConfig::default(), &[], &[1]).unwrap().is_empty());
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "threshold,iterations,avg_iou,n_images\n1.000000,1,1.000000,1\n"
        );
    }
}
