//! Region features and the agent state vector.
//!
//! The state is `[o; h]`: a backbone feature vector for the region under the
//! current box followed by a one-hot encoding of the last ten actions.

use std::collections::VecDeque;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Action, BoundingBox};

pub const HISTORY_LEN: usize = 10;
pub const HISTORY_DIM: usize = HISTORY_LEN * Action::COUNT;
pub const BUILTIN_DIM: usize = 512;
pub const BUILTIN_NAME: &str = "builtin-512";

const PATCH: usize = 64;
const CELL: usize = 8;
const CELLS: usize = PATCH / CELL;
const ORIENTATION_BINS: usize = 6;
const VALUES_PER_CELL: usize = ORIENTATION_BINS + 2;
const NORM_EPS: f32 = 1e-2;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("box {0} is empty after rounding to pixels")]
    RegionCropFailure(BoundingBox),
    #[error("feature service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("feature service protocol error: {0}")]
    Protocol(String),
    #[error("feature service speaks protocol version {0}, expected 1")]
    ProtocolVersionMismatch(u8),
    #[error("feature service reported error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    pub name: String,
    pub dim: usize,
}

impl BackboneDescriptor {
    pub fn builtin() -> Self {
        Self {
            name: BUILTIN_NAME.to_string(),
            dim: BUILTIN_DIM,
        }
    }

    /// Input width of a Q-network fed by this backbone.
    pub fn state_dim(&self) -> usize {
        self.dim + HISTORY_DIM
    }
}

/// The concatenated `[features; history]` vector the agent observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState(pub Vec<f32>);

impl AgentState {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

pub trait FeatureExtractor {
    fn descriptor(&self) -> &BackboneDescriptor;

    fn extract(&mut self, image: &RgbImage, region: &BoundingBox) -> Result<FeatureVector, FeatureError>;
}

/// Pooled luminance-gradient features computed locally.
///
/// The region is resampled to 64x64; each of the 8x8 cells contributes a
/// six-bin unsigned orientation histogram (magnitude weighted, L2
/// normalised), its mean luminance and its mean red-green opponency.
#[derive(Debug, Clone)]
pub struct BuiltinExtractor {
    descriptor: BackboneDescriptor,
}

impl Default for BuiltinExtractor {
    fn default() -> Self {
        Self {
            descriptor: BackboneDescriptor::builtin(),
        }
    }
}

impl BuiltinExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn features(&self, image: &RgbImage, region: &BoundingBox) -> Result<FeatureVector, FeatureError> {
        let (x0, y0, x1, y1) = region.to_pixel_rect(image.width(), image.height());
        if x1 <= x0 || y1 <= y0 {
            return Err(FeatureError::RegionCropFailure(*region));
        }
        let (lum, rg) = resample(image, x0, y0, x1 - x0, y1 - y0);

        let idx = |x: usize, y: usize| y * PATCH + x;
        let mut out = vec![0.0f32; BUILTIN_DIM];
        let bin_width = std::f32::consts::PI / ORIENTATION_BINS as f32;
        let inv_cell = 1.0 / (CELL * CELL) as f32;
        for cy in 0..CELLS {
            for cx in 0..CELLS {
                let base = (cy * CELLS + cx) * VALUES_PER_CELL;
                let mut hist = [0.0f32; ORIENTATION_BINS];
                let (mut lum_sum, mut rg_sum) = (0.0f32, 0.0f32);
                for y in cy * CELL..(cy + 1) * CELL {
                    for x in cx * CELL..(cx + 1) * CELL {
                        let gx = 0.5 * (lum[idx((x + 1).min(PATCH - 1), y)] - lum[idx(x.saturating_sub(1), y)]);
                        let gy = 0.5 * (lum[idx(x, (y + 1).min(PATCH - 1))] - lum[idx(x, y.saturating_sub(1))]);
                        let mag = (gx * gx + gy * gy).sqrt();
                        if mag > 0.0 {
                            let mut theta = gy.atan2(gx);
                            if theta < 0.0 {
                                theta += std::f32::consts::PI;
                            }
                            let bin = ((theta / bin_width) as usize).min(ORIENTATION_BINS - 1);
                            hist[bin] += mag;
                        }
                        lum_sum += lum[idx(x, y)];
                        rg_sum += rg[idx(x, y)];
                    }
                }
                let norm = (hist.iter().map(|v| v * v).sum::<f32>() + NORM_EPS * NORM_EPS).sqrt();
                for (o, h) in out[base..base + ORIENTATION_BINS].iter_mut().zip(hist) {
                    *o = h / norm;
                }
                out[base + ORIENTATION_BINS] = lum_sum * inv_cell;
                out[base + ORIENTATION_BINS + 1] = rg_sum * inv_cell;
            }
        }
        Ok(FeatureVector(out))
    }
}

impl FeatureExtractor for BuiltinExtractor {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    fn extract(&mut self, image: &RgbImage, region: &BoundingBox) -> Result<FeatureVector, FeatureError> {
        self.features(image, region)
    }
}

impl<E: FeatureExtractor + ?Sized> FeatureExtractor for Box<E> {
    fn descriptor(&self) -> &BackboneDescriptor {
        (**self).descriptor()
    }

    fn extract(&mut self, image: &RgbImage, region: &BoundingBox) -> Result<FeatureVector, FeatureError> {
        (**self).extract(image, region)
    }
}

/// Bilinear resample of a pixel rectangle to a 64x64 luminance patch and a
/// matching red-green patch, both scaled to `[0, 1]` / `[-1, 1]`.
fn resample(image: &RgbImage, x0: u32, y0: u32, w: u32, h: u32) -> (Vec<f32>, Vec<f32>) {
    let mut lum = vec![0.0f32; PATCH * PATCH];
    let mut rg = vec![0.0f32; PATCH * PATCH];
    let sx = w as f32 / PATCH as f32;
    let sy = h as f32 / PATCH as f32;
    let px = |x: u32, y: u32| -> (f32, f32) {
        let p = image.get_pixel(x0 + x, y0 + y);
        let (r, g, b) = (f32::from(p[0]), f32::from(p[1]), f32::from(p[2]));
        ((0.299 * r + 0.587 * g + 0.114 * b) / 255.0, (r - g) / 255.0)
    };
    for y in 0..PATCH {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let ya = fy.floor() as u32;
        let yb = (ya + 1).min(h - 1);
        let ty = fy - ya as f32;
        for x in 0..PATCH {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let xa = fx.floor() as u32;
            let xb = (xa + 1).min(w - 1);
            let tx = fx - xa as f32;
            let (l00, c00) = px(xa, ya);
            let (l10, c10) = px(xb, ya);
            let (l01, c01) = px(xa, yb);
            let (l11, c11) = px(xb, yb);
            // lerp form keeps flat regions exactly flat
            let mix = |a: f32, b: f32, c: f32, d: f32| {
                let top = a + (b - a) * tx;
                let bottom = c + (d - c) * tx;
                top + (bottom - top) * ty
            };
            lum[y * PATCH + x] = mix(l00, l10, l01, l11);
            rg[y * PATCH + x] = mix(c00, c10, c01, c11);
        }
    }
    (lum, rg)
}

/// Shift register of the most recent actions, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionHistory {
    actions: VecDeque<Action>,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, action: Action) {
        if self.actions.len() == HISTORY_LEN {
            self.actions.pop_front();
        }
        self.actions.push_back(action);
    }

    pub fn clear(&mut self) {
        self.actions.clear();
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }

    pub fn encode(&self) -> Vec<f32> {
        let recent: Vec<Action> = self.actions.iter().copied().collect();
        encode_history(&recent)
    }
}

/// One-hot encodes up to the last ten actions into 90 values. Slots are
/// right-aligned so the newest action always occupies the final slot;
/// unused leading slots stay zero.
pub fn encode_history(history: &[Action]) -> Vec<f32> {
    let mut out = vec![0.0; HISTORY_DIM];
    let recent = &history[history.len().saturating_sub(HISTORY_LEN)..];
    let offset = HISTORY_LEN - recent.len();
    for (i, a) in recent.iter().enumerate() {
        out[(offset + i) * Action::COUNT + a.index()] = 1.0;
    }
    out
}

pub fn assemble_state(
    features: &FeatureVector,
    history: &[f32],
    backbone: &BackboneDescriptor,
) -> Result<AgentState, FeatureError> {
    if features.dim() != backbone.dim {
        return Err(FeatureError::DimensionMismatch {
            expected: backbone.dim,
            actual: features.dim(),
        });
    }
    if history.len() != HISTORY_DIM {
        return Err(FeatureError::DimensionMismatch {
            expected: HISTORY_DIM,
            actual: history.len(),
        });
    }
    let mut v = Vec::with_capacity(backbone.state_dim());
    v.extend_from_slice(&features.0);
    v.extend_from_slice(history);
    Ok(AgentState(v))
}
