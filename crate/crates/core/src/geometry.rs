//! Axis-aligned box arithmetic and the discrete box transformations.
//!
//! Coordinates are continuous pixel positions with half-open semantics:
//! a box `(x1, y1, x2, y2)` covers `x1 <= x < x2`, `y1 <= y < y2`. Rounding
//! to integer pixels only happens when a box is cropped or drawn.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest side length, in pixels, that a transformed box may have.
pub const MIN_SIDE: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): need x1 < x2 and y1 < y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("TRIGGER does not transform the box")]
    TriggerNotATransform,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// The box covering an entire `width` x `height` image.
    pub fn full_image(width: u32, height: u32) -> Self {
        Self {
            x1: 0.0,
            y1: 0.0,
            x2: f64::from(width.max(1)),
            y2: f64::from(height.max(1)),
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= f64::from(width)
            && self.y2 <= f64::from(height)
    }

    /// Integer pixel rectangle `(x1, y1, x2, y2)` obtained by rounding each
    /// edge and clamping to the image. The result may be empty.
    pub fn to_pixel_rect(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let clamp = |v: f64, hi: u32| v.round().clamp(0.0, f64::from(hi)) as u32;
        (
            clamp(self.x1, width),
            clamp(self.y1, height),
            clamp(self.x2, width),
            clamp(self.y2, height),
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1}, {:.1}, {:.1})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union of two boxes; 0 when they are disjoint.
pub fn iou(b: &BoundingBox, g: &BoundingBox) -> f64 {
    let inter = b.intersection_area(g);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = b.area() + g.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of the ground-truth box `g` covered by `b`.
pub fn recall(b: &BoundingBox, g: &BoundingBox) -> f64 {
    (b.intersection_area(g) / g.area()).clamp(0.0, 1.0)
}

/// Step sizes `(alpha * width, alpha * height)` for one transformation.
pub fn alpha_offsets(b: &BoundingBox, alpha: f64) -> (f64, f64) {
    (alpha * b.width(), alpha * b.height())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
    Bigger,
    Smaller,
    Fatter,
    Taller,
    Trigger,
}

impl Action {
    pub const COUNT: usize = 9;

    pub const ALL: [Action; 9] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Bigger,
        Action::Smaller,
        Action::Fatter,
        Action::Taller,
        Action::Trigger,
    ];

    /// The eight actions that move or resize the box.
    pub const TRANSFORMS: [Action; 8] = [
        Action::Left,
        Action::Right,
        Action::Up,
        Action::Down,
        Action::Bigger,
        Action::Smaller,
        Action::Fatter,
        Action::Taller,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::Up => "UP",
            Action::Down => "DOWN",
            Action::Bigger => "BIGGER",
            Action::Smaller => "SMALLER",
            Action::Fatter => "FATTER",
            Action::Taller => "TALLER",
            Action::Trigger => "TRIGGER",
        }
    }

    pub fn is_trigger(self) -> bool {
        self == Action::Trigger
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GeometryError::UnknownAction(s.to_string()))
    }
}

/// Applies one of the eight transformations and clips the result to the
/// image. If the clipped box would have a side shorter than [`MIN_SIDE`],
/// the input box is returned unchanged.
pub fn apply_transform(
    b: &BoundingBox,
    action: Action,
    alpha: f64,
    image_w: u32,
    image_h: u32,
) -> Result<BoundingBox, GeometryError> {
    let (aw, ah) = alpha_offsets(b, alpha);
    let (hw, hh) = (aw * 0.5, ah * 0.5);
    let BoundingBox { x1, y1, x2, y2 } = *b;
    let (nx1, ny1, nx2, ny2) = match action {
        Action::Left => (x1 - aw, y1, x2 - aw, y2),
        Action::Right => (x1 + aw, y1, x2 + aw, y2),
        Action::Up => (x1, y1 - ah, x2, y2 - ah),
        Action::Down => (x1, y1 + ah, x2, y2 + ah),
        Action::Bigger => (x1 - hw, y1 - hh, x2 + hw, y2 + hh),
        Action::Smaller => (x1 + hw, y1 + hh, x2 - hw, y2 - hh),
        Action::Fatter => (x1 - hw, y1, x2 + hw, y2),
        Action::Taller => (x1, y1 - hh, x2, y2 + hh),
        Action::Trigger => return Err(GeometryError::TriggerNotATransform),
    };
    let w = f64::from(image_w);
    let h = f64::from(image_h);
    let nx1 = nx1.clamp(0.0, w);
    let nx2 = nx2.clamp(0.0, w);
    let ny1 = ny1.clamp(0.0, h);
    let ny2 = ny2.clamp(0.0, h);
    if nx2 - nx1 < MIN_SIDE || ny2 - ny1 < MIN_SIDE {
        return Ok(*b);
    }
    Ok(BoundingBox {
        x1: nx1,
        y1: ny1,
        x2: nx2,
        y2: ny2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts unit pixels whose centers fall in each box.
    fn raster_iou(b: &BoundingBox, g: &BoundingBox) -> (f64, f64) {
        let inside = |r: &BoundingBox, x: f64, y: f64| x >= r.x1 && x < r.x2 && y >= r.y1 && y < r.y2;
        let (mut inter, mut union, mut gt) = (0u32, 0u32, 0u32);
        for y in 0..40 {
            for x in 0..40 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let (ib, ig) = (inside(b, px, py), inside(g, px, py));
                inter += u32::from(ib && ig);
                union += u32::from(ib || ig);
                gt += u32::from(ig);
            }
        }
        (inter as f64 / union as f64, inter as f64 / gt as f64)
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        let g = bx(5.0, 0.0, 15.0, 10.0);
        let (oracle_iou, oracle_recall) = raster_iou(&a, &g);
        assert!((oracle_iou - 0.333_333).abs() < 1e-4);
        assert!((iou(&a, &g) - oracle_iou).abs() < 1e-12);
        assert!((recall(&a, &g) - oracle_recall).abs() < 1e-12);
        assert_eq!(recall(&a, &g), 0.5);
    }

    #[test]
    fn recall_examples() {
        let g = bx(2.0, 2.0, 6.0, 6.0);
        assert_eq!(recall(&bx(0.0, 0.0, 10.0, 10.0), &g), 1.0);
        assert_eq!(recall(&bx(7.0, 7.0, 9.0, 9.0), &g), 0.0);
    }

    #[test]
    fn alpha_offsets_examples() {
        assert_eq!(alpha_offsets(&bx(0.0, 0.0, 100.0, 100.0), 0.2), (20.0, 20.0));
        assert_eq!(alpha_offsets(&bx(0.0, 0.0, 50.0, 100.0), 0.2), (10.0, 20.0));
        assert_eq!(alpha_offsets(&bx(0.0, 0.0, 50.0, 100.0), 0.0), (0.0, 0.0));
    }

    #[test]
    fn transform_examples() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(
            apply_transform(&b, Action::Right, 0.2, 500, 500).unwrap(),
            bx(20.0, 0.0, 120.0, 100.0)
        );
        assert_eq!(
            apply_transform(&b, Action::Bigger, 0.2, 500, 500).unwrap(),
            bx(0.0, 0.0, 110.0, 110.0)
        );
        assert_eq!(
            apply_transform(&b, Action::Trigger, 0.2, 500, 500),
            Err(GeometryError::TriggerNotATransform)
        );
    }

    #[test]
    fn transform_rejects_sliver() {
        let b = bx(0.0, 0.0, 9.0, 9.0);
        assert_eq!(apply_transform(&b, Action::Smaller, 0.2, 50, 50).unwrap(), b);
        // pushed against the border: shifting left clips x1 and would leave less than 8 px
        let edge = bx(0.0, 0.0, 9.0, 20.0);
        assert_eq!(apply_transform(&edge, Action::Left, 0.2, 50, 50).unwrap(), edge);
    }

    #[test]
    fn action_indices_are_stable() {
        assert_eq!(Action::ALL.len(), 9);
        assert_eq!(Action::Trigger.index(), 8);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
            assert_eq!(a.name().parse::<Action>().unwrap(), *a);
        }
        assert!(Action::from_index(9).is_none());
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(5.0, 0.0, 5.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..400.0f64, 0.0..400.0f64, 8.0..112.0f64, 8.0..112.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox { x1: x, y1: y, x2: x + w, y2: y + h })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn transforms_stay_valid(b in arb_box(), idx in 0usize..8, alpha in 0.05..0.5f64) {
            let a = Action::TRANSFORMS[idx];
            let out = apply_transform(&b, a, alpha, 512, 512).unwrap();
            prop_assert!(out.is_within(512, 512));
            prop_assert!(out.width() >= MIN_SIDE && out.height() >= MIN_SIDE);
        }
    }
}
