use crate::error::{invalid_input, Result};

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OverlapBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl OverlapBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Box of the given width and height around `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// The whole `width x height` image.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x_min: 0.0,
            y_min: 0.0,
            x_max: width as f64,
            y_max: height as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(invalid_input(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<Self> {
        let b = Self {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        };
        b.validate().ok().map(|_| b)
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            x_min: self.x_min * sx,
            y_min: self.y_min * sy,
            x_max: self.x_max * sx,
            y_max: self.y_max * sy,
        }
    }

    /// Normalized `(cx, cy, w, h)` relative to an image of the given size.
    pub fn to_cxcywh(&self, width: f64, height: f64) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx / width, cy / height, self.width() / width, self.height() / height]
    }

    pub fn from_cxcywh(b: [f64; 4], width: f64, height: f64) -> Result<Self> {
        Self::from_center(b[0] * width, b[1] * height, b[2] * width, b[3] * height)
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    pub fn enclosing(&self, other: &Self) -> Self {
        Self {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.enclosing(other)
    }
}

/// Intersection over union.
pub fn iou(a: &OverlapBox, b: &OverlapBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box not
/// covered by the union.
pub fn giou(a: &OverlapBox, b: &OverlapBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.enclosing(b).area();
    Ok(inter / union - (hull - union) / hull)
}

/// Largest cross ratio of box widths and heights; 1 iff both boxes have the
/// same size.
pub fn overlap_scale_ratio(a: &OverlapBox, b: &OverlapBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (wa, ha, wb, hb) = (a.width(), a.height(), b.width(), b.height());
    Ok((wa / wb).max(wb / wa).max(hb / ha).max(ha / hb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> OverlapBox {
        OverlapBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)).unwrap(), 0.0);
        assert!((iou(&a, &bx(1.0, 1.0, 3.0, 3.0)).unwrap() - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn giou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
        assert!((giou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 1.0, 2.0, 2.0)).unwrap() + 0.5).abs() < 1e-15);
        assert!((giou(&a, &bx(1.0, 1.0, 3.0, 3.0)).unwrap() + 5.0 / 63.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        let zero = OverlapBox {
            x_min: 1.0,
            y_min: 1.0,
            x_max: 1.0,
            y_max: 2.0,
        };
        let ok = bx(0.0, 0.0, 1.0, 1.0);
        assert!(iou(&zero, &ok).is_err());
        assert!(giou(&ok, &zero).is_err());
        assert!(overlap_scale_ratio(&zero, &ok).is_err());
        assert!(OverlapBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn scale_ratio_examples() {
        let a = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(overlap_scale_ratio(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap_scale_ratio(&a, &bx(10.0, 10.0, 60.0, 60.0)).unwrap(), 2.0);
        assert_eq!(
            overlap_scale_ratio(&bx(0.0, 0.0, 100.0, 50.0), &bx(0.0, 0.0, 50.0, 100.0)).unwrap(),
            2.0
        );
    }

    #[test]
    fn clamp_and_normalized_round_trip() {
        let b = bx(-5.0, 10.0, 30.0, 70.0);
        let c = b.clamp_to(20.0, 50.0).unwrap();
        assert_eq!(c, bx(0.0, 10.0, 20.0, 50.0));
        assert!(bx(30.0, 0.0, 40.0, 10.0).clamp_to(20.0, 20.0).is_none());
        let n = c.to_cxcywh(20.0, 50.0);
        let back = OverlapBox::from_cxcywh(n, 20.0, 50.0).unwrap();
        assert!((back.x_min - c.x_min).abs() < 1e-12 && (back.y_max - c.y_max).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = OverlapBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.01..40.0f64, 0.01..40.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn metric_symmetries(a in arb_box(), b in arb_box()) {
            let (i1, i2) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            let (g1, g2) = (giou(&a, &b).unwrap(), giou(&b, &a).unwrap());
            prop_assert!((i1 - i2).abs() < 1e-12);
            prop_assert!((g1 - g2).abs() < 1e-12);
            prop_assert!(g1 <= i1 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&i1));
            prop_assert!(g1 > -1.0 && g1 <= 1.0);
            let s1 = overlap_scale_ratio(&a, &b).unwrap();
            prop_assert_eq!(s1, overlap_scale_ratio(&b, &a).unwrap());
            prop_assert!(s1 >= 1.0);
        }

        #[test]
        fn giou_equals_iou_when_hull_is_union(x in -10.0..10.0f64, w in 0.5..5.0f64, h1 in 0.5..5.0f64, h2 in 0.5..5.0f64) {
            // Same horizontal extent, vertically overlapping: the hull is the union.
            let a = bx(x, 0.0, x + w, h1);
            let b = bx(x, 0.0, x + w, h2);
            prop_assert!((giou(&a, &b).unwrap() - iou(&a, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn scale_ratio_is_one_only_for_equal_sizes(a in arb_box(), dx in -5.0..5.0f64, dy in -5.0..5.0f64, f in 1.001..3.0f64) {
            let moved = bx(a.x_min + dx, a.y_min + dy, a.x_max + dx, a.y_max + dy);
            prop_assert!((overlap_scale_ratio(&a, &moved).unwrap() - 1.0).abs() < 1e-9);
            let grown = bx(a.x_min, a.y_min, a.x_min + a.width() * f, a.y_max);
            prop_assert!(overlap_scale_ratio(&a, &grown).unwrap() > 1.0);
        }
    }
}
