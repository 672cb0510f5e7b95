//! Boxes, the per-pixel LTRB encoding, IoU arithmetic, and the
//! stride-normalized scale shared by the fusion gate and the detection head.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite")]
    NonFinite,
    #[error("box must satisfy x2 >= x1 and y2 >= y1")]
    Inverted,
    #[error("LTRB distances must be non-negative and finite")]
    NegativeDistance,
    #[error("stride must be positive")]
    BadStride,
}

/// Axis-aligned box in image-space pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if x2 < x1 || y2 < y1 {
            return Err(GeometryError::Inverted);
        }
        Ok(BoxXYXY { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when `(px, py)` lies inside the box (inclusive edges).
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x1 && px <= self.x2 && py >= self.y1 && py <= self.y2
    }
}

/// Distances from a reference pixel center to a box's four edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxLTRB {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl BoxLTRB {
    pub fn new(l: f64, t: f64, r: f64, b: f64) -> Result<Self, GeometryError> {
        if ![l, t, r, b].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(GeometryError::NegativeDistance);
        }
        Ok(BoxLTRB { l, t, r, b })
    }

    pub fn max_component(&self) -> f64 {
        self.l.max(self.t).max(self.r).max(self.b)
    }
}

/// Dimensionless stride-normalized object width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedScale {
    pub w: f64,
    pub h: f64,
}

/// Intersection-over-union of two boxes; 0 when the union has zero area.
pub fn iou(a: &BoxXYXY, c: &BoxXYXY) -> f64 {
    let ix = (a.x2.min(c.x2) - a.x1.max(c.x1)).max(0.0);
    let iy = (a.y2.min(c.y2) - a.y1.max(c.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + c.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Image-space center of the grid cell `(i, j)` at a given stride.
///
/// `i` indexes columns (x), `j` rows (y); centers sit at `(i+0.5) * stride`.
pub fn pixel_center(i: usize, j: usize, stride: f64) -> (f64, f64) {
    ((i as f64 + 0.5) * stride, (j as f64 + 0.5) * stride)
}

/// Decode an LTRB prediction at grid cell `(i, j)` into image coordinates.
pub fn ltrb_to_xyxy(
    ltrb: &BoxLTRB,
    pixel: (usize, usize),
    stride: f64,
) -> Result<BoxXYXY, GeometryError> {
    if stride <= 0.0 {
        return Err(GeometryError::BadStride);
    }
    let (cx, cy) = pixel_center(pixel.0, pixel.1, stride);
    BoxXYXY::new(cx - ltrb.l, cy - ltrb.t, cx + ltrb.r, cy + ltrb.b)
}

/// Encode a box as edge distances from the center of grid cell `(i, j)`.
///
/// Fails unless the cell center lies inside the box (a foreground pixel).
pub fn xyxy_to_ltrb(
    bx: &BoxXYXY,
    pixel: (usize, usize),
    stride: f64,
) -> Result<BoxLTRB, GeometryError> {
    if stride <= 0.0 {
        return Err(GeometryError::BadStride);
    }
    let (cx, cy) = pixel_center(pixel.0, pixel.1, stride);
    BoxLTRB::new(cx - bx.x1, cy - bx.y1, bx.x2 - cx, bx.y2 - cy)
}

/// Stride-normalized scale of an LTRB box: `((r+l)/stride, (b+t)/stride)`.
pub fn normalized_scale(pred: &BoxLTRB, stride: f64) -> Result<NormalizedScale, GeometryError> {
    if stride <= 0.0 {
        return Err(GeometryError::BadStride);
    }
    Ok(NormalizedScale {
        w: (pred.r + pred.l) / stride,
        h: (pred.b + pred.t) / stride,
    })
}

/// Overlap between a predicted scale and a kernel shape, both taken as
/// concentric axis-aligned rectangles in stride units:
/// `min(w,kw)*min(h,kh) / (w*h + kw*kh - min(w,kw)*min(h,kh))`.
pub fn kernel_iou(scale: &NormalizedScale, kernel: (f64, f64)) -> f64 {
    let (kw, kh) = kernel;
    debug_assert!(kw > 0.0 && kh > 0.0, "kernel sides must be positive");
    let inter = scale.w.min(kw) * scale.h.min(kh);
    let union = scale.w * scale.h + kw * kh - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn iou_identical_unit_boxes_is_one() {
        let a = BoxXYXY::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_boxes_is_zero() {
        let a = BoxXYXY::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let b = BoxXYXY::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // intersection 1, union 4 + 4 - 1 = 7
        let a = BoxXYXY::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BoxXYXY::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert_abs_diff_eq!(iou(&a, &b), 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_of_degenerate_pair_is_zero() {
        let a = BoxXYXY::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn box_constructors_reject_bad_input() {
        assert_eq!(
            BoxXYXY::new(f64::NAN, 0.0, 1.0, 1.0),
            Err(GeometryError::NonFinite)
        );
        assert_eq!(BoxXYXY::new(2.0, 0.0, 1.0, 1.0), Err(GeometryError::Inverted));
        assert_eq!(
            BoxLTRB::new(-1.0, 0.0, 0.0, 0.0),
            Err(GeometryError::NegativeDistance)
        );
    }

    #[test]
    fn ltrb_decode_degenerate_at_cell_center() {
        let z = BoxLTRB::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let b = ltrb_to_xyxy(&z, (0, 0), 8.0).unwrap();
        assert_eq!(b, BoxXYXY::new(4.0, 4.0, 4.0, 4.0).unwrap());
    }

    #[test]
    fn ltrb_decode_symmetric_box() {
        let d = BoxLTRB::new(4.0, 4.0, 4.0, 4.0).unwrap();
        let b = ltrb_to_xyxy(&d, (0, 0), 8.0).unwrap();
        assert_eq!(b, BoxXYXY::new(0.0, 0.0, 8.0, 8.0).unwrap());
    }

    #[test]
    fn ltrb_decode_asymmetric_box() {
        // cell (1,1) at stride 8 has center (12,12)
        let d = BoxLTRB::new(12.0, 8.0, 20.0, 8.0).unwrap();
        let b = ltrb_to_xyxy(&d, (1, 1), 8.0).unwrap();
        assert_eq!(b, BoxXYXY::new(0.0, 4.0, 32.0, 20.0).unwrap());
    }

    #[test]
    fn normalized_scale_examples() {
        let d = BoxLTRB::new(12.0, 0.0, 20.0, 0.0).unwrap();
        assert_abs_diff_eq!(normalized_scale(&d, 8.0).unwrap().w, 4.0);

        let z = BoxLTRB::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let s = normalized_scale(&z, 8.0).unwrap();
        assert_eq!((s.w, s.h), (0.0, 0.0));

        let q = BoxLTRB::new(32.0, 32.0, 32.0, 32.0).unwrap();
        let s = normalized_scale(&q, 16.0).unwrap();
        assert_eq!((s.w, s.h), (4.0, 4.0));
    }

    #[test]
    fn kernel_iou_examples() {
        let s = NormalizedScale { w: 3.0, h: 3.0 };
        assert_eq!(kernel_iou(&s, (3.0, 3.0)), 1.0);

        // inter 3*3 = 9, union 15 + 15 - 9 = 21
        let s = NormalizedScale { w: 5.0, h: 3.0 };
        assert_abs_diff_eq!(kernel_iou(&s, (3.0, 5.0)), 9.0 / 21.0, epsilon = 1e-12);

        let s = NormalizedScale { w: 0.0, h: 0.0 };
        assert_eq!(kernel_iou(&s, (3.0, 3.0)), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = BoxXYXY> {
        (0.0..100.0f64, 0.0..100.0f64, 0.1..80.0f64, 0.1..80.0f64)
            .prop_map(|(x, y, w, h)| BoxXYXY::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn iou_is_one_only_for_identical_boxes(a in arb_box(), b in arb_box()) {
            if iou(&a, &b) == 1.0 {
                prop_assert!(a.area() > 0.0);
                prop_assert!((a.x1 - b.x1).abs() < 1e-12 && (a.y1 - b.y1).abs() < 1e-12);
                prop_assert!((a.x2 - b.x2).abs() < 1e-12 && (a.y2 - b.y2).abs() < 1e-12);
            }
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn ltrb_codec_roundtrips_for_foreground_pixels(
            i in 0usize..16, j in 0usize..16,
            l in 0.0..50.0f64, t in 0.0..50.0f64, r in 0.0..50.0f64, b in 0.0..50.0f64,
        ) {
            let stride = 8.0;
            let ltrb = BoxLTRB::new(l, t, r, b).unwrap();
            let bx = ltrb_to_xyxy(&ltrb, (i, j), stride).unwrap();
            let back = xyxy_to_ltrb(&bx, (i, j), stride).unwrap();
            prop_assert!((back.l - l).abs() < 1e-9);
            prop_assert!((back.t - t).abs() < 1e-9);
            prop_assert!((back.r - r).abs() < 1e-9);
            prop_assert!((back.b - b).abs() < 1e-9);
        }

        #[test]
        fn kernel_iou_decreases_away_from_kernel_width(
            kw in 0.5..8.0f64, kh in 0.5..8.0f64, h_off in 0.0f64..0.0001,
            d1 in 0.0..4.0f64, d2 in 0.0..4.0f64,
        ) {
            let h = kh + h_off;
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            // larger-than-kernel side
            let a = kernel_iou(&NormalizedScale { w: kw + near, h }, (kw, kh));
            let b = kernel_iou(&NormalizedScale { w: kw + far, h }, (kw, kh));
            prop_assert!(a + 1e-12 >= b);
            // smaller-than-kernel side
            let a = kernel_iou(&NormalizedScale { w: (kw - near).max(0.0), h }, (kw, kh));
            let b = kernel_iou(&NormalizedScale { w: (kw - far).max(0.0), h }, (kw, kh));
            prop_assert!(a + 1e-12 >= b);
        }

        #[test]
        fn normalized_scale_is_scale_invariant(
            l in 0.0..50.0f64, t in 0.0..50.0f64, r in 0.0..50.0f64, b in 0.0..50.0f64,
            stride in 1.0..32.0f64, factor in 0.5..4.0f64,
        ) {
            let base = BoxLTRB::new(l, t, r, b).unwrap();
            let scaled = BoxLTRB::new(l * factor, t * factor, r * factor, b * factor).unwrap();
            let s1 = normalized_scale(&base, stride).unwrap();
            let s2 = normalized_scale(&scaled, stride * factor).unwrap();
            prop_assert!((s1.w - s2.w).abs() < 1e-9);
            prop_assert!((s1.h - s2.h).abs() < 1e-9);
        }
    }
}
