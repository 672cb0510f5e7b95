//! Static chart rendering on plain raster images: polyline charts for loss
//! and PR curves, 16-bit grayscale heatmaps for gate masks, and mask
//! overlays. No text rendering; each chart gets a `.legend.txt` sidecar
//! mapping line colors to series names.

use crate::error::CliError;
use image::{Luma, Rgb, RgbImage};
use ndarray::ArrayD;
use std::path::Path;

const WIDTH: u32 = 900;
const HEIGHT: u32 = 560;
const MARGIN: u32 = 48;

pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

/// Fixed palette used for loss components and PR curves, in order.
pub const PALETTE: [[u8; 3]; 8] = [
    [30, 30, 30],
    [214, 69, 65],
    [230, 126, 34],
    [41, 128, 185],
    [39, 174, 96],
    [142, 68, 173],
    [22, 160, 133],
    [127, 140, 141],
];

fn draw_segment(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn finite_points(series: &[Series]) -> impl Iterator<Item = (f64, f64)> + '_ {
    series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
}

/// Render polylines over auto-scaled (or pinned) axes and write a legend
/// sidecar next to the image.
pub fn line_chart(
    path: &Path,
    series: &[Series],
    ranges: Option<((f64, f64), (f64, f64))>,
) -> Result<(), CliError> {
    let ((x_lo, x_hi), (y_lo, y_hi)) = ranges.unwrap_or_else(|| {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for (px, py) in finite_points(series) {
            x = (x.0.min(px), x.1.max(px));
            y = (y.0.min(py), y.1.max(py));
        }
        if !x.0.is_finite() {
            x = (0.0, 1.0);
            y = (0.0, 1.0);
        }
        if x.0 == x.1 {
            x.1 = x.0 + 1.0;
        }
        if y.0 == y.1 {
            y.1 = y.0 + 1.0;
        }
        let pad = (y.1 - y.0) * 0.05;
        (x, (if y.0 >= 0.0 { (y.0 - pad).max(0.0) } else { y.0 - pad }, y.1 + pad))
    });

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| {
        let fx = (x - x_lo) / (x_hi - x_lo);
        let fy = (y - y_lo) / (y_hi - y_lo);
        (
            (MARGIN as f64 + fx * plot_w).round() as i64,
            (MARGIN as f64 + (1.0 - fy) * plot_h).round() as i64,
        )
    };

    // light grid, then axes
    let grid = Rgb([225, 225, 225]);
    for t in 1..5 {
        let f = t as f64 / 5.0;
        let gx = (MARGIN as f64 + f * plot_w).round() as i64;
        let gy = (MARGIN as f64 + f * plot_h).round() as i64;
        draw_segment(&mut img, (gx, MARGIN as i64), (gx, (HEIGHT - MARGIN) as i64), grid);
        draw_segment(&mut img, (MARGIN as i64, gy), ((WIDTH - MARGIN) as i64, gy), grid);
    }
    let axis = Rgb([0, 0, 0]);
    let (ox, oy) = (MARGIN as i64, (HEIGHT - MARGIN) as i64);
    draw_segment(&mut img, (ox, MARGIN as i64), (ox, oy), axis);
    draw_segment(&mut img, (ox, oy), ((WIDTH - MARGIN) as i64, oy), axis);

    for s in series {
        let color = Rgb(s.color);
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| to_px(x.clamp(x_lo, x_hi), y.clamp(y_lo, y_hi)))
            .collect();
        for pair in pts.windows(2) {
            draw_segment(&mut img, pair[0], pair[1], color);
        }
        if pts.len() == 1 {
            draw_segment(&mut img, pts[0], pts[0], color);
        }
    }

    // legend swatches along the top edge, in series order
    for (i, s) in series.iter().enumerate() {
        let x0 = MARGIN + 4 + (i as u32) * 24;
        for dy in 0..10u32 {
            for dx in 0..16u32 {
                if x0 + dx < WIDTH {
                    img.put_pixel(x0 + dx, 8 + dy, Rgb(s.color));
                }
            }
        }
    }

    img.save(path)?;
    let legend: String = series
        .iter()
        .map(|s| format!("#{:02x}{:02x}{:02x} {}\n", s.color[0], s.color[1], s.color[2], s.label))
        .collect();
    let legend_path = path.with_extension("legend.txt");
    std::fs::write(&legend_path, legend)
        .map_err(|e| CliError::Io(format!("write {}", legend_path.display()), e))
}

/// Write a `(1, H, W)` or `(H, W)` map in [0, 1] as a 16-bit grayscale PNG.
pub fn heatmap16(path: &Path, map: &ArrayD<f64>) -> Result<(), CliError> {
    let shape = map.shape();
    let (h, w) = match shape.len() {
        3 if shape[0] == 1 => (shape[1], shape[2]),
        2 => (shape[0], shape[1]),
        _ => return Err(CliError::Usage(format!("heatmap expects (1,H,W) or (H,W), got {shape:?}"))),
    };
    let flat: Vec<u16> = map
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * u16::MAX as f64).round() as u16)
        .collect();
    let img = image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, flat)
        .expect("raw buffer sized to dimensions");
    img.save(path)?;
    Ok(())
}

/// Read back a 16-bit heatmap into [0, 1] floats (used by tests and the
/// inspect self-check).
pub fn read_heatmap16(path: &Path) -> Result<Vec<f64>, CliError> {
    let img = image::open(path)?.to_luma16();
    Ok(img.pixels().map(|p| p[0] as f64 / u16::MAX as f64).collect())
}

/// Tint image pixels red wherever `selected` is true. `selected` is indexed
/// by image row and column.
pub fn overlay_mask<F>(
    path: &Path,
    pixels: &ArrayD<f64>,
    selected: F,
) -> Result<(), CliError>
where
    F: Fn(usize, usize) -> bool,
{
    let (h, w) = (pixels.shape()[1], pixels.shape()[2]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for j in 0..h {
        for i in 0..w {
            let mut rgb = [0u8; 3];
            for (c, v) in rgb.iter_mut().enumerate() {
                let base = pixels[ndarray::IxDyn(&[c, j, i])].clamp(0.0, 1.0);
                let shown = if selected(j, i) {
                    0.45 * base + 0.55 * if c == 0 { 1.0 } else { 0.12 }
                } else {
                    base
                };
                *v = (shown * 255.0).round() as u8;
            }
            img.put_pixel(i as u32, j as u32, Rgb(rgb));
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn heatmap_quantization_roundtrips_tightly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = ArrayD::from_shape_fn(IxDyn(&[1, 4, 5]), |idx| {
            (idx[1] as f64 * 5.0 + idx[2] as f64) / 19.0
        });
        heatmap16(&path, &map).unwrap();
        let back = read_heatmap16(&path).unwrap();
        for (a, b) in map.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / u16::MAX as f64 + 1e-12);
        }
    }

    #[test]
    fn chart_writes_image_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let series = vec![Series {
            label: "loss".into(),
            color: PALETTE[1],
            points: (0..50).map(|i| (i as f64, (50 - i) as f64)).collect(),
        }];
        line_chart(&path, &series, None).unwrap();
        assert!(path.is_file());
        let legend = std::fs::read_to_string(path.with_extension("legend.txt")).unwrap();
        assert!(legend.contains("loss"));
    }
}
