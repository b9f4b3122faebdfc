//! Shared bilinear resize with align-corners semantics: source cell
//! centers map onto the target corners, so upsampling a grid leaves its
//! corner values intact.

use crate::raster::ScoreMap;

/// Samples a row-major `src_h x src_w` grid at fractional coordinates.
#[inline]
fn bilinear_at(values: &[f64], src_h: usize, src_w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (src_h - 1) as f64);
    let x = x.clamp(0.0, (src_w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(src_h - 1);
    let x1 = (x0 + 1).min(src_w - 1);
    let dy = y - y0 as f64;
    let dx = x - x0 as f64;
    let f00 = values[y0 * src_w + x0];
    let f01 = values[y0 * src_w + x1];
    let f10 = values[y1 * src_w + x0];
    let f11 = values[y1 * src_w + x1];
    let top = f00 * (1.0 - dx) + f01 * dx;
    let bot = f10 * (1.0 - dx) + f11 * dx;
    top * (1.0 - dy) + bot * dy
}

/// Resizes a grid of values to `(dst_h, dst_w)`.
pub fn resize_bilinear(
    values: &[f64],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    assert_eq!(values.len(), src_h * src_w);
    assert!(src_h > 0 && src_w > 0 && dst_h > 0 && dst_w > 0);
    if src_h == dst_h && src_w == dst_w {
        return values.to_vec();
    }
    let sy = if dst_h > 1 {
        (src_h - 1) as f64 / (dst_h - 1) as f64
    } else {
        0.0
    };
    let sx = if dst_w > 1 {
        (src_w - 1) as f64 / (dst_w - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for r in 0..dst_h {
        let y = r as f64 * sy;
        for c in 0..dst_w {
            out.push(bilinear_at(values, src_h, src_w, y, c as f64 * sx));
        }
    }
    out
}

pub fn resize_score_map(map: &ScoreMap, dst_h: usize, dst_w: usize) -> ScoreMap {
    let values = resize_bilinear(map.values(), map.height, map.width, dst_h, dst_w);
    ScoreMap::new(dst_h, dst_w, values).expect("resize preserves size invariant")
}
