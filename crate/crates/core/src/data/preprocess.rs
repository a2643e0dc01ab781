use super::{DataError, FEATURE_LEN, IMAGE_SIDE};

pub const RGB_SIDE: usize = 32;
/// Length of a 32×32×3 image in height-width-channel order.
pub const RGB_LEN: usize = RGB_SIDE * RGB_SIDE * 3;

// ITU-R BT.601 luma.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Converts a 32×32×3 image (HWC, entries in `[0, 1]`) into a 784-vector:
/// luminance grayscale, corner-aligned bilinear resize to 28×28, row-major
/// flatten.
pub fn preprocess_rgb32(image: &[f64]) -> Result<Vec<f64>, DataError> {
    if image.len() != RGB_LEN {
        return Err(DataError::Shape {
            expected: RGB_LEN,
            actual: image.len(),
        });
    }
    let gray: Vec<f64> = image
        .chunks_exact(3)
        .map(|px| LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2])
        .collect();
    Ok(resize_bilinear(&gray, RGB_SIDE, IMAGE_SIDE))
}

/// Source coordinate of output index `k`, with both corners pinned.
fn source_coord(k: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let pos = (k * (src - 1)) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

fn resize_bilinear(gray: &[f64], src: usize, dst: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(FEATURE_LEN);
    for r in 0..dst {
        let (y0, y1, fy) = source_coord(r, src, dst);
        for c in 0..dst {
            let (x0, x1, fx) = source_coord(c, src, dst);
            let top = (1.0 - fx) * gray[y0 * src + x0] + fx * gray[y0 * src + x1];
            let bottom = (1.0 - fx) * gray[y1 * src + x0] + fx * gray[y1 * src + x1];
            out.push(((1.0 - fy) * top + fy * bottom).clamp(0.0, 1.0));
        }
    }
    out
}
