//! PNG montage of axial slices with the predicted mask overlaid in red.

use std::path::Path;

use hierseg_core::{BinaryMask, Volume};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Evenly spaced `z` indices, at most `n`.
fn slices(depth: usize, n: usize) -> Vec<usize> {
    let n = n.min(depth).max(1);
    (0..n).map(|i| (2 * i + 1) * depth / (2 * n)).collect()
}

/// Tiles up to `n` axial slices into a grid. Intensities are min-max scaled
/// over the whole volume.
pub fn render(image: &Volume, mask: Option<&BinaryMask>, n: usize) -> Result<RgbImage> {
    let [ex, ey, ez] = image.extents();
    if let Some(m) = mask {
        if m.extents() != image.extents() {
            return Err(hierseg_core::Error::ShapeMismatch {
                context: "montage mask",
                expected: image.extents().to_vec(),
                found: m.extents().to_vec(),
            }
            .into());
        }
    }
    let zs = slices(ez, n);
    let cols = (zs.len() as f64).sqrt().ceil() as usize;
    let rows = zs.len().div_ceil(cols);
    let (lo, hi) = image.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new((cols * ex) as u32, (rows * ey) as u32);
    for (t, &z) in zs.iter().enumerate() {
        let (ox, oy) = ((t % cols) * ex, (t / cols) * ey);
        for x in 0..ex {
            for y in 0..ey {
                let g = (((image.get(0, [x, y, z]) - lo) / span).clamp(0.0, 1.0) * 255.0) as u8;
                let px = if mask.is_some_and(|m| m.get([x, y, z])) {
                    Rgb([g / 2 + 128, g / 2, g / 2])
                } else {
                    Rgb([g, g, g])
                };
                // Rows of the picture run along y, flipped so anterior is up.
                img.put_pixel((ox + x) as u32, (oy + ey - 1 - y) as u32, px);
            }
        }
    }
    Ok(img)
}

pub fn write(path: &Path, image: &Volume, mask: Option<&BinaryMask>, n: usize) -> Result<()> {
    render(image, mask, n)?.save(path).map_err(|e| Error::format(path, e))
}
