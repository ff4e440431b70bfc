//! Scan records and the preprocessing chain: reorientation, isotropic
//! resampling, intensity normalization and edge-preserving smoothing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{Axis, BinaryMask, Volume};

/// Three-letter anatomical orientation code. Letter `i` names the direction
/// in which voxel index `i` increases (`RAS`: x to the right, y anterior,
/// z superior).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation([u8; 3]);

impl Orientation {
    pub const RAS: Orientation = Orientation(*b"RAS");

    pub fn letters(&self) -> [char; 3] {
        self.0.map(char::from)
    }

    fn pair(letter: u8) -> Option<(usize, bool)> {
        // (anatomical axis, positive direction)
        match letter {
            b'R' => Some((0, true)),
            b'L' => Some((0, false)),
            b'A' => Some((1, true)),
            b'P' => Some((1, false)),
            b'S' => Some((2, true)),
            b'I' => Some((2, false)),
            _ => None,
        }
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidOrientation(String::from(s));
        let b = s.as_bytes();
        if b.len() != 3 {
            return Err(bad());
        }
        let mut seen = [false; 3];
        let mut code = [0u8; 3];
        for (i, &c) in b.iter().enumerate() {
            let c = c.to_ascii_uppercase();
            let (axis, _) = Orientation::pair(c).ok_or_else(bad)?;
            if seen[axis] {
                return Err(bad());
            }
            seen[axis] = true;
            code[i] = c;
        }
        Ok(Orientation(code))
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.letters() {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// A single-channel scan with optional reference mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub id: String,
    pub image: Volume,
    pub mask: Option<BinaryMask>,
    pub orientation: Orientation,
    /// Voxel spacing as stored in the source file, in the record's axis order.
    pub source_spacing: [f64; 3],
}

impl ScanRecord {
    pub fn new(
        id: impl Into<String>,
        image: Volume,
        mask: Option<BinaryMask>,
        orientation: Orientation,
    ) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::shape("scan image channels", &[1], &[image.channels()]));
        }
        if let Some(m) = &mask {
            if m.extents() != image.extents() {
                return Err(Error::shape("mask extents", &image.extents(), &m.extents()));
            }
        }
        let source_spacing = image.spacing();
        Ok(Self {
            id: id.into(),
            image,
            mask,
            orientation,
            source_spacing,
        })
    }

    fn with_image(&self, image: Volume) -> Self {
        Self { image, ..self.clone() }
    }
}

/// Permutes and flips the voxel grid so the record ends up in `target`.
pub fn reorient(s: &ScanRecord, target: Orientation) -> Result<ScanRecord> {
    if s.orientation == target {
        return Ok(s.clone());
    }
    let src: Vec<(usize, bool)> = s
        .orientation
        .0
        .iter()
        .map(|&c| Orientation::pair(c).expect("validated"))
        .collect();
    let mut perm = [Axis::X; 3];
    let mut flips = Vec::new();
    for (i, &c) in target.0.iter().enumerate() {
        let (axis, positive) = Orientation::pair(c).expect("validated");
        let j = src
            .iter()
            .position(|&(a, _)| a == axis)
            .expect("orientation covers all axes");
        perm[i] = Axis::from_index(j)?;
        if src[j].1 != positive {
            flips.push(Axis::from_index(i)?);
        }
    }
    let mut image = s.image.permute_axes(perm)?;
    let mut mask = s.mask.as_ref().map(|m| m.permute_axes(perm)).transpose()?;
    for &a in &flips {
        image = image.flip(a);
        mask = mask.map(|m| m.flip(a));
    }
    let ss = s.source_spacing;
    Ok(ScanRecord {
        id: s.id.clone(),
        image,
        mask,
        orientation: target,
        source_spacing: perm.map(|a| ss[a.index()]),
    })
}

pub fn reorient_ras(s: &ScanRecord) -> Result<ScanRecord> {
    reorient(s, Orientation::RAS)
}

/// Extent after resampling `n` voxels of size `from` to voxels of size `to`.
pub fn resampled_extent(n: usize, from: f64, to: f64) -> usize {
    (libm::round(n as f64 * from / to) as usize).max(1)
}

/// Linear interpolation taps `(i0, i1, w1)` along one axis, with voxel
/// centres aligned (`src = (i + 0.5) · to / from − 0.5`, clamped).
fn linear_taps(n: usize, m: usize, from: f64, to: f64) -> Vec<(usize, usize, f64)> {
    let ratio = to / from;
    (0..m)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = libm::floor(src) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resample_axis(
    data: &[f64],
    extents: [usize; 3],
    axis: usize,
    taps: &[(usize, usize, f64)],
) -> (Vec<f64>, [usize; 3]) {
    let mut out_e = extents;
    out_e[axis] = taps.len();
    let mut out = vec![0.0; out_e.iter().product()];
    for x in 0..out_e[0] {
        for y in 0..out_e[1] {
            for z in 0..out_e[2] {
                let q = [x, y, z];
                let (i0, i1, w) = taps[q[axis]];
                let mut p0 = q;
                let mut p1 = q;
                p0[axis] = i0;
                p1[axis] = i1;
                let at = |p: [usize; 3]| data[(p[0] * extents[1] + p[1]) * extents[2] + p[2]];
                out[(x * out_e[1] + y) * out_e[2] + z] = (1.0 - w) * at(p0) + w * at(p1);
            }
        }
    }
    (out, out_e)
}

/// Trilinear resampling of every channel to `spacing`.
pub fn resample_volume(v: &Volume, spacing: [f64; 3]) -> Result<Volume> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!(
            "target spacing must be positive, got {spacing:?}"
        )));
    }
    let e = v.extents();
    let sp = v.spacing();
    let m: [usize; 3] = [0, 1, 2].map(|a| resampled_extent(e[a], sp[a], spacing[a]));
    let mut out = Vec::with_capacity(v.channels() * m.iter().product::<usize>());
    for c in 0..v.channels() {
        let mut data: Vec<f64> = v.channel(c).iter().map(|&x| x as f64).collect();
        let mut cur = e;
        for a in 0..3 {
            if cur[a] == m[a] && sp[a] == spacing[a] {
                continue;
            }
            let taps = linear_taps(e[a], m[a], sp[a], spacing[a]);
            (data, cur) = resample_axis(&data, cur, a, &taps);
        }
        out.extend(data.into_iter().map(|x| x as f32));
    }
    Volume::new(v.channels(), m, spacing, out)
}

/// Nearest-neighbour resampling of a mask to `spacing`.
pub fn resample_mask(m: &BinaryMask, spacing: [f64; 3]) -> Result<BinaryMask> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!(
            "target spacing must be positive, got {spacing:?}"
        )));
    }
    let e = m.extents();
    let sp = m.spacing();
    let out_e: [usize; 3] = [0, 1, 2].map(|a| resampled_extent(e[a], sp[a], spacing[a]));
    let nearest = |a: usize, i: usize| {
        let src = libm::floor((i as f64 + 0.5) * spacing[a] / sp[a]) as usize;
        src.min(e[a] - 1)
    };
    BinaryMask::from_fn(out_e, spacing, |p| {
        m.get([nearest(0, p[0]), nearest(1, p[1]), nearest(2, p[2])])
    })
}

/// Resamples image (trilinear) and mask (nearest) to isotropic voxels.
pub fn resample_isotropic(s: &ScanRecord, target_mm: f64) -> Result<ScanRecord> {
    if !(target_mm.is_finite() && target_mm > 0.0) {
        return Err(Error::invalid(format!(
            "target spacing must be positive, got {target_mm}"
        )));
    }
    let spacing = [target_mm; 3];
    Ok(ScanRecord {
        image: resample_volume(&s.image, spacing)?,
        mask: s.mask.as_ref().map(|m| resample_mask(m, spacing)).transpose()?,
        ..s.clone()
    })
}

fn affine_to_unit(s: &ScanRecord, lo: f64, hi: f64) -> Result<ScanRecord> {
    let scale = hi - lo;
    let image = s.image.map(|v| (((v as f64 - lo) / scale).clamp(0.0, 1.0)) as f32)?;
    Ok(s.with_image(image))
}

/// Maps the image minimum to 0 and maximum to 1.
pub fn normalize_minmax(s: &ScanRecord) -> Result<ScanRecord> {
    let (lo, hi) = s.image.min_max();
    if lo == hi {
        return Err(Error::Degenerate(format!(
            "scan {} is constant ({lo}); cannot normalize",
            s.id
        )));
    }
    affine_to_unit(s, lo as f64, hi as f64)
}

/// `p`-th percentile (0..=100) of `values` with linear interpolation between
/// order statistics.
pub fn percentile(values: &[f32], p: f64) -> f64 {
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    percentile_sorted(&sorted, p)
}

fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let i0 = libm::floor(rank) as usize;
    let i1 = (i0 + 1).min(sorted.len() - 1);
    let w = rank - i0 as f64;
    (1.0 - w) * sorted[i0] as f64 + w * sorted[i1] as f64
}

/// Winsorizes at two percentiles and maps them to 0 and 1.
pub fn standardize_intensity(s: &ScanRecord, p_low: f64, p_high: f64) -> Result<ScanRecord> {
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({p_low}, {p_high})"
        )));
    }
    let mut sorted = s.image.data().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile_sorted(&sorted, p_low);
    let hi = percentile_sorted(&sorted, p_high);
    if lo >= hi {
        return Err(Error::Degenerate(format!(
            "scan {}: percentiles {p_low} and {p_high} share the value {lo}",
            s.id
        )));
    }
    affine_to_unit(s, lo, hi)
}

/// Bilateral filter: every voxel becomes the average of its neighbours
/// within `ceil(3 · sigma_spatial)` voxels, weighted by a spatial Gaussian
/// (in voxel units) times a Gaussian of the intensity difference.
/// Neighbours outside the volume are skipped.
pub fn bilateral_filter(v: &Volume, sigma_spatial: f64, sigma_range: f64) -> Result<Volume> {
    if !(sigma_spatial > 0.0 && sigma_range > 0.0) {
        return Err(Error::invalid(format!(
            "smoothing sigmas must be positive, got ({sigma_spatial}, {sigma_range})"
        )));
    }
    let r = libm::ceil(3.0 * sigma_spatial) as isize;
    let d = (2 * r + 1) as usize;
    let mut spatial = vec![0.0f64; d * d * d];
    for (i, w) in spatial.iter_mut().enumerate() {
        let (a, b, c) = (
            (i / (d * d)) as isize - r,
            ((i / d) % d) as isize - r,
            (i % d) as isize - r,
        );
        *w = libm::exp(-((a * a + b * b + c * c) as f64) / (2.0 * sigma_spatial * sigma_spatial));
    }
    let inv_range = if sigma_range.is_finite() {
        1.0 / (2.0 * sigma_range * sigma_range)
    } else {
        0.0
    };
    let e = v.extents();
    let mut out = Vec::with_capacity(v.data().len());
    for c in 0..v.channels() {
        let plane = v.channel(c);
        for x in 0..e[0] as isize {
            for y in 0..e[1] as isize {
                for z in 0..e[2] as isize {
                    let centre = plane[((x as usize) * e[1] + y as usize) * e[2] + z as usize] as f64;
                    let (mut num, mut den) = (0.0, 0.0);
                    for a in -r..=r {
                        let xx = x + a;
                        if xx < 0 || xx >= e[0] as isize {
                            continue;
                        }
                        for b in -r..=r {
                            let yy = y + b;
                            if yy < 0 || yy >= e[1] as isize {
                                continue;
                            }
                            let row = ((xx as usize) * e[1] + yy as usize) * e[2];
                            let krow = (((a + r) as usize) * d + (b + r) as usize) * d;
                            let z0 = (z - r).max(0);
                            let z1 = (z + r).min(e[2] as isize - 1);
                            for zz in z0..=z1 {
                                let val = plane[row + zz as usize] as f64;
                                let diff = val - centre;
                                let w = spatial[krow + (zz - z + r) as usize] * libm::exp(-diff * diff * inv_range);
                                num += w * val;
                                den += w;
                            }
                        }
                    }
                    out.push((num / den) as f32);
                }
            }
        }
    }
    Volume::new(v.channels(), e, v.spacing(), out)
}

pub fn smooth_edge_preserving(s: &ScanRecord, sigma_spatial: f64, sigma_range: f64) -> Result<ScanRecord> {
    Ok(s.with_image(bilateral_filter(&s.image, sigma_spatial, sigma_range)?))
}
