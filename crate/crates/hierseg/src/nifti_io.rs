//! NIfTI-1 reading and writing for scans and masks.
//!
//! Voxel axes map to the file's `i, j, k` axes. The anatomical orientation is
//! derived from the header affine (sform, then qform, then pixdim) by taking
//! the dominant world axis of each voxel axis.

use std::fs;
use std::path::{Path, PathBuf};

use hierseg_core::preprocess::{Orientation, ScanRecord};
use hierseg_core::{BinaryMask, Volume};
use ndarray::{Array3, ShapeBuilder};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};

use crate::error::{Error, Result};

pub const IMAGE_SUFFIX: &str = "_image.nii.gz";
pub const MASK_SUFFIX: &str = "_mask.nii.gz";

/// A decoded 3D file: values in `(x, y, z)` order with `z` fastest.
#[derive(Debug, Clone)]
pub struct RawVolume {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub orientation: Orientation,
    pub data: Vec<f32>,
}

pub fn orientation_from_affine(a: &[[f64; 3]; 3]) -> Result<Orientation, String> {
    const POS: [char; 3] = ['R', 'A', 'S'];
    const NEG: [char; 3] = ['L', 'P', 'I'];
    let mut code = String::new();
    for j in 0..3 {
        let (i, v) = (0..3)
            .map(|i| (i, a[i][j]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("three rows");
        if v == 0.0 {
            return Err(format!("voxel axis {j} has no world direction"));
        }
        code.push(if v > 0.0 { POS[i] } else { NEG[i] });
    }
    code.parse().map_err(|e: hierseg_core::Error| e.to_string())
}

fn header_for(extents: [usize; 3], spacing: [f64; 3], orientation: Orientation) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    let mut rows = [[0f32; 4]; 3];
    for (j, letter) in orientation.letters().into_iter().enumerate() {
        let (i, sign) = match letter {
            'R' => (0, 1.0),
            'L' => (0, -1.0),
            'A' => (1, 1.0),
            'P' => (1, -1.0),
            'S' => (2, 1.0),
            _ => (2, -1.0),
        };
        rows[i][j] = sign * spacing[j] as f32;
    }
    h.srow_x = rows[0];
    h.srow_y = rows[1];
    h.srow_z = rows[2];
    h.sform_code = 1;
    h.qform_code = 0;
    h.pixdim = [
        1.0,
        spacing[0] as f32,
        spacing[1] as f32,
        spacing[2] as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    h.dim = [3, extents[0] as u16, extents[1] as u16, extents[2] as u16, 1, 1, 1, 1];
    h.xyzt_units = 2;
    h
}

pub fn read_volume(path: &Path) -> Result<RawVolume> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::format(path, e))?;
    let h = obj.header().clone();
    let dims = h.dim().map_err(|e| Error::format(path, e))?;
    let extra: usize = dims.iter().skip(3).map(|&d| d as usize).product();
    if dims.len() < 3 || extra != 1 {
        return Err(Error::format(
            path,
            format!("expected a single-channel 3D volume, got dims {dims:?}"),
        ));
    }
    let extents = [dims[0] as usize, dims[1] as usize, dims[2] as usize];
    let spacing = [1, 2, 3].map(|i| h.pixdim[i].abs() as f64);
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::format(path, format!("invalid voxel spacing {spacing:?}")));
    }
    let aff = h.affine::<f64>();
    let m = [0, 1, 2].map(|i| [0, 1, 2].map(|j| aff[(i, j)]));
    let orientation = orientation_from_affine(&m).map_err(|e| Error::format(path, e))?;
    let arr = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| Error::format(path, e))?;
    // Trailing singleton dimensions do not change the logical (C) order.
    let data: Vec<f32> = arr.as_standard_layout().iter().copied().collect();
    if data.len() != extents.iter().product::<usize>() {
        return Err(Error::format(
            path,
            format!("expected {extents:?} voxels, found {}", data.len()),
        ));
    }
    Ok(RawVolume {
        extents,
        spacing,
        orientation,
        data,
    })
}

fn write_f32(path: &Path, h: &NiftiHeader, extents: [usize; 3], data: &[f32]) -> Result<()> {
    let arr =
        Array3::from_shape_vec(extents.into_shape_with_order(), data.to_vec()).map_err(|e| Error::format(path, e))?;
    ensure_parent(path)?;
    WriterOptions::new(path)
        .reference_header(h)
        .write_nifti(&arr)
        .map_err(|e| Error::format(path, e))
}

fn write_u8(path: &Path, h: &NiftiHeader, extents: [usize; 3], data: &[u8]) -> Result<()> {
    let arr =
        Array3::from_shape_vec(extents.into_shape_with_order(), data.to_vec()).map_err(|e| Error::format(path, e))?;
    ensure_parent(path)?;
    WriterOptions::new(path)
        .reference_header(h)
        .write_nifti(&arr)
        .map_err(|e| Error::format(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Writes channel 0 of `v` as float32.
pub fn write_volume(path: &Path, v: &Volume, orientation: Orientation) -> Result<()> {
    let h = header_for(v.extents(), v.spacing(), orientation);
    write_f32(path, &h, v.extents(), v.channel(0))
}

/// Writes a mask as uint8 with values 0 and 1.
pub fn write_mask(path: &Path, m: &BinaryMask, orientation: Orientation) -> Result<()> {
    let h = header_for(m.extents(), m.spacing(), orientation);
    write_u8(path, &h, m.extents(), m.data())
}

/// Loads an image and an optional mask. Mask values above 0.5 become 1.
pub fn load_scan(id: impl Into<String>, image_path: &Path, mask_path: Option<&Path>) -> Result<ScanRecord> {
    let img = read_volume(image_path)?;
    let image = Volume::new(1, img.extents, img.spacing, img.data)?;
    let mask = match mask_path {
        None => None,
        Some(p) => {
            let m = read_volume(p)?;
            if m.extents != img.extents {
                return Err(Error::format(
                    p,
                    format!(
                        "mask extents {:?} do not match image extents {:?}",
                        m.extents, img.extents
                    ),
                ));
            }
            if m.orientation != img.orientation {
                return Err(Error::format(
                    p,
                    format!(
                        "mask orientation {} does not match image orientation {}",
                        m.orientation, img.orientation
                    ),
                ));
            }
            let bits = m.data.iter().map(|&v| u8::from(v > 0.5)).collect();
            Some(BinaryMask::new(m.extents, img.spacing, bits)?)
        }
    };
    Ok(ScanRecord::new(id, image, mask, img.orientation)?)
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{IMAGE_SUFFIX}"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{MASK_SUFFIX}"))
}

/// Writes `<id>_image.nii.gz` and, when present, `<id>_mask.nii.gz`.
pub fn save_scan(dir: &Path, s: &ScanRecord) -> Result<Vec<PathBuf>> {
    let mut out = vec![image_path(dir, &s.id)];
    write_volume(&out[0], &s.image, s.orientation)?;
    if let Some(m) = &s.mask {
        out.push(mask_path(dir, &s.id));
        write_mask(&out[1], m, s.orientation)?;
    }
    Ok(out)
}

/// A scan found on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanFiles {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Lists `*_image.nii[.gz]` files in `dir`, sorted by id, pairing each with
/// a `*_mask.nii[.gz]` sibling when one exists.
pub fn discover(dir: &Path) -> Result<Vec<ScanFiles>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        for ext in ["nii.gz", "nii"] {
            if let Some(id) = name.strip_suffix(&format!("_image.{ext}")) {
                let mask = [format!("{id}_mask.nii.gz"), format!("{id}_mask.nii")]
                    .into_iter()
                    .map(|m| dir.join(m))
                    .find(|m| m.exists());
                out.push(ScanFiles {
                    id: id.to_string(),
                    image: path.clone(),
                    mask,
                });
                break;
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Loads every scan in `dir`.
pub fn load_dir(dir: &Path) -> Result<Vec<ScanRecord>> {
    discover(dir)?
        .into_iter()
        .map(|f| load_scan(f.id, &f.image, f.mask.as_deref()))
        .collect()
}
