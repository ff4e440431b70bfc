//! Dense volumes indexed `(channel, x, y, z)` and the index-space operations
//! shared by preprocessing, augmentation and inference.
//!
//! Storage is row-major with `z` fastest: the flat offset of `(c, x, y, z)` is
//! `((c * nx + x) * ny + y) * nz + z`. `x` is width, `y` height and `z` the
//! slice (depth) axis.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Axis> {
        match i {
            0 => Ok(Axis::X),
            1 => Ok(Axis::Y),
            2 => Ok(Axis::Z),
            _ => Err(Error::invalid(format!("axis index {i} is not one of 0, 1, 2"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// An axis-aligned box in voxel index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelBox {
    pub origin: [usize; 3],
    pub size: [usize; 3],
}

impl VoxelBox {
    pub fn new(origin: [usize; 3], size: [usize; 3]) -> Self {
        Self { origin, size }
    }

    pub fn covering(extents: [usize; 3]) -> Self {
        Self {
            origin: [0; 3],
            size: extents,
        }
    }

    pub fn check_within(&self, extents: [usize; 3]) -> Result<()> {
        for axis in Axis::ALL {
            let a = axis.index();
            if self.origin[a] + self.size[a] > extents[a] {
                return Err(Error::OutOfBounds {
                    axis,
                    origin: self.origin[a],
                    size: self.size[a],
                    extent: extents[a],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a])
    }
}

#[inline]
pub(crate) fn voxel_count(extents: [usize; 3]) -> usize {
    extents[0] * extents[1] * extents[2]
}

#[inline]
fn flat(extents: [usize; 3], p: [usize; 3]) -> usize {
    (p[0] * extents[1] + p[1]) * extents[2] + p[2]
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")))
    }
}

fn check_extents(extents: [usize; 3]) -> Result<()> {
    if extents.iter().all(|&e| e >= 1) {
        Ok(())
    } else {
        Err(Error::invalid(format!("extents must be at least 1, got {extents:?}")))
    }
}

/// Builds a new grid of `channels` planes by pulling every output voxel from a
/// source position computed by `src_of`.
fn remap<T: Copy>(
    data: &[T],
    channels: usize,
    src_extents: [usize; 3],
    out_extents: [usize; 3],
    src_of: impl Fn([usize; 3]) -> [usize; 3],
) -> Vec<T> {
    let n_src = voxel_count(src_extents);
    let mut out = Vec::with_capacity(channels * voxel_count(out_extents));
    for c in 0..channels {
        let plane = &data[c * n_src..(c + 1) * n_src];
        for x in 0..out_extents[0] {
            for y in 0..out_extents[1] {
                for z in 0..out_extents[2] {
                    out.push(plane[flat(src_extents, src_of([x, y, z]))]);
                }
            }
        }
    }
    out
}

fn crop_raw<T: Copy>(data: &[T], channels: usize, extents: [usize; 3], b: &VoxelBox) -> Result<Vec<T>> {
    b.check_within(extents)?;
    let n = voxel_count(extents);
    let mut out = Vec::with_capacity(channels * voxel_count(b.size));
    for c in 0..channels {
        let plane = &data[c * n..(c + 1) * n];
        for x in 0..b.size[0] {
            for y in 0..b.size[1] {
                let start = flat(extents, [b.origin[0] + x, b.origin[1] + y, b.origin[2]]);
                out.extend_from_slice(&plane[start..start + b.size[2]]);
            }
        }
    }
    Ok(out)
}

fn pad_raw<T: Copy>(data: &[T], channels: usize, extents: [usize; 3], target: [usize; 3], fill: T) -> Result<Vec<T>> {
    for axis in Axis::ALL {
        let a = axis.index();
        if target[a] < extents[a] {
            return Err(Error::invalid(format!(
                "pad target {} on axis {axis} is smaller than extent {}",
                target[a], extents[a]
            )));
        }
    }
    let n = voxel_count(extents);
    let nt = voxel_count(target);
    let mut out = vec![fill; channels * nt];
    for c in 0..channels {
        for x in 0..extents[0] {
            for y in 0..extents[1] {
                let src = c * n + flat(extents, [x, y, 0]);
                let dst = c * nt + flat(target, [x, y, 0]);
                out[dst..dst + extents[2]].copy_from_slice(&data[src..src + extents[2]]);
            }
        }
    }
    Ok(out)
}

fn flip_raw<T: Copy>(data: &[T], channels: usize, extents: [usize; 3], axis: Axis) -> Vec<T> {
    let a = axis.index();
    remap(data, channels, extents, extents, |mut p| {
        p[a] = extents[a] - 1 - p[a];
        p
    })
}

fn plane_axes(plane: (Axis, Axis)) -> Result<(usize, usize)> {
    let (a, b) = (plane.0.index(), plane.1.index());
    if a == b {
        return Err(Error::invalid(format!(
            "rotation plane needs two distinct axes, got ({}, {})",
            plane.0, plane.1
        )));
    }
    Ok((a, b))
}

/// Output extents of a quarter-turn rotation.
pub fn rotated_extents(extents: [usize; 3], plane: (Axis, Axis), k: u8) -> Result<[usize; 3]> {
    let (a, b) = plane_axes(plane)?;
    let mut out = extents;
    if k % 2 == 1 {
        out.swap(a, b);
    }
    Ok(out)
}

/// Same semantics as `numpy.rot90(m, k, axes=(a, b))`: one quarter turn rotates
/// the direction of axis `a` towards axis `b`.
fn rotate_raw<T: Copy>(
    data: &[T],
    channels: usize,
    extents: [usize; 3],
    plane: (Axis, Axis),
    k: u8,
) -> Result<(Vec<T>, [usize; 3])> {
    if k > 3 {
        return Err(Error::invalid(format!("rotation count k must be in 0..=3, got {k}")));
    }
    let (a, b) = plane_axes(plane)?;
    let out_extents = rotated_extents(extents, plane, k)?;
    let (na, nb) = (extents[a], extents[b]);
    let out = remap(data, channels, extents, out_extents, |q| {
        let mut p = q;
        match k {
            0 => {}
            1 => {
                p[a] = q[b];
                p[b] = nb - 1 - q[a];
            }
            2 => {
                p[a] = na - 1 - q[a];
                p[b] = nb - 1 - q[b];
            }
            _ => {
                p[a] = na - 1 - q[b];
                p[b] = q[a];
            }
        }
        p
    });
    Ok((out, out_extents))
}

fn permute_raw<T: Copy>(
    data: &[T],
    channels: usize,
    extents: [usize; 3],
    perm: [Axis; 3],
) -> Result<(Vec<T>, [usize; 3])> {
    let p = [perm[0].index(), perm[1].index(), perm[2].index()];
    if p[0] == p[1] || p[1] == p[2] || p[0] == p[2] {
        return Err(Error::invalid(format!("{perm:?} is not a permutation of the axes")));
    }
    let out_extents = [extents[p[0]], extents[p[1]], extents[p[2]]];
    let out = remap(data, channels, extents, out_extents, |q| {
        let mut src = [0; 3];
        for i in 0..3 {
            src[p[i]] = q[i];
        }
        src
    });
    Ok((out, out_extents))
}

/// A `channels × x × y × z` array of finite `f32` values with voxel spacing in
/// millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    channels: usize,
    extents: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(channels: usize, extents: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_extents(extents)?;
        check_spacing(spacing)?;
        if channels == 0 {
            return Err(Error::invalid("a volume needs at least one channel"));
        }
        if data.len() != channels * voxel_count(extents) {
            return Err(Error::shape(
                "volume data",
                &[channels * voxel_count(extents)],
                &[data.len()],
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            channels,
            extents,
            spacing,
            data,
        })
    }

    /// Skips the finiteness scan; callers guarantee the invariants.
    pub(crate) fn from_parts(channels: usize, extents: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * voxel_count(extents));
        Self {
            channels,
            extents,
            spacing,
            data,
        }
    }

    pub fn zeros(channels: usize, extents: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::filled(channels, extents, spacing, 0.0)
    }

    pub fn filled(channels: usize, extents: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        Self::new(channels, extents, spacing, vec![value; channels * voxel_count(extents)])
    }

    pub fn from_fn(
        channels: usize,
        extents: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, [usize; 3]) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * voxel_count(extents));
        for c in 0..channels {
            for x in 0..extents[0] {
                for y in 0..extents[1] {
                    for z in 0..extents[2] {
                        data.push(f(c, [x, y, z]));
                    }
                }
            }
        }
        Self::new(channels, extents, spacing, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.extents)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn offset(&self, c: usize, p: [usize; 3]) -> usize {
        c * self.voxels() + flat(self.extents, p)
    }

    pub fn get(&self, c: usize, p: [usize; 3]) -> f32 {
        self.data[self.offset(c, p)]
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    /// Applies `f` to every value; the result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.extents,
            self.spacing,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn crop(&self, b: &VoxelBox) -> Result<Self> {
        let data = crop_raw(&self.data, self.channels, self.extents, b)?;
        Ok(Self::from_parts(self.channels, b.size, self.spacing, data))
    }

    /// Pads with `fill` up to `target`, keeping the content at the origin
    /// corner. The returned box locates the original content.
    pub fn pad_to(&self, target: [usize; 3], fill: f32) -> Result<(Self, VoxelBox)> {
        if !fill.is_finite() {
            return Err(Error::invalid("pad fill value must be finite"));
        }
        let data = pad_raw(&self.data, self.channels, self.extents, target, fill)?;
        Ok((
            Self::from_parts(self.channels, target, self.spacing, data),
            VoxelBox::covering(self.extents),
        ))
    }

    pub fn flip(&self, axis: Axis) -> Self {
        Self::from_parts(
            self.channels,
            self.extents,
            self.spacing,
            flip_raw(&self.data, self.channels, self.extents, axis),
        )
    }

    pub fn rotate90(&self, plane: (Axis, Axis), k: u8) -> Result<Self> {
        let (data, extents) = rotate_raw(&self.data, self.channels, self.extents, plane, k)?;
        let (a, b) = plane_axes(plane)?;
        let mut spacing = self.spacing;
        if k % 2 == 1 {
            spacing.swap(a, b);
        }
        Ok(Self::from_parts(self.channels, extents, spacing, data))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute_axes(&self, perm: [Axis; 3]) -> Result<Self> {
        let (data, extents) = permute_raw(&self.data, self.channels, self.extents, perm)?;
        let spacing = [
            self.spacing[perm[0].index()],
            self.spacing[perm[1].index()],
            self.spacing[perm[2].index()],
        ];
        Ok(Self::from_parts(self.channels, extents, spacing, data))
    }

    /// Stacks single-channel volumes of identical extents along the channel axis.
    pub fn concat_channels(parts: &[Volume]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            if p.extents != first.extents {
                return Err(Error::shape("channel concatenation", &first.extents, &p.extents));
            }
            data.extend_from_slice(&p.data);
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        Ok(Self::from_parts(channels, first.extents, first.spacing, data))
    }
}

/// A single-channel `{0, 1}` label volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    extents: [usize; 3],
    spacing: [f64; 3],
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(extents: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> Result<Self> {
        check_extents(extents)?;
        check_spacing(spacing)?;
        if data.len() != voxel_count(extents) {
            return Err(Error::shape("mask data", &[voxel_count(extents)], &[data.len()]));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "mask value {} at flat index {i} is not 0 or 1",
                data[i]
            )));
        }
        Ok(Self { extents, spacing, data })
    }

    pub(crate) fn from_parts(extents: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), voxel_count(extents));
        Self { extents, spacing, data }
    }

    pub fn zeros(extents: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(extents, spacing, vec![0; voxel_count(extents)])
    }

    pub fn from_fn(extents: [usize; 3], spacing: [f64; 3], mut f: impl FnMut([usize; 3]) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(extents));
        for x in 0..extents[0] {
            for y in 0..extents[1] {
                for z in 0..extents[2] {
                    data.push(f([x, y, z]) as u8);
                }
            }
        }
        Self::new(extents, spacing, data)
    }

    /// Maps every value `> threshold` to 1 and the rest to 0.
    pub fn from_threshold(v: &Volume, threshold: f32) -> Result<Self> {
        if v.channels() != 1 {
            return Err(Error::invalid(
                "a mask can only be derived from a single-channel volume",
            ));
        }
        Ok(Self::from_parts(
            v.extents(),
            v.spacing(),
            v.data().iter().map(|&x| (x > threshold) as u8).collect(),
        ))
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, p: [usize; 3]) -> bool {
        self.data[flat(self.extents, p)] == 1
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn voxels(&self) -> usize {
        self.data.len()
    }

    pub fn to_volume(&self) -> Volume {
        Volume::from_parts(
            1,
            self.extents,
            self.spacing,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Bounding box of the foreground, or `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<VoxelBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for x in 0..self.extents[0] {
            for y in 0..self.extents[1] {
                for z in 0..self.extents[2] {
                    if self.get([x, y, z]) {
                        any = true;
                        for (a, v) in [x, y, z].into_iter().enumerate() {
                            lo[a] = lo[a].min(v);
                            hi[a] = hi[a].max(v);
                        }
                    }
                }
            }
        }
        any.then(|| VoxelBox::new(lo, [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1]))
    }

    pub fn crop(&self, b: &VoxelBox) -> Result<Self> {
        Ok(Self::from_parts(
            b.size,
            self.spacing,
            crop_raw(&self.data, 1, self.extents, b)?,
        ))
    }

    pub fn pad_to(&self, target: [usize; 3]) -> Result<(Self, VoxelBox)> {
        let data = pad_raw(&self.data, 1, self.extents, target, 0)?;
        Ok((
            Self::from_parts(target, self.spacing, data),
            VoxelBox::covering(self.extents),
        ))
    }

    pub fn flip(&self, axis: Axis) -> Self {
        Self::from_parts(self.extents, self.spacing, flip_raw(&self.data, 1, self.extents, axis))
    }

    pub fn rotate90(&self, plane: (Axis, Axis), k: u8) -> Result<Self> {
        let (data, extents) = rotate_raw(&self.data, 1, self.extents, plane, k)?;
        let (a, b) = plane_axes(plane)?;
        let mut spacing = self.spacing;
        if k % 2 == 1 {
            spacing.swap(a, b);
        }
        Ok(Self::from_parts(extents, spacing, data))
    }

    pub fn permute_axes(&self, perm: [Axis; 3]) -> Result<Self> {
        let (data, extents) = permute_raw(&self.data, 1, self.extents, perm)?;
        let spacing = [
            self.spacing[perm[0].index()],
            self.spacing[perm[1].index()],
            self.spacing[perm[2].index()],
        ];
        Ok(Self::from_parts(extents, spacing, data))
    }
}
