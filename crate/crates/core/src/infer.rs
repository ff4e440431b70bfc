//! Whole-scan inference with overlapping windows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::HierNet;
use crate::nn::Tensor;
use crate::volume::{BinaryMask, Volume, VoxelBox};

pub const DEFAULT_WINDOW: [usize; 3] = [256, 256, 48];
pub const DEFAULT_OVERLAP: f64 = 0.25;

/// Window origins covering a scan (after padding it up to the window size
/// on axes where it is smaller).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub window: [usize; 3],
    pub overlap: f64,
    /// Extents the origins refer to: `max(scan, window)` per axis.
    pub padded_extents: [usize; 3],
    pub origins: Vec<[usize; 3]>,
}

impl WindowPlan {
    pub fn boxes(&self) -> impl Iterator<Item = VoxelBox> + '_ {
        self.origins.iter().map(|&o| VoxelBox::new(o, self.window))
    }
}

/// Distance between consecutive window origins along one axis.
pub fn window_stride(window: usize, overlap: f64) -> usize {
    (libm::round(window as f64 * (1.0 - overlap)) as usize).max(1)
}

/// Origins along one axis of length `n`: regular steps, with the last window
/// shifted back so it ends exactly at the boundary.
pub fn axis_origins(n: usize, window: usize, overlap: f64) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let stride = window_stride(window, overlap);
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        out.push(o);
        if o + window >= n {
            break;
        }
        o += stride;
        if o + window > n {
            o = n - window;
        }
    }
    out
}

pub fn plan_windows(extents: [usize; 3], window: [usize; 3], overlap: f64) -> Result<WindowPlan> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if window.contains(&0) || extents.contains(&0) {
        return Err(Error::invalid("window and scan extents must be positive"));
    }
    let per_axis: Vec<Vec<usize>> = (0..3).map(|a| axis_origins(extents[a], window[a], overlap)).collect();
    let mut origins = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &x in &per_axis[0] {
        for &y in &per_axis[1] {
            for &z in &per_axis[2] {
                origins.push([x, y, z]);
            }
        }
    }
    Ok(WindowPlan {
        window,
        overlap,
        padded_extents: [0, 1, 2].map(|a| extents[a].max(window[a])),
        origins,
    })
}

/// Anything that maps an image window to per-voxel class probabilities.
pub trait Predictor {
    /// Returns a volume with one channel per class, summing to 1 per voxel.
    fn predict(&self, window: &Volume) -> Result<Volume>;
}

/// Two-class softmax of a logit volume.
pub fn softmax2(logits: &Volume) -> Result<Volume> {
    if logits.channels() != 2 {
        return Err(Error::shape("logit channels", &[2], &[logits.channels()]));
    }
    let n = logits.voxels();
    let (l0, l1) = logits.data().split_at(n);
    let mut data = vec![0.0f32; 2 * n];
    for j in 0..n {
        let d = l1[j] as f64 - l0[j] as f64;
        let fg = if d >= 0.0 {
            1.0 / (1.0 + libm::exp(-d))
        } else {
            let e = libm::exp(d);
            e / (1.0 + e)
        };
        data[n + j] = fg as f32;
        data[j] = (1.0 - fg) as f32;
    }
    Volume::new(2, logits.extents(), logits.spacing(), data)
}

impl Predictor for HierNet {
    fn predict(&self, window: &Volume) -> Result<Volume> {
        let out = self.forward(&Tensor::stack(core::slice::from_ref(window))?)?;
        let logits = out.final_logits.unstack(window.spacing()).swap_remove(0);
        softmax2(&logits)
    }
}

/// Runs `model` over every window of the plan and averages the class
/// probabilities of overlapping windows. Scans smaller than the window are
/// zero padded and the result is cropped back to the scan's extents.
pub fn sliding_infer(model: &impl Predictor, image: &Volume, window: [usize; 3], overlap: f64) -> Result<Volume> {
    let extents = image.extents();
    let plan = plan_windows(extents, window, overlap)?;
    let (padded, content) = image.pad_to(plan.padded_extents, 0.0)?;
    let pe = plan.padded_extents;
    let plane = pe[0] * pe[1] * pe[2];
    let mut sum: Vec<f64> = Vec::new();
    let mut count = vec![0u32; plane];
    let mut classes = 0;
    for b in plan.boxes() {
        let probs = model.predict(&padded.crop(&b)?)?;
        if probs.extents() != window {
            return Err(Error::shape("predictor output", &window, &probs.extents()));
        }
        if sum.is_empty() {
            classes = probs.channels();
            sum = vec![0.0; classes * plane];
        } else if probs.channels() != classes {
            return Err(Error::shape("predictor channels", &[classes], &[probs.channels()]));
        }
        let w = window;
        for i in 0..w[0] {
            for j in 0..w[1] {
                let dst_row = ((b.origin[0] + i) * pe[1] + b.origin[1] + j) * pe[2] + b.origin[2];
                let src_row = (i * w[1] + j) * w[2];
                for k in 0..w[2] {
                    count[dst_row + k] += 1;
                }
                for c in 0..classes {
                    let src = &probs.channel(c)[src_row..src_row + w[2]];
                    let dst = &mut sum[c * plane + dst_row..c * plane + dst_row + w[2]];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s as f64;
                    }
                }
            }
        }
    }
    let data: Vec<f32> = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / count[i % plane] as f64) as f32)
        .collect();
    Volume::new(classes, pe, image.spacing(), data)?.crop(&content)
}

/// Sliding-window inference followed by [`binarize`].
pub fn segment(model: &impl Predictor, image: &Volume, window: [usize; 3], overlap: f64) -> Result<BinaryMask> {
    binarize(&sliding_infer(model, image, window, overlap)?)
}

/// Foreground where its probability strictly exceeds the background's.
pub fn binarize(prob: &Volume) -> Result<BinaryMask> {
    if prob.channels() != 2 {
        return Err(Error::shape("probability channels", &[2], &[prob.channels()]));
    }
    let (bg, fg) = (prob.channel(0), prob.channel(1));
    let data = bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect();
    BinaryMask::new(prob.extents(), prob.spacing(), data)
}
