//! Synthetic scans with a known "organ" mask.
//!
//! A phantom is a noisy background with `n_blobs` soft ellipsoids composed by
//! maximum. Blob 0 is the organ: bright (about 0.8) and labelled. The others
//! are dimmer distractors. Each blob has the flat-topped profile
//! `A · exp(−ln 2 · r⁸)` where `r` is the normalized ellipsoidal radius, so
//! its half-maximum support is exactly the ellipsoid `r ≤ 1`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::preprocess::{Orientation, ScanRecord};
use crate::volume::{BinaryMask, Volume};

pub const BACKGROUND: f64 = 0.1;
pub const NOISE_STD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub centre: [f64; 3],
    pub radii: [f64; 3],
    pub amplitude: f64,
}

impl Blob {
    /// Squared normalized radius of voxel `p`.
    pub fn r2(&self, p: [usize; 3]) -> f64 {
        (0..3)
            .map(|a| {
                let d = (p[a] as f64 - self.centre[a]) / self.radii[a];
                d * d
            })
            .sum()
    }

    pub fn value(&self, p: [usize; 3]) -> f64 {
        let r2 = self.r2(p);
        let r8 = r2 * r2 * r2 * r2;
        self.amplitude * libm::exp(-LN_2 * r8)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        self.r2(p) <= 1.0
    }
}

fn random_blob(rng: &mut ChaCha8Rng, extents: [usize; 3], radius: (f64, f64), amplitude: f64) -> Blob {
    let mut radii = [0.0; 3];
    let mut centre = [0.0; 3];
    for a in 0..3 {
        let n = extents[a] as f64;
        radii[a] = rng.gen_range(radius.0..radius.1) * n;
        // Keep the half-maximum support inside the volume.
        let margin = radii[a] + 1.0;
        centre[a] = rng.gen_range(margin..(n - 1.0 - margin).max(margin + 1e-9));
    }
    Blob {
        centre,
        radii,
        amplitude,
    }
}

/// Blob layout of the phantom with this seed; blob 0 is the organ.
pub fn phantom_blobs(seed: u64, extents: [usize; 3], n_blobs: usize) -> Vec<Blob> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blobs = Vec::with_capacity(n_blobs);
    for i in 0..n_blobs {
        blobs.push(if i == 0 {
            let a = rng.gen_range(0.75..0.85);
            random_blob(&mut rng, extents, (0.12, 0.2), a)
        } else {
            let a = rng.gen_range(0.35..0.55);
            random_blob(&mut rng, extents, (0.08, 0.2), a)
        });
    }
    blobs
}

/// Deterministic phantom `phantom-{seed:04}` at 1 mm isotropic spacing in
/// RAS orientation.
pub fn make_phantom(seed: u64, extents: [usize; 3], n_blobs: usize) -> Result<ScanRecord> {
    if extents.iter().any(|&e| e < 16) {
        return Err(Error::invalid(format!(
            "phantom extents must be at least 16 per axis, got {extents:?}"
        )));
    }
    if n_blobs == 0 {
        return Err(Error::invalid("a phantom needs at least the organ blob"));
    }
    let blobs = phantom_blobs(seed, extents, n_blobs);
    // Noise uses its own stream so the layout does not depend on the extents
    // through the number of draws.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let spacing = [1.0; 3];
    let image = Volume::from_fn(1, extents, spacing, |_, p| {
        let v = blobs.iter().map(|b| b.value(p)).fold(BACKGROUND, f64::max);
        (v + noise.sample(&mut noise_rng)) as f32
    })?;
    let mask = BinaryMask::from_fn(extents, spacing, |p| blobs[0].contains(p))?;
    ScanRecord::new(format!("phantom-{seed:04}"), image, Some(mask), Orientation::RAS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(
            make_phantom(3, [32, 32, 16], 4).unwrap(),
            make_phantom(3, [32, 32, 16], 4).unwrap()
        );
        assert_ne!(
            make_phantom(3, [32, 32, 16], 4).unwrap(),
            make_phantom(4, [32, 32, 16], 4).unwrap()
        );
    }

    #[test]
    fn foreground_fraction_in_small_organ_regime() {
        for seed in 0..20 {
            let p = make_phantom(seed, [64, 64, 48], 4).unwrap();
            let m = p.mask.unwrap();
            let f = m.foreground() as f64 / m.voxels() as f64;
            assert!((0.005..=0.10).contains(&f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn single_blob_mask_is_half_maximum_support() {
        let e = [24, 20, 16];
        let p = make_phantom(11, e, 1).unwrap();
        let blob = phantom_blobs(11, e, 1)[0];
        let m = p.mask.unwrap();
        for x in 0..e[0] {
            for y in 0..e[1] {
                for z in 0..e[2] {
                    let q = [x, y, z];
                    assert_eq!(m.get(q), blob.value(q) >= 0.5 * blob.amplitude);
                }
            }
        }
    }

    #[test]
    fn small_extents_rejected() {
        assert!(make_phantom(0, [15, 32, 32], 3).is_err());
    }
}
