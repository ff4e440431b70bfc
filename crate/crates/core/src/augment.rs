//! Random flips, quarter turns and crops applied identically to an image and
//! its mask.

use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{Axis, BinaryMask, Volume, VoxelBox};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Mirror along x with probability 1/2.
    pub flip: bool,
    /// Rotate by `k · 90°` in the (x, y) plane, `k` uniform in 0..4.
    pub rotate: bool,
    pub crop: [usize; 3],
    /// Probability that the crop is forced to contain a foreground voxel.
    pub fg_bias: f64,
}

impl AugmentConfig {
    pub fn new(crop: [usize; 3]) -> Self {
        Self {
            flip: true,
            rotate: true,
            crop,
            fg_bias: 0.5,
        }
    }

    /// Crop only, uniformly placed.
    pub fn crop_only(crop: [usize; 3]) -> Self {
        Self {
            flip: false,
            rotate: false,
            crop,
            fg_bias: 0.0,
        }
    }
}

fn check_pair(image: &Volume, mask: &BinaryMask) -> Result<()> {
    if image.extents() != mask.extents() {
        return Err(Error::shape("augment image vs mask", &image.extents(), &mask.extents()));
    }
    Ok(())
}

/// Chooses a crop origin. With probability `fg_bias` (and a non-empty mask)
/// the window is placed around a uniformly drawn foreground voxel.
pub fn crop_origin(mask: &BinaryMask, crop: [usize; 3], fg_bias: f64, rng: &mut impl Rng) -> Result<[usize; 3]> {
    let e = mask.extents();
    for axis in Axis::ALL {
        let a = axis.index();
        if crop[a] == 0 || crop[a] > e[a] {
            return Err(Error::invalid(format!(
                "crop {} on axis {axis} does not fit extent {}",
                crop[a], e[a]
            )));
        }
    }
    let fg = mask.foreground();
    let biased = fg > 0 && fg_bias > 0.0 && rng.gen_bool(fg_bias.min(1.0));
    let mut origin = [0; 3];
    if biased {
        let pick = rng.gen_range(0..fg);
        let idx = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick < foreground count");
        let p = [idx / (e[1] * e[2]), (idx / e[2]) % e[1], idx % e[2]];
        for a in 0..3 {
            let lo = (p[a] + 1).saturating_sub(crop[a]);
            let hi = p[a].min(e[a] - crop[a]);
            origin[a] = rng.gen_range(lo..=hi);
        }
    } else {
        for a in 0..3 {
            origin[a] = rng.gen_range(0..=e[a] - crop[a]);
        }
    }
    Ok(origin)
}

/// Applies the same random flip, rotation and crop to both volumes. Scans
/// smaller than the crop are zero padded first (corner padding).
pub fn augment(
    image: &Volume,
    mask: &BinaryMask,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(Volume, BinaryMask)> {
    check_pair(image, mask)?;
    let (mut img, mut msk) = (image.clone(), mask.clone());
    if cfg.flip && rng.gen_bool(0.5) {
        img = img.flip(Axis::X);
        msk = msk.flip(Axis::X);
    }
    if cfg.rotate {
        let k = rng.gen_range(0..4u8);
        img = img.rotate90((Axis::X, Axis::Y), k)?;
        msk = msk.rotate90((Axis::X, Axis::Y), k)?;
    }
    let e = img.extents();
    let target = [0, 1, 2].map(|a| e[a].max(cfg.crop[a]));
    if target != e {
        img = img.pad_to(target, 0.0)?.0;
        msk = msk.pad_to(target)?.0;
    }
    let origin = crop_origin(&msk, cfg.crop, cfg.fg_bias, rng)?;
    let b = VoxelBox::new(origin, cfg.crop);
    Ok((img.crop(&b)?, msk.crop(&b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::make_phantom;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sorted(v: &Volume) -> Vec<f32> {
        let mut d = v.data().to_vec();
        d.sort_by(|a, b| a.total_cmp(b));
        d
    }

    #[test]
    fn disabled_transforms_give_a_plain_crop() {
        let p = make_phantom(1, [32, 32, 16], 3).unwrap();
        let mask = p.mask.clone().unwrap();
        let cfg = AugmentConfig::crop_only([16, 16, 8]);
        let (img, m) = augment(&p.image, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let o = crop_origin(&mask, cfg.crop, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = VoxelBox::new(o, cfg.crop);
        assert_eq!(img, p.image.crop(&b).unwrap());
        assert_eq!(m, mask.crop(&b).unwrap());
    }

    #[test]
    fn full_size_crop_keeps_the_value_multiset() {
        let p = make_phantom(2, [24, 24, 16], 3).unwrap();
        let mask = p.mask.clone().unwrap();
        let cfg = AugmentConfig {
            flip: true,
            rotate: true,
            crop: [24, 24, 16],
            fg_bias: 0.5,
        };
        for seed in 0..8 {
            let (img, m) = augment(&p.image, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(sorted(&img), sorted(&p.image));
            assert_eq!(m.foreground(), mask.foreground());
        }
    }

    #[test]
    fn foreground_never_grows() {
        let p = make_phantom(3, [32, 32, 32], 4).unwrap();
        let mask = p.mask.clone().unwrap();
        let bbox = mask.bounding_box().unwrap();
        let cfg = AugmentConfig::new([16, 16, 16]);
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, m) = augment(&p.image, &mask, &cfg, &mut rng).unwrap();
            assert!(m.foreground() <= mask.foreground());
            assert!(m.data().iter().all(|&v| v <= 1));
        }
        // A crop large enough for the organ keeps all of it.
        let whole = AugmentConfig::crop_only(bbox.size);
        let (_, m) = augment(&p.image, &mask, &whole, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.foreground() <= mask.foreground());
        let exact = VoxelBox::new(bbox.origin, bbox.size);
        assert_eq!(mask.crop(&exact).unwrap().foreground(), mask.foreground());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = make_phantom(4, [32, 32, 16], 3).unwrap();
        let mask = p.mask.clone().unwrap();
        let cfg = AugmentConfig::new([16, 16, 16]);
        let a = augment(&p.image, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = augment(&p.image, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn biased_crops_contain_foreground() {
        let p = make_phantom(5, [48, 48, 32], 3).unwrap();
        let mask = p.mask.clone().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let o = crop_origin(&mask, [16, 16, 16], 1.0, &mut rng).unwrap();
            assert!(mask.crop(&VoxelBox::new(o, [16, 16, 16])).unwrap().foreground() > 0);
        }
    }

    #[test]
    fn small_scans_are_padded() {
        let img = Volume::filled(1, [8, 8, 8], [1.0; 3], 1.0).unwrap();
        let mask = BinaryMask::zeros([8, 8, 8], [1.0; 3]).unwrap();
        let (i, m) = augment(
            &img,
            &mask,
            &AugmentConfig::new([16, 8, 8]),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(i.extents(), [16, 8, 8]);
        assert_eq!(m.extents(), [16, 8, 8]);
    }
}
