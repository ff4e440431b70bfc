use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    /// Separable-3D-convolution stage stack with max-pool downsampling.
    Separable,
    /// Inverted-residual (linear bottleneck) blocks with strided depthwise
    /// convolutions.
    InvertedResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    Light,
    /// Standard encoder decoded only at the bottleneck.
    BaselineStandard,
    /// Light encoder decoded only at the bottleneck.
    BaselineLight,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Standard,
        Variant::Light,
        Variant::BaselineStandard,
        Variant::BaselineLight,
    ];

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::BaselineStandard | Variant::BaselineLight)
    }

    pub fn backbone(self) -> Backbone {
        match self {
            Variant::Standard | Variant::BaselineStandard => Backbone::Separable,
            Variant::Light | Variant::BaselineLight => Backbone::InvertedResidual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Light => "light",
            Variant::BaselineStandard => "baseline-standard",
            Variant::BaselineLight => "baseline-light",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant {s:?}")))
    }
}

/// Named presets: full-scale networks and a desk-scale shrink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    /// Channel widths scaled by 1/16 and an axial schedule whose cumulative
    /// divisor is 16, so 48-slice crops are valid.
    Desk,
}

/// Declarative description of the network.
///
/// Stage `i` downsamples by `stride_schedule[i]` (per axis `x, y, z`) and
/// contains `stage_depths[i]` blocks producing `stage_channels[i]` channels
/// (full-width counts, scaled by `width_multiplier`). Decoders are attached to
/// the outputs of `tap_stages`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_channels: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub stride_schedule: Vec<[usize; 3]>,
    pub tap_stages: Vec<usize>,
    pub width_multiplier: f64,
    /// Expansion factor of inverted-residual blocks (the first group uses 1).
    pub expansion: usize,
    /// First decoder block width is `tap channels / decoder_reduction`.
    pub decoder_reduction: usize,
    pub decoder_min_channels: usize,
    /// Separable conv blocks inside every decoder upsampling block (1 or 2).
    pub sep_blocks_per_up: usize,
}

impl ModelConfig {
    pub fn preset(variant: Variant, scale: Scale) -> Self {
        let desk = scale == Scale::Desk;
        // Desk presets stop the axial downsampling one step earlier.
        let last_z = if desk { 1 } else { 2 };
        let mut cfg = match variant.backbone() {
            Backbone::Separable => ModelConfig {
                variant,
                in_channels: 1,
                num_classes: 2,
                stage_channels: vec![64, 192, 480, 832, 1024],
                stage_depths: vec![1, 2, 2, 5, 2],
                stride_schedule: vec![[2, 2, 2], [2, 2, 2], [1, 2, 2], [2, 2, 2], [1, 2, last_z]],
                tap_stages: vec![1, 2, 3, 4],
                width_multiplier: 1.0,
                expansion: 6,
                decoder_reduction: 4,
                decoder_min_channels: 16,
                sep_blocks_per_up: 1,
            },
            Backbone::InvertedResidual => ModelConfig {
                variant,
                in_channels: 1,
                num_classes: 2,
                stage_channels: vec![32, 16, 24, 32, 64, 96, 160],
                stage_depths: vec![1, 1, 2, 3, 4, 3, 3],
                stride_schedule: vec![
                    [2, 2, 2],
                    [1, 1, 1],
                    [2, 2, 2],
                    [2, 2, 2],
                    [2, 2, 2],
                    [1, 1, 1],
                    [1, 2, last_z],
                ],
                tap_stages: vec![2, 3, 4, 6],
                width_multiplier: 1.0,
                expansion: 6,
                decoder_reduction: 2,
                decoder_min_channels: 32,
                sep_blocks_per_up: 1,
            },
        };
        if variant.is_baseline() {
            cfg.tap_stages = vec![*cfg.tap_stages.last().expect("presets have taps")];
        }
        if desk {
            cfg.width_multiplier = 1.0 / 16.0;
            cfg.decoder_min_channels = 4;
        }
        cfg
    }

    pub fn standard() -> Self {
        Self::preset(Variant::Standard, Scale::Full)
    }

    pub fn light() -> Self {
        Self::preset(Variant::Light, Scale::Full)
    }

    pub fn desk(variant: Variant) -> Self {
        Self::preset(variant, Scale::Desk)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if n == 0 || self.stage_depths.len() != n || self.stride_schedule.len() != n {
            return bad(format!(
                "stage_channels ({}), stage_depths ({}) and stride_schedule ({}) must have the same non-zero length",
                n,
                self.stage_depths.len(),
                self.stride_schedule.len()
            ));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return bad("in_channels and num_classes must be positive".into());
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return bad(format!(
                "width_multiplier must be in (0, 1], got {}",
                self.width_multiplier
            ));
        }
        if self.stage_depths.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if !(1..=2).contains(&self.sep_blocks_per_up) {
            return bad(format!(
                "sep_blocks_per_up must be 1 or 2, got {}",
                self.sep_blocks_per_up
            ));
        }
        if self.decoder_reduction == 0 || self.decoder_min_channels == 0 || self.expansion == 0 {
            return bad("decoder_reduction, decoder_min_channels and expansion must be positive".into());
        }
        for (i, s) in self.stride_schedule.iter().enumerate() {
            if s.iter().any(|&v| v == 0 || !v.is_power_of_two()) {
                return bad(format!(
                    "stage {i} stride {s:?} must be a power of two on every axis so decoders can double back"
                ));
            }
        }
        let expected = if self.variant.is_baseline() { 1 } else { 4 };
        if self.tap_stages.len() != expected {
            return bad(format!(
                "variant {} needs exactly {expected} tap stage(s), got {}",
                self.variant,
                self.tap_stages.len()
            ));
        }
        if self.tap_stages.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("tap stages {:?} must be strictly increasing", self.tap_stages));
        }
        if let Some(&t) = self.tap_stages.iter().find(|&&t| t >= n) {
            return bad(format!("tap stage {t} does not exist ({n} stages)"));
        }
        if self.variant.is_baseline() && self.tap_stages[0] != n - 1 {
            return bad(format!(
                "baseline variants decode only the deepest stage ({}), got {}",
                n - 1,
                self.tap_stages[0]
            ));
        }
        for (i, &t) in self.tap_stages.iter().enumerate() {
            if self.cumulative_stride(t).iter().all(|&s| s == 1) {
                return bad(format!(
                    "tap {i} (stage {t}) is not downsampled; the stride schedule gives it nothing to decode"
                ));
            }
        }
        Ok(())
    }

    /// Channel count of stage `i` after width scaling.
    pub fn channels(&self, stage: usize) -> usize {
        let c = self.stage_channels[stage] as f64 * self.width_multiplier;
        (libm::round(c) as usize).max(2)
    }

    pub fn cumulative_stride(&self, stage: usize) -> [usize; 3] {
        let mut acc = [1; 3];
        for s in &self.stride_schedule[..=stage] {
            for a in 0..3 {
                acc[a] *= s[a];
            }
        }
        acc
    }

    /// Input extents must be divisible by this on every axis.
    pub fn required_divisor(&self) -> [usize; 3] {
        self.cumulative_stride(*self.tap_stages.last().expect("validated config has taps"))
    }

    /// Number of ×2 upsampling blocks a decoder on `tap` needs.
    pub fn upsampling_blocks(&self, tap: usize) -> usize {
        let s = self.cumulative_stride(self.tap_stages[tap]);
        s.iter().map(|v| v.trailing_zeros() as usize).max().unwrap_or(0)
    }

    /// Per-block upsampling factors of the decoder on `tap`.
    pub fn upsampling_factors(&self, tap: usize) -> Vec<[usize; 3]> {
        let mut remaining = self.cumulative_stride(self.tap_stages[tap]);
        (0..self.upsampling_blocks(tap))
            .map(|_| {
                let mut f = [1; 3];
                for a in 0..3 {
                    if remaining[a] > 1 {
                        f[a] = 2;
                        remaining[a] /= 2;
                    }
                }
                f
            })
            .collect()
    }

    /// Widths of the decoder blocks on `tap`.
    pub fn decoder_widths(&self, tap: usize) -> Vec<usize> {
        let c_in = self.channels(self.tap_stages[tap]);
        let mut w = (c_in / self.decoder_reduction).max(self.decoder_min_channels);
        (0..self.upsampling_blocks(tap))
            .map(|_| {
                let cur = w;
                w = (w / 2).max(self.decoder_min_channels);
                cur
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for v in Variant::ALL {
            for s in [Scale::Full, Scale::Desk] {
                ModelConfig::preset(v, s).validate().unwrap();
            }
        }
    }

    #[test]
    fn full_bottleneck_divisors() {
        assert_eq!(ModelConfig::standard().required_divisor(), [8, 32, 32]);
        assert_eq!(ModelConfig::light().required_divisor(), [16, 32, 32]);
        assert_eq!(ModelConfig::desk(Variant::Standard).required_divisor(), [8, 32, 16]);
        assert_eq!(ModelConfig::desk(Variant::Light).required_divisor(), [16, 32, 16]);
    }

    #[test]
    fn three_taps_on_hierarchical_variant_is_rejected() {
        let mut cfg = ModelConfig::standard();
        cfg.tap_stages = vec![2, 3, 4];
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn non_power_of_two_stride_is_rejected() {
        let mut cfg = ModelConfig::desk(Variant::Standard);
        cfg.stride_schedule[2] = [1, 3, 2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn baseline_must_tap_the_deepest_stage() {
        let mut cfg = ModelConfig::desk(Variant::BaselineLight);
        cfg.tap_stages = vec![4];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn upsampling_blocks_follow_stride_arithmetic() {
        let cfg = ModelConfig::standard();
        // taps at (4,4,4), (4,8,8), (8,16,16), (8,32,32)
        let blocks: Vec<usize> = (0..4).map(|t| cfg.upsampling_blocks(t)).collect();
        assert_eq!(blocks, [2, 3, 4, 5]);
        let f = cfg.upsampling_factors(3);
        let total = f
            .iter()
            .fold([1; 3], |acc, f| [acc[0] * f[0], acc[1] * f[1], acc[2] * f[2]]);
        assert_eq!(total, [8, 32, 32]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("huge".parse::<Variant>().is_err());
    }
}
