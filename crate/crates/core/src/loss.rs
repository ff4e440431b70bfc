//! Multi-part soft Dice objective.
//!
//! Every logit volume (two channels, background and foreground) is turned
//! into a foreground probability with a two-way softmax and scored with the
//! squared-denominator soft Dice
//!
//! ```text
//! D(p, g) = (2 Σ p g + eps) / (Σ p² + Σ g² + eps)
//! ```
//!
//! Hierarchical outputs (four intermediates plus the fused map) give a gain
//! `Σ D_i + D_final` in `[0, 5]` and the minimized loss is `5 − gain`.
//! Single-decoder outputs give `loss = 1 − D_final`. Batches average the
//! per-sample losses. All reductions run in `f64`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::SegmentationOutput;
use crate::nn::Tensor;
use crate::volume::{BinaryMask, Volume};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-sample decomposition of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// One Dice per intermediate decoder; empty for single-decoder outputs.
    pub per_decoder_dice: Vec<f64>,
    pub final_dice: f64,
    pub total_gain: f64,
    pub loss: f64,
}

/// Objective over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub samples: Vec<LossBreakdown>,
    /// Mean of the per-sample losses.
    pub loss: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Soft Dice on raw slices. `gt` entries are 0 or 1.
fn dice(p: &[f64], gt: &[u8], eps: f64) -> f64 {
    let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
    for (&p, &g) in p.iter().zip(gt) {
        let g = g as f64;
        pg += p * g;
        pp += p * p;
        gg += g;
    }
    (2.0 * pg + eps) / (pp + gg + eps)
}

/// Dice and its gradient with respect to each probability.
pub fn soft_dice_grad(p: &[f64], gt: &[u8], eps: f64) -> (f64, Vec<f64>) {
    let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
    for (&p, &g) in p.iter().zip(gt) {
        let g = g as f64;
        pg += p * g;
        pp += p * p;
        gg += g;
    }
    let num = 2.0 * pg + eps;
    let den = pp + gg + eps;
    let grad = p
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (2.0 * g as f64 * den - 2.0 * p * num) / (den * den))
        .collect();
    (num / den, grad)
}

/// Foreground probabilities of a two-channel logit sample.
fn fg_prob(logits: &[f32], plane: usize) -> Vec<f64> {
    let (bg, fg) = logits.split_at(plane);
    bg.iter().zip(fg).map(|(&b, &f)| sigmoid(f as f64 - b as f64)).collect()
}

/// Softmax foreground channel of a two-channel logit volume.
pub fn foreground_probability(logits: &Volume) -> Result<Volume> {
    if logits.channels() != 2 {
        return Err(Error::shape("logit channels", &[2], &[logits.channels()]));
    }
    let p = fg_prob(logits.data(), logits.voxels());
    Volume::new(
        1,
        logits.extents(),
        logits.spacing(),
        p.into_iter().map(|v| v as f32).collect(),
    )
}

/// Soft Dice between a foreground-probability volume and a mask.
pub fn soft_dice(pred: &Volume, gt: &BinaryMask, eps: f64) -> Result<f64> {
    if pred.channels() != 1 || pred.extents() != gt.extents() {
        let e = gt.extents();
        let p = pred.extents();
        return Err(Error::shape(
            "soft dice",
            &[1, e[0], e[1], e[2]],
            &[pred.channels(), p[0], p[1], p[2]],
        ));
    }
    if let Some(v) = pred.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(alloc::format!(
            "probabilities must lie in [0, 1], found {v}"
        )));
    }
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    Ok(dice(&p, gt.data(), eps))
}

fn check_output(out: &SegmentationOutput, gt: &[BinaryMask]) -> Result<()> {
    let shape = out.final_logits.shape();
    if gt.len() != shape[0] {
        return Err(Error::shape("masks per batch", &[shape[0]], &[gt.len()]));
    }
    if out.intermediate_logits.is_empty() {
        return Err(Error::invalid("segmentation output has no intermediate logits"));
    }
    for t in core::iter::once(&out.final_logits).chain(&out.intermediate_logits) {
        if t.shape() != shape || t.channels() != 2 {
            return Err(Error::shape("logit tensors", &shape, &t.shape()));
        }
    }
    for m in gt {
        if m.extents() != out.final_logits.spatial() {
            return Err(Error::shape("mask extents", &out.final_logits.spatial(), &m.extents()));
        }
    }
    Ok(())
}

/// The logit tensors that enter the objective: the intermediates (when
/// there is more than one) followed by the final map.
fn scored(out: &SegmentationOutput) -> (Vec<&Tensor>, bool) {
    let hierarchical = out.intermediate_logits.len() > 1;
    let mut v: Vec<&Tensor> = Vec::new();
    if hierarchical {
        v.extend(out.intermediate_logits.iter());
    }
    v.push(&out.final_logits);
    (v, hierarchical)
}

fn breakdown(mut terms: Vec<f64>, hierarchical: bool) -> LossBreakdown {
    let final_dice = terms.pop().expect("at least one term");
    let total_gain = terms.iter().sum::<f64>() + final_dice;
    let count = terms.len() + 1;
    LossBreakdown {
        per_decoder_dice: if hierarchical { terms } else { Vec::new() },
        final_dice,
        total_gain,
        loss: count as f64 - total_gain,
    }
}

/// Evaluates the objective for every sample of the batch.
pub fn hierarchical_loss(out: &SegmentationOutput, gt: &[BinaryMask], eps: f64) -> Result<BatchLoss> {
    check_output(out, gt)?;
    let (tensors, hierarchical) = scored(out);
    let plane = out.final_logits.plane_len();
    let per = 2 * plane;
    let samples: Vec<LossBreakdown> = gt
        .iter()
        .enumerate()
        .map(|(n, m)| {
            let terms = tensors
                .iter()
                .map(|t| dice(&fg_prob(&t.data()[n * per..(n + 1) * per], plane), m.data(), eps))
                .collect();
            breakdown(terms, hierarchical)
        })
        .collect();
    let loss = samples.iter().map(|s| s.loss).sum::<f64>() / samples.len() as f64;
    Ok(BatchLoss { samples, loss })
}

/// Objective plus its gradient with respect to every logit tensor, shaped
/// like `out`. Single-decoder outputs get a zero intermediate gradient.
pub fn loss_and_grad(out: &SegmentationOutput, gt: &[BinaryMask], eps: f64) -> Result<(BatchLoss, SegmentationOutput)> {
    let (loss, grad) = loss_and_grad_f64(out, gt, eps)?;
    let to_tensor = |t: &Tensor, g: Vec<f64>| {
        Tensor::from_vec(t.shape(), g.into_iter().map(|v| v as f32).collect()).expect("shape preserved")
    };
    let mut grads = grad.into_iter();
    let final_logits = to_tensor(&out.final_logits, grads.next().expect("final grad"));
    let intermediate_logits = out
        .intermediate_logits
        .iter()
        .zip(grads)
        .map(|(t, g)| to_tensor(t, g))
        .collect();
    Ok((
        loss,
        SegmentationOutput {
            final_logits,
            intermediate_logits,
        },
    ))
}

/// Gradients in `f64`, final first then intermediates in order.
fn loss_and_grad_f64(out: &SegmentationOutput, gt: &[BinaryMask], eps: f64) -> Result<(BatchLoss, Vec<Vec<f64>>)> {
    check_output(out, gt)?;
    let hierarchical = out.intermediate_logits.len() > 1;
    let batch = gt.len();
    let plane = out.final_logits.plane_len();
    let per = 2 * plane;
    let inv_batch = 1.0 / batch as f64;
    let mut all: Vec<&Tensor> = vec![&out.final_logits];
    all.extend(out.intermediate_logits.iter());
    let mut grads: Vec<Vec<f64>> = all.iter().map(|t| vec![0.0; t.data().len()]).collect();
    let mut samples = Vec::with_capacity(batch);
    for (n, m) in gt.iter().enumerate() {
        let mut terms = Vec::new();
        // Scored order is intermediates then final; `all` stores final first.
        let order: Vec<usize> = if hierarchical {
            (1..all.len()).chain(core::iter::once(0)).collect()
        } else {
            vec![0]
        };
        for &ti in &order {
            let sample = &all[ti].data()[n * per..(n + 1) * per];
            let p = fg_prob(sample, plane);
            let (d, dd_dp) = soft_dice_grad(&p, m.data(), eps);
            terms.push(d);
            let g = &mut grads[ti][n * per..(n + 1) * per];
            let (g_bg, g_fg) = g.split_at_mut(plane);
            for j in 0..plane {
                // d(loss)/d(l_fg) = -dD/dp · p(1 - p); the background logit
                // gets the opposite sign.
                let v = -dd_dp[j] * p[j] * (1.0 - p[j]) * inv_batch;
                g_fg[j] = v;
                g_bg[j] = -v;
            }
        }
        samples.push(breakdown(terms, hierarchical));
    }
    let loss = samples.iter().map(|s| s.loss).sum::<f64>() * inv_batch;
    Ok((BatchLoss { samples, loss }, grads))
}

fn loss_of(tensors: &[Vec<f64>], shape: [usize; 5], gt: &[BinaryMask], eps: f64) -> f64 {
    let hierarchical = tensors.len() > 2;
    let plane = shape[2] * shape[3] * shape[4];
    let per = 2 * plane;
    let mut total = 0.0;
    for (n, m) in gt.iter().enumerate() {
        let order: Vec<usize> = if hierarchical {
            (1..tensors.len()).chain(core::iter::once(0)).collect()
        } else {
            vec![0]
        };
        let terms: Vec<f64> = order
            .iter()
            .map(|&ti| {
                let s = &tensors[ti][n * per..(n + 1) * per];
                let p: Vec<f64> = (0..plane).map(|j| sigmoid(s[plane + j] - s[j])).collect();
                dice(&p, m.data(), eps)
            })
            .collect();
        total += terms.len() as f64 - terms.iter().sum::<f64>();
    }
    total / gt.len() as f64
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences of step `h`, over every logit entry. The relative error of a
/// pair is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn loss_gradient_check(out: &SegmentationOutput, gt: &[BinaryMask], eps: f64, h: f64) -> Result<f64> {
    let (_, analytic) = loss_and_grad_f64(out, gt, eps)?;
    let shape = out.final_logits.shape();
    let mut tensors: Vec<Vec<f64>> = core::iter::once(&out.final_logits)
        .chain(&out.intermediate_logits)
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let mut worst = 0.0f64;
    for ti in 0..tensors.len() {
        for j in 0..tensors[ti].len() {
            let orig = tensors[ti][j];
            tensors[ti][j] = orig + h;
            let up = loss_of(&tensors, shape, gt, eps);
            tensors[ti][j] = orig - h;
            let down = loss_of(&tensors, shape, gt, eps);
            tensors[ti][j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = libm::fabs(a - numeric) / libm::fabs(a).max(libm::fabs(numeric)).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(extents: [usize; 3], bits: &[u8]) -> BinaryMask {
        BinaryMask::new(extents, [1.0; 3], bits.to_vec()).unwrap()
    }

    fn logits(rng: &mut ChaCha8Rng, batch: usize, e: [usize; 3]) -> Tensor {
        let n = batch * 2 * e[0] * e[1] * e[2];
        Tensor::from_vec(
            [batch, 2, e[0], e[1], e[2]],
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    fn random_output(rng: &mut ChaCha8Rng, batch: usize, e: [usize; 3], decoders: usize) -> SegmentationOutput {
        SegmentationOutput {
            final_logits: logits(rng, batch, e),
            intermediate_logits: (0..decoders).map(|_| logits(rng, batch, e)).collect(),
        }
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = mask([2, 2, 2], &[1, 0, 1, 0, 0, 0, 1, 1]);
        let p = gt.to_volume();
        assert!((soft_dice(&p, &gt, DEFAULT_EPS).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_prediction_scores_near_zero() {
        let gt = mask([2, 2, 2], &[1, 1, 1, 0, 0, 0, 0, 0]);
        let p = Volume::zeros(1, [2, 2, 2], [1.0; 3]).unwrap();
        let d = soft_dice(&p, &gt, DEFAULT_EPS).unwrap();
        assert!((d - DEFAULT_EPS / (3.0 + DEFAULT_EPS)).abs() < 1e-12);
    }

    #[test]
    fn uniform_half_probability() {
        let gt = mask([2, 2, 2], &[1, 1, 1, 1, 0, 0, 0, 0]);
        let p = Volume::filled(1, [2, 2, 2], [1.0; 3], 0.5).unwrap();
        let d = soft_dice(&p, &gt, DEFAULT_EPS).unwrap();
        let oracle = (4.0 + DEFAULT_EPS) / (2.0 + 4.0 + DEFAULT_EPS);
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 2.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_out_of_range_and_mismatch() {
        let gt = mask([2, 2, 2], &[0; 8]);
        assert!(soft_dice(&Volume::filled(1, [2, 2, 2], [1.0; 3], 1.5).unwrap(), &gt, DEFAULT_EPS).is_err());
        assert!(soft_dice(&Volume::zeros(1, [2, 2, 1], [1.0; 3]).unwrap(), &gt, DEFAULT_EPS).is_err());
    }

    #[test]
    fn gain_decomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = random_output(&mut rng, 2, [2, 2, 2], 4);
        let gt = [mask([2, 2, 2], &[1, 0, 0, 1, 0, 1, 0, 0]), mask([2, 2, 2], &[0; 8])];
        let l = hierarchical_loss(&out, &gt, DEFAULT_EPS).unwrap();
        for s in &l.samples {
            assert_eq!(s.per_decoder_dice.len(), 4);
            let sum: f64 = s.per_decoder_dice.iter().sum::<f64>() + s.final_dice;
            assert!((s.total_gain - sum).abs() < 1e-12);
            assert!((s.loss - (5.0 - s.total_gain)).abs() < 1e-12);
            assert!((0.0..=5.0).contains(&s.loss));
        }
        assert!((l.loss - (l.samples[0].loss + l.samples[1].loss) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_decoder_uses_one_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = logits(&mut rng, 1, [2, 2, 2]);
        let out = SegmentationOutput {
            final_logits: f.clone(),
            intermediate_logits: vec![f],
        };
        let gt = [mask([2, 2, 2], &[1, 1, 0, 0, 0, 0, 0, 0])];
        let l = hierarchical_loss(&out, &gt, DEFAULT_EPS).unwrap();
        let s = &l.samples[0];
        assert!(s.per_decoder_dice.is_empty());
        assert!((s.loss - (1.0 - s.final_dice)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_extents_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = random_output(&mut rng, 1, [4, 4, 2], 4);
        assert!(hierarchical_loss(&out, &[BinaryMask::zeros([4, 4, 4], [1.0; 3]).unwrap()], DEFAULT_EPS).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for decoders in [4, 1] {
            let out = random_output(&mut rng, 2, [2, 2, 2], decoders);
            let gt: Vec<BinaryMask> = (0..2)
                .map(|_| mask([2, 2, 2], &(0..8).map(|_| rng.gen_range(0..2u8)).collect::<Vec<_>>()))
                .collect();
            let err = loss_gradient_check(&out, &gt, DEFAULT_EPS, 1e-3).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn probability_gradient_vanishes_at_optimum() {
        let g = [1u8, 0, 1, 1, 0, 0, 0, 1];
        let p: Vec<f64> = g.iter().map(|&v| v as f64).collect();
        let (d, grad) = soft_dice_grad(&p, &g, DEFAULT_EPS);
        assert!((d - 1.0).abs() < 1e-12);
        assert!(grad.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }
}
