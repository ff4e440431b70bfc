//! Acceptance run. Each check prints one PASS/FAIL line; the process exits
//! non-zero when any check fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use hierseg::commands::{cmd_crossval, cmd_eval, cmd_infer, cmd_phantom, cmd_train, POOLED_FILE};
use hierseg::config::{parse_override, RunConfig};
use hierseg_core::infer::{plan_windows, sliding_infer, softmax2};
use hierseg_core::loss::{hierarchical_loss, loss_gradient_check, soft_dice};
use hierseg_core::metrics::confusion_counts;
use hierseg_core::model::{HierNet, ModelConfig, SegmentationOutput, Variant};
use hierseg_core::nn::{dense_conv3d, inflate_2d_to_3d, separable_conv3d, Kernel2d, Kernel3d, Tensor};
use hierseg_core::phantom::make_phantom;
use hierseg_core::{BinaryMask, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

type Outcome = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cfg(overrides: &[String]) -> RunConfig {
    let o: Vec<_> = overrides.iter().map(|s| parse_override(s).unwrap()).collect();
    RunConfig::resolve(None, &o).unwrap()
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn random_logits(rng: &mut ChaCha8Rng, batch: usize, e: [usize; 3]) -> Tensor {
    let n = batch * 2 * e[0] * e[1] * e[2];
    Tensor::from_vec(
        [batch, 2, e[0], e[1], e[2]],
        (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )
    .unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, e: [usize; 3], p: f64) -> BinaryMask {
    BinaryMask::from_fn(e, [1.0; 3], |_| rng.gen_bool(p)).unwrap()
}

fn loss_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = [2, 2, 2];
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let out = SegmentationOutput {
            final_logits: random_logits(&mut rng, 1, e),
            intermediate_logits: (0..4).map(|_| random_logits(&mut rng, 1, e)).collect(),
        };
        let gt = [random_mask(&mut rng, e, 0.5)];
        worst = worst.max(loss_gradient_check(&out, &gt, EPS, 1e-3).map_err(|e| e.to_string())?);
    }
    ensure(
        worst < 1e-4,
        format!("25 cases, max relative error {worst:.2e} (limit 1e-4)"),
    )
}

/// Term by term: softmax foreground, soft Dice per map, five minus the sum.
fn oracle_loss(maps: &[Vec<[f64; 2]>], g: &[u8]) -> f64 {
    let mut total = 0.0;
    for m in maps {
        let (mut pg, mut pp, mut gg) = (0.0, 0.0, 0.0);
        for (l, &gi) in m.iter().zip(g) {
            let p = l[1].exp() / (l[0].exp() + l[1].exp());
            let gi = gi as f64;
            pg += p * gi;
            pp += p * p;
            gg += gi * gi;
        }
        total += (2.0 * pg + EPS) / (pp + gg + EPS);
    }
    maps.len() as f64 - total
}

fn loss_oracle() -> Outcome {
    let masks: [[u8; 8]; 4] = [
        [1, 0, 1, 0, 0, 1, 1, 0],
        [0, 0, 0, 0, 0, 0, 0, 0],
        [1, 1, 1, 1, 1, 1, 1, 1],
        [0, 0, 0, 1, 0, 0, 0, 0],
    ];
    let base: [f32; 5] = [-2.0, -0.5, 0.0, 0.75, 3.0];
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (mi, bits) in masks.iter().enumerate() {
        for scale in [0.0f32, 0.3, 1.0, 2.5] {
            let logits = |t: usize| -> Tensor {
                let data: Vec<f32> = (0..16)
                    .map(|j| {
                        let v = base[(j * 3 + t * 7 + mi) % 5];
                        if j < 8 {
                            -v * scale
                        } else {
                            v * scale * (1.0 + 0.1 * t as f32)
                        }
                    })
                    .collect();
                Tensor::from_vec([1, 2, 2, 2, 2], data).unwrap()
            };
            let out = SegmentationOutput {
                final_logits: logits(4),
                intermediate_logits: (0..4).map(logits).collect(),
            };
            let gt = BinaryMask::new([2, 2, 2], [1.0; 3], bits.to_vec()).unwrap();
            let maps: Vec<Vec<[f64; 2]>> = (0..5)
                .map(|t| {
                    let d = logits(t).data().to_vec();
                    (0..8).map(|j| [d[j] as f64, d[8 + j] as f64]).collect()
                })
                .collect();
            let expected = oracle_loss(&maps, bits);
            let got = hierarchical_loss(&out, &[gt], EPS).map_err(|e| e.to_string())?.loss;
            worst = worst.max((got - expected).abs());
            cases += 1;
        }
    }
    ensure(
        worst <= 1e-9,
        format!("{cases} cases, max |loss - oracle| {worst:.2e} (limit 1e-9)"),
    )
}

fn random_volume(rng: &mut ChaCha8Rng, c: usize, e: [usize; 3]) -> Volume {
    Volume::from_fn(c, e, [1.0; 3], |_, _| rng.gen_range(-1.0..1.0)).unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn separable_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cin, mid, cout, k) = (2, 3, 2, 3);
    let mut worst = 0.0f32;
    for _ in 0..5 {
        let x = random_volume(&mut rng, cin, [5, 5, 5]);
        let spatial = Kernel3d::new(mid, cin, [k, k, 1], random_weights(&mut rng, mid * cin * k * k)).unwrap();
        let axial = Kernel3d::new(cout, mid, [1, 1, k], random_weights(&mut rng, cout * mid * k)).unwrap();
        let mut w = Vec::with_capacity(cout * cin * k * k * k);
        for o in 0..cout {
            for i in 0..cin {
                for a in 0..k {
                    for b in 0..k {
                        for c in 0..k {
                            let s: f32 = (0..mid)
                                .map(|m| spatial.at(m, i, [a, b, 0]) * axial.at(o, m, [0, 0, c]))
                                .sum();
                            w.push(s);
                        }
                    }
                }
            }
        }
        let dense = Kernel3d::new(cout, cin, [k, k, k], w).unwrap();
        let a = separable_conv3d(&x, &spatial, &axial).map_err(|e| e.to_string())?;
        let b = dense_conv3d(&x, &dense, [k / 2; 3]).map_err(|e| e.to_string())?;
        for (p, q) in a.data().iter().zip(b.data()) {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(
        worst <= 1e-5,
        format!("5 random 5x5x5 cases, max difference {worst:.2e} (limit 1e-5)"),
    )
}

fn inflation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (cin, cout, k, reps) = (2, 3, 3, 3);
    let e = [7, 6, 9];
    let k2 = Kernel2d::new(cout, cin, [k, k], random_weights(&mut rng, cout * cin * k * k)).unwrap();
    let k3 = inflate_2d_to_3d(&k2, reps).map_err(|e| e.to_string())?;
    let plane: Vec<f32> = random_weights(&mut rng, cin * e[0] * e[1]);
    let x = Volume::from_fn(cin, e, [1.0; 3], |c, p| plane[(c * e[0] + p[0]) * e[1] + p[1]]).unwrap();
    let y = dense_conv3d(&x, &k3, [k / 2, k / 2, reps / 2]).map_err(|e| e.to_string())?;
    let h = (k / 2) as isize;
    let mut worst = 0.0f64;
    for o in 0..cout {
        for i in 0..e[0] {
            for j in 0..e[1] {
                let mut s = 0.0f64;
                for c in 0..cin {
                    for a in 0..k {
                        for b in 0..k {
                            let (u, v) = (i as isize + a as isize - h, j as isize + b as isize - h);
                            if u < 0 || v < 0 || u >= e[0] as isize || v >= e[1] as isize {
                                continue;
                            }
                            let w = k2.weights[((o * cin + c) * k + a) * k + b] as f64;
                            s += w * plane[(c * e[0] + u as usize) * e[1] + v as usize] as f64;
                        }
                    }
                }
                for z in reps / 2..e[2] - reps / 2 {
                    worst = worst.max((y.get(o, [i, j, z]) as f64 - s).abs());
                }
            }
        }
    }
    let mut sum_gap = 0.0f64;
    for o in 0..cout {
        for c in 0..cin {
            let s2: f64 = (0..k * k).map(|t| k2.weights[(o * cin + c) * k * k + t] as f64).sum();
            let s3: f64 = (0..k * k * reps)
                .map(|t| k3.weights[(o * cin + c) * k * k * reps + t] as f64)
                .sum();
            sum_gap = sum_gap.max((s2 - s3).abs());
        }
    }
    ensure(
        worst <= 1e-6 && sum_gap <= 1e-7,
        format!("response gap {worst:.2e} (limit 1e-6), weight-sum gap {sum_gap:.2e} (limit 1e-7)"),
    )
}

fn shape_contract() -> Outcome {
    let e = [64, 64, 48];
    let x = Tensor::stack(&[Volume::zeros(1, e, [1.0; 3]).unwrap()]).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for v in Variant::ALL {
        let net = HierNet::new(ModelConfig::desk(v), 0).map_err(|e| e.to_string())?;
        let out = net.forward(&x).map_err(|e| e.to_string())?;
        let want = [1, 2, e[0], e[1], e[2]];
        let heads = out.intermediate_logits.len();
        let expected_heads = if v.is_baseline() { 1 } else { 4 };
        ok &= out.final_logits.shape() == want
            && heads == expected_heads
            && out.intermediate_logits.iter().all(|t| t.shape() == want);
        notes.push(format!("{} {}+final", v.as_str(), heads));
    }
    ensure(ok, format!("64x64x48 in, 2x64x64x48 out: {}", notes.join(", ")))
}

fn sliding_window() -> Outcome {
    let scan = make_phantom(5, [32, 32, 32], 2).map_err(|e| e.to_string())?;
    let net = HierNet::new(ModelConfig::desk(Variant::Standard), 1).map_err(|e| e.to_string())?;
    let tiled = sliding_infer(&net, &scan.image, [32, 32, 32], 0.25).map_err(|e| e.to_string())?;
    let logits = net
        .forward(&Tensor::stack(std::slice::from_ref(&scan.image)).unwrap())
        .map_err(|e| e.to_string())?
        .final_logits
        .unstack(scan.image.spacing())
        .swap_remove(0);
    let direct = softmax2(&logits).map_err(|e| e.to_string())?;
    let gap = tiled
        .data()
        .iter()
        .zip(direct.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut uncovered = 0;
    for t in 0..50 {
        let extents = [rng.gen_range(1..40), rng.gen_range(1..40), rng.gen_range(1..24)];
        let window = [rng.gen_range(1..24), rng.gen_range(1..24), rng.gen_range(1..16)];
        let overlap = if t % 5 == 0 { 0.25 } else { rng.gen_range(0.0..0.9) };
        let plan = plan_windows(extents, window, overlap).map_err(|e| e.to_string())?;
        let pe = plan.padded_extents;
        let mut hit = vec![false; pe[0] * pe[1] * pe[2]];
        for b in plan.boxes() {
            for i in 0..window[0] {
                for j in 0..window[1] {
                    for k in 0..window[2] {
                        let p = [b.origin[0] + i, b.origin[1] + j, b.origin[2] + k];
                        if p[0] >= pe[0] || p[1] >= pe[1] || p[2] >= pe[2] {
                            uncovered += 1;
                            continue;
                        }
                        hit[(p[0] * pe[1] + p[1]) * pe[2] + p[2]] = true;
                    }
                }
            }
        }
        for i in 0..extents[0] {
            for j in 0..extents[1] {
                for k in 0..extents[2] {
                    if !hit[(i * pe[1] + j) * pe[2] + k] {
                        uncovered += 1;
                    }
                }
            }
        }
    }
    ensure(
        gap <= 1e-6 && uncovered == 0,
        format!(
            "single window vs direct {gap:.2e} (limit 1e-6); 50 plans, {uncovered} uncovered or out-of-range voxels"
        ),
    )
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let e = [6, 6, 6];
    let mut mismatches = 0;
    let mut soft_gap = 0.0f64;
    for t in 0..100 {
        let density = [0.0, 0.1, 0.3, 0.5, 0.9][t % 5];
        let pred = random_mask(&mut rng, e, density);
        let gt = random_mask(&mut rng, e, 0.3);
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => {}
            }
        }
        let frac = |n: u64, d: u64| if d == 0 { 1.0 } else { n as f64 / d as f64 };
        let c = confusion_counts(&pred, &gt).map_err(|e| e.to_string())?;
        let expected = (frac(2 * tp, 2 * tp + fp + fn_), frac(tp, tp + fp), frac(tp, tp + fn_));
        if (c.tp, c.fp, c.fn_) != (tp, fp, fn_) || (c.dsc(), c.ppv(), c.sensitivity()) != expected {
            mismatches += 1;
        }
        if gt.foreground() > 0 {
            let s = soft_dice(&pred.to_volume(), &gt, 1e-15).map_err(|e| e.to_string())?;
            soft_gap = soft_gap.max((s - expected.0).abs());
        }
    }
    ensure(
        mismatches == 0 && soft_gap <= 1e-9,
        format!("100 pairs, {mismatches} mismatches; soft Dice vs count DSC {soft_gap:.2e} (limit 1e-9)"),
    )
}

fn overfit(root: &Path) -> Outcome {
    let data = root.join("overfit-data");
    let shared = owned(&["phantom.n=1", "phantom.extents=[64, 64, 48]"]);
    let files = cmd_phantom(&cfg(&shared), &data).map_err(|e| e.to_string())?;
    let mut o = shared.clone();
    o.extend(owned(&[
        "model.variant=standard",
        "train.mode=all",
        "train.epochs=200",
        "train.crop=[64, 64, 48]",
        "train.flip=false",
        "train.rotate=false",
        "infer.window=[64, 64, 48]",
    ]));
    o.push(format!("data.dir={}", data.display()));
    let c = cfg(&o);
    let summary = cmd_train(&c, &root.join("overfit-train"), None).map_err(|e| e.to_string())?;
    let inferred = cmd_infer(
        &c,
        &summary.best_checkpoint,
        &files[0],
        &root.join("overfit-infer"),
        false,
    )
    .map_err(|e| e.to_string())?;
    let m = cmd_eval(&inferred.mask, &files[1], None).map_err(|e| e.to_string())?;
    ensure(
        m.dsc > 0.95,
        format!(
            "DSC {:.4} (needs > 0.95), best epoch {} of {}",
            m.dsc, summary.best_epoch, summary.epochs
        ),
    )
}

fn ablation_cfg(variant: &str, epochs: usize) -> RunConfig {
    cfg(&owned(&[
        &format!("model.variant={variant}"),
        "phantom.n=8",
        "phantom.extents=[32, 32, 32]",
        "train.crop=[32, 32, 32]",
        "infer.window=[32, 32, 32]",
        "crossval.k=4",
        &format!("train.epochs={epochs}"),
    ]))
}

fn ablation(root: &Path) -> Outcome {
    let std_run =
        cmd_crossval(&ablation_cfg("standard", 60), &root.join("ablation-standard")).map_err(|e| e.to_string())?;
    let base_run = cmd_crossval(&ablation_cfg("baseline-standard", 60), &root.join("ablation-baseline"))
        .map_err(|e| e.to_string())?;
    let (h, b) = (std_run.pooled.dsc.mean, base_run.pooled.dsc.mean);
    ensure(
        h >= b,
        format!("pooled mean DSC: hierarchical {h:.4}, single-decoder {b:.4}"),
    )
}

fn determinism(root: &Path) -> Outcome {
    let c = ablation_cfg("standard", 2);
    let (a, b) = (root.join("det-a"), root.join("det-b"));
    cmd_crossval(&c, &a).map_err(|e| e.to_string())?;
    cmd_crossval(&c, &b).map_err(|e| e.to_string())?;
    let same = |f: &str| {
        fs::read(a.join(f))
            .ok()
            .is_some_and(|x| Some(x) == fs::read(b.join(f)).ok())
    };
    ensure(
        same(POOLED_FILE) && same("scans.csv"),
        format!(
            "two seeded runs, {POOLED_FILE} and scans.csv byte-identical: {}",
            same(POOLED_FILE) && same("scans.csv")
        ),
    )
}

fn param_ratio() -> Outcome {
    let count = |c: ModelConfig| HierNet::new(c, 0).map(|n| n.param_count()).map_err(|e| e.to_string());
    let (s, l) = (count(ModelConfig::standard())?, count(ModelConfig::light())?);
    let r = s as f64 / l as f64;
    ensure(
        (8.0..=13.0).contains(&r),
        format!("standard {s}, light {l}, ratio {r:.2} (range 8 to 13)"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = tmp.path();
    let checks: Vec<Check> = vec![
        ("loss gradient fidelity", Box::new(loss_gradient)),
        ("loss matches term-by-term oracle", Box::new(loss_oracle)),
        (
            "separable conv equals composed dense conv",
            Box::new(separable_equivalence),
        ),
        ("2D-to-3D inflation", Box::new(inflation)),
        ("output shape contract", Box::new(shape_contract)),
        ("sliding-window equivalence and coverage", Box::new(sliding_window)),
        ("metric correctness", Box::new(metrics)),
        ("single-phantom overfit", Box::new(|| overfit(root))),
        ("hierarchical vs single-decoder ablation", Box::new(|| ablation(root))),
        ("seeded determinism", Box::new(|| determinism(root))),
        ("light vs standard parameter ratio", Box::new(param_ratio)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
