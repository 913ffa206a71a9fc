//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use spmix::bound::{AbsLoss, BoundInstance, DiscreteDist, Predictor, Sample};
use spmix::consistency::{
    ema_update, grad, joint_loss, PseudoLabelMode, SynthTask, ToyModel, TrainerConfig, FEATURES,
};
use spmix::experiment::{compare_with_baseline, count_sweep, format_table, proportion_sweep};
use spmix::metrics::{aupr, ece, fpr_at_95_tpr, miou, confusion, nll, roc_auc, ScoredSamples};
use spmix::mixer::{mix_images, mix_mask_for, mix_probmaps, make_mix};
use spmix::superpixel::{
    boundary_recall, compute_superpixels, label_boundary, regular_grid_markers, watershed,
};
use spmix::{Algorithm, ImageBuffer, LabelMap, MixConfig, MixMask, ProbMap, Rng};

// Pinned thresholds.
const WATERSHED_IMAGES: usize = 50;
const WATERSHED_SIDE: usize = 64;
const WATERSHED_COUNTS: [usize; 3] = [4, 16, 50];
const WATERSHED_TIME_LIMIT: Duration = Duration::from_secs(5);

const RECALL_IMAGES: usize = 20;
const RECALL_SIDE: usize = 64;
const RECALL_SUPERPIXELS: [usize; 2] = [50, 200];
const RECALL_TOLERANCE_PX: usize = 1;
const RECALL_MIN: f64 = 0.95;

const MIX_CASES: usize = 100;

const METRIC_INSTANCES: usize = 100;
const RANKING_TOL: f64 = 1e-12;
const OTHER_METRIC_TOL: f64 = 1e-9;

const GRAD_CONFIGS: usize = 20;
const GRAD_EPS: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;

const EMA_ALPHA: f64 = 0.99;
const EMA_HORIZONS: [i32; 3] = [1, 10, 100];
const EMA_TRIALS: usize = 200;

const BOUND_INSTANCES: usize = 100;
const BOUND_MAX_SUPPORT: usize = 20;
const BOUND_DIM: usize = 3;
const BOUND_ORACLE_TOL: f64 = 1e-9;
const BOUND_TIME_LIMIT: Duration = Duration::from_secs(10);

const ROBUST_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ROBUST_LR: f64 = 0.5;
const ROBUST_TIME_LIMIT: Duration = Duration::from_secs(300);

const ABLATION_STEPS: usize = 40;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

fn watershed_partition() -> Outcome {
    let mut rng = Rng::seed(11);
    let mut elapsed = Duration::ZERO;
    let mut runs = 0;
    for i in 0..WATERSHED_IMAGES {
        // every other image is quantised to 6 levels so that ties dominate
        let levels = (i % 2 == 0).then_some(6);
        let g = random_gradient(&mut rng, WATERSHED_SIDE, WATERSHED_SIDE, levels);
        for n in WATERSHED_COUNTS {
            let markers = regular_grid_markers(WATERSHED_SIDE, WATERSHED_SIDE, n).map_err(|e| e.to_string())?;
            let t = Instant::now();
            let sp = watershed(&g, &markers).map_err(|e| e.to_string())?;
            elapsed += t.elapsed();
            runs += 1;
            let actual = markers.actual_n();
            if sp.n() != actual {
                return Err(format!("image {i} n={n}: {} regions, grid has {actual}", sp.n()));
            }
            if !is_connected_partition(sp.ids(), WATERSHED_SIDE, WATERSHED_SIDE, actual) {
                return Err(format!("image {i} n={n}: not a 4-connected partition"));
            }
            let want = flood_oracle(g.data(), WATERSHED_SIDE, WATERSHED_SIDE, &markers.positions);
            if sp.ids() != want.as_slice() {
                let diff = want.iter().zip(sp.ids()).filter(|(a, b)| a != b).count();
                return Err(format!("image {i} n={n}: {diff} pixels differ from the flood oracle"));
            }
        }
    }
    check(
        elapsed < WATERSHED_TIME_LIMIT,
        format!("{runs} runs match the oracle, watershed time {:.3}s", elapsed.as_secs_f64()),
        format!("too slow: {:.3}s", elapsed.as_secs_f64()),
    )
}

// Flat-coloured triangles and quadrilaterals over a flat background.
fn flat_polygons(rng: &mut Rng, side: usize) -> (ImageBuffer<u8>, Vec<u16>) {
    let palette: [[u8; 3]; 8] = [
        [20, 20, 20],
        [230, 230, 230],
        [200, 40, 40],
        [40, 180, 60],
        [40, 60, 200],
        [220, 200, 40],
        [160, 50, 170],
        [40, 190, 190],
    ];
    let bg = rng.below(0, palette.len());
    let mut colour = vec![bg; side * side];
    let shapes = rng.inclusive(2, 5);
    let s = side as f64;
    for _ in 0..shapes {
        let mut c = rng.below(0, palette.len());
        while c == bg {
            c = rng.below(0, palette.len());
        }
        let corners = rng.inclusive(3, 4);
        let (cr, cc) = (rng.range_f64(0.2 * s, 0.8 * s), rng.range_f64(0.2 * s, 0.8 * s));
        let radius = rng.range_f64(0.12 * s, 0.35 * s);
        let start = rng.range_f64(0.0, std::f64::consts::TAU);
        let verts: Vec<(f64, f64)> = (0..corners)
            .map(|k| {
                let a = start + k as f64 * std::f64::consts::TAU / corners as f64;
                (cr + radius * a.sin(), cc + radius * a.cos())
            })
            .collect();
        for r in 0..side {
            for col in 0..side {
                let (y, x) = (r as f64 + 0.5, col as f64 + 0.5);
                let side_of = |k: usize| {
                    let (a, b) = (verts[k], verts[(k + 1) % corners]);
                    (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1)
                };
                let inside = (0..corners).all(|k| side_of(k) <= 0.0) || (0..corners).all(|k| side_of(k) >= 0.0);
                if inside {
                    colour[r * side + col] = c;
                }
            }
        }
    }
    let img = ImageBuffer::from_fn(side, side, 3, |r, c, ch| palette[colour[r * side + c]][ch]).unwrap();
    // true edges are where the colour changes
    (img, colour.iter().map(|&c| c as u16).collect())
}

fn boundary_recall_criterion() -> Outcome {
    let mut summary = vec![];
    for n in RECALL_SUPERPIXELS {
        let mut rng = Rng::seed(21);
        let mut worst = f64::INFINITY;
        let mut mean = 0.0;
        let mut grid_mean = 0.0;
        for _ in 0..RECALL_IMAGES {
            let (img, colours) = flat_polygons(&mut rng, RECALL_SIDE);
            let edges = label_boundary(&colours, RECALL_SIDE, RECALL_SIDE);
            if !edges.contains(&true) {
                return Err("generated image has no edges".into());
            }
            let sp = compute_superpixels(&img, Algorithm::Watershed, n).map_err(|e| e.to_string())?;
            let r = boundary_recall(&edges, &sp, RECALL_TOLERANCE_PX);
            worst = worst.min(r);
            mean += r / RECALL_IMAGES as f64;
            // same markers on a flat gradient: a plain tiling, for reference
            let flat = ImageBuffer::filled(RECALL_SIDE, RECALL_SIDE, 1, 0.0f32).unwrap();
            let markers = regular_grid_markers(RECALL_SIDE, RECALL_SIDE, n).unwrap();
            let grid = watershed(&flat, &markers).unwrap();
            grid_mean += boundary_recall(&edges, &grid, RECALL_TOLERANCE_PX) / RECALL_IMAGES as f64;
        }
        let line = format!("n={n} min {worst:.4} mean {mean:.4} (plain tiling mean {grid_mean:.4})");
        if worst < RECALL_MIN {
            return Err(line);
        }
        summary.push(line);
    }
    Ok(summary.join("; "))
}

fn mixing_identities() -> Outcome {
    let mut rng = Rng::seed(31);
    for case in 0..MIX_CASES {
        let (h, w) = (rng.inclusive(4, 40), rng.inclusive(4, 40));
        let x1 = random_rgb(&mut rng, h, w);
        let x2 = random_rgb(&mut rng, h, w);
        let cfg = MixConfig {
            n_superpixels: rng.inclusive(2, (h * w).min(300)),
            proportion: rng.range_f64(0.05, 0.95),
            algo: if case % 3 == 0 { Algorithm::Slic } else { Algorithm::Watershed },
            seed: case as u64,
        };
        let m = mix_mask_for(&x1, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let zeros = MixMask::filled(h, w, false);
        let ones = MixMask::filled(h, w, true);
        let mix = |a: &ImageBuffer<u8>, b: &ImageBuffer<u8>, m: &MixMask| mix_images(a, b, m).unwrap();
        let fail = |what: &str| Err(format!("case {case}: {what}"));
        if mix(&x1, &x2, &zeros) != x1 {
            return fail("all-zero mask does not give x1");
        }
        if mix(&x1, &x2, &ones) != x2 {
            return fail("all-one mask does not give x2");
        }
        if mix(&x1, &x1, &m) != x1 {
            return fail("self-mix is not the identity");
        }
        if mix(&x1, &x2, &m) != mix(&x2, &x1, &m.complement()) {
            return fail("complement symmetry broken");
        }
        // the same identities on probability maps
        let k = rng.inclusive(2, 5);
        let p1 = ProbMap::new(h, w, k, random_probs(&mut rng, h * w, k)).unwrap();
        let p2 = ProbMap::new(h, w, k, random_probs(&mut rng, h * w, k)).unwrap();
        let pm = |a: &ProbMap, b: &ProbMap, m: &MixMask| mix_probmaps(a, b, m).unwrap();
        if pm(&p1, &p2, &zeros) != p1 || pm(&p1, &p2, &ones) != p2 || pm(&p1, &p1, &m) != p1 {
            return fail("probability-map identities broken");
        }
        if pm(&p1, &p2, &m) != pm(&p2, &p1, &m.complement()) {
            return fail("probability-map complement symmetry broken");
        }
        // proportion 0 through the full pipeline
        let off = MixConfig { proportion: 0.0, ..cfg };
        let (out, mask) = make_mix(&x1, &x2, &off, &mut rng).map_err(|e| e.to_string())?;
        if out != x1 || mask.count_ones() != 0 {
            return fail("proportion 0 does not give x1");
        }
    }
    Ok(format!("{MIX_CASES} cases exact"))
}

fn random_labels(rng: &mut Rng, n: usize, classes: usize, ignore_rate: f64) -> Vec<u8> {
    (0..n)
        .map(|_| {
            if rng.bernoulli(ignore_rate) {
                255
            } else {
                rng.below(0, classes) as u8
            }
        })
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::seed(41);
    let mut worst_rank = 0.0f64;
    let mut worst_other = 0.0f64;
    for inst in 0..METRIC_INSTANCES {
        let (h, w) = (rng.inclusive(1, 12), rng.inclusive(2, 12));
        let k = rng.inclusive(2, 6);
        let gt = random_labels(&mut rng, h * w, k, 0.1);
        // predictions agree with the truth about half the time
        let pred: Vec<u8> = gt
            .iter()
            .map(|&t| if t != 255 && rng.bernoulli(0.5) { t } else { random_labels(&mut rng, 1, k, 0.05)[0] })
            .collect();
        let gt_map = LabelMap::new(h, w, gt.clone()).unwrap();
        let pred_map = LabelMap::new(h, w, pred.clone()).unwrap();
        if let Some(want) = miou_oracle(&pred, &gt, k) {
            let got = miou(&confusion(&pred_map, &gt_map, k).unwrap()).unwrap();
            worst_other = worst_other.max((got - want).abs());
        }

        let mut probs = random_probs(&mut rng, h * w, k);
        // a few exact zeros exercise the log clamp
        if inst % 10 == 0 {
            let px = rng.below(0, h * w);
            let row = &mut probs[px * k..(px + 1) * k];
            row.iter_mut().for_each(|v| *v = 0.0);
            row[rng.below(0, k)] = 1.0;
        }
        let pm = ProbMap::new(h, w, k, probs.clone()).unwrap();
        if gt.iter().any(|&t| t != 255) {
            let bins = [1, 5, 10, 15, 20][inst % 5];
            worst_other = worst_other.max((nll(&pm, &gt_map).unwrap() - nll_oracle(&probs, k, &gt)).abs());
            worst_other = worst_other.max((ece(&pm, &gt_map, bins).unwrap() - ece_oracle(&probs, k, &gt, bins)).abs());
        }

        let n = rng.inclusive(2, 300);
        let tie_levels = [None, Some(3), Some(20)][inst % 3];
        let scores: Vec<f64> = (0..n)
            .map(|_| match tie_levels {
                Some(l) => rng.below(0, l) as f64 / l as f64,
                None => rng.uniform(),
            })
            .collect();
        let mut ood: Vec<bool> = scores.iter().map(|&s| rng.bernoulli(0.2 + 0.6 * s)).collect();
        ood[0] = true;
        ood[1] = false;
        let s = ScoredSamples::new(scores.clone(), ood.clone()).unwrap();
        for (got, want) in [
            (roc_auc(&s).unwrap(), auc_oracle(&scores, &ood)),
            (aupr(&s).unwrap(), aupr_oracle(&scores, &ood)),
            (fpr_at_95_tpr(&s).unwrap(), fpr95_oracle(&scores, &ood)),
        ] {
            worst_rank = worst_rank.max((got - want).abs());
        }
    }
    if worst_rank > RANKING_TOL || worst_other > OTHER_METRIC_TOL {
        return Err(format!("max deviation ranking {worst_rank:e}, others {worst_other:e}"));
    }
    endpoint_cases()?;
    Ok(format!(
        "{METRIC_INSTANCES} instances, max deviation ranking {worst_rank:e}, others {worst_other:e}; endpoints exact"
    ))
}

fn endpoint_cases() -> Result<(), String> {
    let gt = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
    let onehot = ProbMap::one_hot(&gt, 3).unwrap();
    let exact = |name: &str, got: f64, want: f64| {
        if got == want {
            Ok(())
        } else {
            Err(format!("{name}: {got} != {want}"))
        }
    };
    exact("perfect miou", miou(&confusion(&gt, &gt, 3).unwrap()).unwrap(), 1.0)?;
    exact("perfect nll", nll(&onehot, &gt).unwrap(), 0.0)?;
    exact("perfect ece", ece(&onehot, &gt, 15).unwrap(), 0.0)?;
    let inverted = LabelMap::new(2, 3, vec![1, 0, 0, 0, 0, 1]).unwrap();
    exact("disjoint miou", miou(&confusion(&inverted, &gt, 3).unwrap()).unwrap(), 0.0)?;
    let uniform = ProbMap::uniform(2, 3, 4).unwrap();
    let gt4 = LabelMap::new(2, 3, vec![0, 1, 2, 3, 0, 1]).unwrap();
    exact("uniform nll", nll(&uniform, &gt4).unwrap(), (0.25f32 as f64).ln().abs())?;

    let ood = vec![true, true, true, false, false, false, false];
    let sep = ScoredSamples::new(vec![0.9, 0.8, 0.7, 0.3, 0.2, 0.1, 0.0], ood.clone()).unwrap();
    exact("perfect auc", roc_auc(&sep).unwrap(), 1.0)?;
    exact("perfect aupr", aupr(&sep).unwrap(), 1.0)?;
    exact("perfect fpr95", fpr_at_95_tpr(&sep).unwrap(), 0.0)?;
    let inv = ScoredSamples::new(vec![0.0, 0.1, 0.2, 0.6, 0.7, 0.8, 0.9], ood.clone()).unwrap();
    exact("inverted auc", roc_auc(&inv).unwrap(), 0.0)?;
    exact("inverted fpr95", fpr_at_95_tpr(&inv).unwrap(), 1.0)?;
    let flat = ScoredSamples::new(vec![0.5; 7], ood).unwrap();
    exact("uniform auc", roc_auc(&flat).unwrap(), 0.5)?;
    exact("uniform aupr", aupr(&flat).unwrap(), 3.0 / 7.0)?;
    exact("uniform fpr95", fpr_at_95_tpr(&flat).unwrap(), 1.0)?;
    Ok(())
}

fn grad_config(rng: &mut Rng, i: usize) -> (TrainerConfig, usize) {
    let lambda = [0.0, 1.0, 0.35, 2.0][i % 4];
    let mode = if i.is_multiple_of(2) { PseudoLabelMode::Hard } else { PseudoLabelMode::Soft };
    let classes = rng.inclusive(2, 4);
    let cfg = TrainerConfig {
        lambda,
        pseudo_label_mode: mode,
        crop: (rng.inclusive(4, 9), rng.inclusive(4, 9)),
        labeled_batch: rng.inclusive(1, 2),
        unlabeled_pairs: rng.inclusive(1, 2),
        mix: MixConfig {
            n_superpixels: rng.inclusive(2, 12),
            proportion: rng.range_f64(0.1, 0.9),
            ..MixConfig::default()
        },
        ..TrainerConfig::default()
    };
    (cfg, classes)
}

fn gradient_check() -> Outcome {
    let mut rng = Rng::seed(51);
    let mut worst = 0.0f64;
    let mut lambdas = vec![];
    for i in 0..GRAD_CONFIGS {
        let (cfg, k) = grad_config(&mut rng, i);
        lambdas.push(cfg.lambda);
        let (h, w) = (cfg.crop.0 + 3, cfg.crop.1 + 3);
        let labeled: Vec<_> = (0..cfg.labeled_batch)
            .map(|_| {
                let y = random_labels(&mut rng, h * w, k, 0.1);
                (random_rgb(&mut rng, h, w), LabelMap::new(h, w, y).unwrap())
            })
            .collect();
        let pairs: Vec<_> = (0..cfg.unlabeled_pairs)
            .map(|_| (random_rgb(&mut rng, h, w), random_rgb(&mut rng, h, w)))
            .collect();
        let student = ToyModel::random(k, 1.0, &mut rng);
        let teacher = ToyModel::random(k, 1.0, &mut rng);
        let batch_seed = 1000 + i as u64;
        let loss_at = |m: &ToyModel| {
            joint_loss(m, &labeled, &pairs, &teacher, &cfg, &mut Rng::seed(batch_seed))
                .unwrap()
                .total
        };
        let analytic = grad(&student, &labeled, &pairs, &teacher, &cfg, &mut Rng::seed(batch_seed)).unwrap();
        let mut numeric = vec![0.0; k * FEATURES];
        for (j, g) in numeric.iter_mut().enumerate() {
            let mut plus = student.clone();
            plus.weights_mut()[j] += GRAD_EPS;
            let mut minus = student.clone();
            minus.weights_mut()[j] -= GRAD_EPS;
            *g = (loss_at(&plus) - loss_at(&minus)) / (2.0 * GRAD_EPS);
        }
        // ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric)).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let has_endpoints = lambdas.contains(&0.0) && lambdas.contains(&1.0);
    check(
        worst < GRAD_REL_TOL && has_endpoints,
        format!("{GRAD_CONFIGS} configs, max relative error {worst:e}"),
        format!("max relative error {worst:e}"),
    )
}

// One update `φ + (1 − α)(θ − φ)` rounds three times, each error at most
// `ε · max(|φ|, |θ|)`, and the iterates never leave the range of `φ₀` and `θ`.
// T updates therefore stay within `3Tε · S` of the real-arithmetic values,
// where `S` is the largest weight magnitude; evaluating the two distances and
// `α^T · d₀` adds at most `3ε · S` more.
fn ema_rounding_allowance(t: i32, scale: f64) -> f64 {
    (3.0 * t as f64 + 3.0) * f64::EPSILON * scale
}

fn ema_contraction() -> Outcome {
    let mut rng = Rng::seed(61);
    let dist = |a: &ToyModel, b: &ToyModel| {
        a.weights()
            .iter()
            .zip(b.weights())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let (mut checks, mut within_rounding, mut worst_excess) = (0, 0, 0.0f64);
    for trial in 0..EMA_TRIALS {
        let k = rng.inclusive(2, 5);
        let scale = [1e-3, 1.0, 1e3][trial % 3];
        let theta = ToyModel::random(k, scale, &mut rng);
        let phi0 = ToyModel::random(k, scale, &mut rng);
        let d0 = dist(&phi0, &theta);
        let s = phi0
            .weights()
            .iter()
            .chain(theta.weights())
            .fold(0.0f64, |m, w| m.max(w.abs()));
        for t in EMA_HORIZONS {
            let mut phi = phi0.clone();
            for _ in 0..t {
                phi = ema_update(&phi, &theta, EMA_ALPHA).map_err(|e| e.to_string())?;
            }
            let (got, bound) = (dist(&phi, &theta), EMA_ALPHA.powi(t) * d0);
            checks += 1;
            if got > bound {
                within_rounding += 1;
                worst_excess = worst_excess.max((got - bound) / ema_rounding_allowance(t, s));
                if got > bound + ema_rounding_allowance(t, s) {
                    return Err(format!("trial {trial} T={t}: {got:e} > {bound:e} beyond rounding"));
                }
            }
        }
    }
    // a teacher equal to the student stays put
    let theta = ToyModel::random(3, 1.0, &mut rng);
    if ema_update(&theta, &theta, EMA_ALPHA).unwrap() != theta {
        return Err("phi = theta is not a fixed point".into());
    }
    Ok(format!(
        "{checks} checks over T in {EMA_HORIZONS:?}; {} strict, {within_rounding} exceed by rounding only, using at most {:.0}% of the allowance",
        checks - within_rounding,
        100.0 * worst_excess
    ))
}

// Exact sums written independently of the library.
fn bound_oracle(inst: &BoundInstance) -> (f64, f64) {
    let f = |x: &[f64]| inst.student.predict(x);
    let g = |x: &[f64]| inst.teacher.predict(x);
    let expect = |d: &DiscreteDist, h: &dyn Fn(&Sample) -> f64| d.iter().map(|(s, p)| p * h(s)).sum::<f64>();
    let r_true = expect(&inst.p_true, &|s| (f(&s.x) - s.y).abs());
    let r_emp = expect(&inst.p_emp, &|s| (f(&s.x) - s.y).abs());
    let r_fg = expect(&inst.p_mix, &|s| (f(&s.x) - g(&s.x)).abs());
    let r_g = expect(&inst.p_mix, &|s| (s.y - g(&s.x)).abs());
    let all: Vec<&Sample> = inst
        .p_true
        .support()
        .iter()
        .chain(inst.p_emp.support())
        .chain(inst.p_mix.support())
        .collect();
    let m = all.iter().map(|s| (f(&s.x) - s.y).abs()).fold(0.0, f64::max);
    // ‖a − b‖₁ by pairwise matching of identical points
    let mass = |d: &DiscreteDist, u: &Sample| d.iter().filter(|(s, _)| *s == u).map(|(_, p)| p).sum::<f64>();
    let l1 = |a: &DiscreteDist, b: &DiscreteDist| {
        let mut uniq: Vec<&Sample> = vec![];
        for s in a.support().iter().chain(b.support()) {
            if !uniq.contains(&s) {
                uniq.push(s);
            }
        }
        uniq.iter().map(|u| (mass(a, u) - mass(b, u)).abs()).sum::<f64>()
    };
    let lhs = r_emp + r_fg;
    let rhs = 2.0 * r_true + m * (l1(&inst.p_mix, &inst.p_true) + l1(&inst.p_emp, &inst.p_true)) + r_g;
    (lhs, rhs)
}

fn bound_verification() -> Outcome {
    let mut rng = Rng::seed(71);
    let mut elapsed = Duration::ZERO;
    let mut min_gap = f64::INFINITY;
    let mut steps = 0;
    for i in 0..BOUND_INSTANCES {
        let inst = BoundInstance::random(&mut rng, BOUND_MAX_SUPPORT, BOUND_DIM).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let report = inst.verify(&AbsLoss::default()).map_err(|e| format!("instance {i}: {e}"))?;
        elapsed += t.elapsed();
        if let Some(step) = report.steps.iter().find(|s| !s.holds) {
            return Err(format!("instance {i}: step {:?} fails", step.name));
        }
        let (lhs, rhs) = bound_oracle(&inst);
        if (lhs - report.lhs).abs() > BOUND_ORACLE_TOL || (rhs - report.rhs).abs() > BOUND_ORACLE_TOL {
            return Err(format!("instance {i}: oracle ({lhs}, {rhs}) vs report ({}, {})", report.lhs, report.rhs));
        }
        if lhs > rhs {
            return Err(format!("instance {i}: oracle lhs {lhs} > rhs {rhs}"));
        }
        min_gap = min_gap.min(rhs - lhs);
        steps = report.steps.len();
    }
    check(
        elapsed < BOUND_TIME_LIMIT,
        format!(
            "{BOUND_INSTANCES} instances, all {steps} proof steps hold, smallest rhs-lhs {min_gap:.3e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
        format!("too slow: {:.3}s", elapsed.as_secs_f64()),
    )
}

fn robustness() -> Outcome {
    let t = Instant::now();
    let cfg = TrainerConfig {
        lambda: 1.0,
        lr: ROBUST_LR,
        mix: MixConfig {
            n_superpixels: 200,
            proportion: 0.5,
            ..MixConfig::default()
        },
        ..TrainerConfig::default()
    };
    let cmp = compare_with_baseline(&SynthTask::default(), &cfg, &ROBUST_SEEDS).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let (c, b) = (cmp.consistency_mean, cmp.baseline_mean);
    let summary = format!(
        "mIoU {:.4} vs {:.4}, NLL {:.4} vs {:.4}, {:.1}s",
        c.miou,
        b.miou,
        c.nll,
        b.nll,
        elapsed.as_secs_f64()
    );
    check(cmp.consistency_wins() && elapsed < ROBUST_TIME_LIMIT, summary.clone(), summary)
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spmix"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

// Every regular file below `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn cli_session(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let mut outputs = vec![];
    outputs.push(run_cli(dir, &["gen-synth", "--out", "c", "--count", "4", "--noise", "12", "--seed", "5"])?);
    outputs.push(run_cli(dir, &["superpixels", "--input", "c/images/0000.png", "--output", "sp_w.png"])?);
    outputs.push(run_cli(
        dir,
        &["superpixels", "--input", "c/images/0000.png", "--algo", "slic", "--n", "40", "--output", "sp_s.png"],
    )?);
    outputs.push(run_cli(
        dir,
        &[
            "mix", "--a", "c/images/0000.png", "--b", "c/images/0001.png", "--seed", "9", "--out", "mix.png",
            "--mask-out", "mask.png",
        ],
    )?);
    std::fs::write(dir.join("train.toml"), "steps = 15\nlr = 0.5\nseed = 3\ntask_unlabeled = 6\n").unwrap();
    outputs.push(run_cli(
        dir,
        &["train-toy", "--config", "train.toml", "--checkpoint", "s.tmdl", "--teacher-checkpoint", "t.tmdl", "--history", "h.csv"],
    )?);
    // probability maps and OOD masks for the two evaluation commands
    std::fs::create_dir_all(dir.join("probs")).unwrap();
    std::fs::create_dir_all(dir.join("ood")).unwrap();
    let model = spmix::io::read_checkpoint(dir.join("s.tmdl")).map_err(|e| e.to_string())?;
    for name in ["0000", "0001", "0002", "0003"] {
        let x = spmix::io::read_rgb(dir.join(format!("c/images/{name}.png"))).map_err(|e| e.to_string())?;
        let p = spmix::consistency::forward(&model, &x).map_err(|e| e.to_string())?;
        spmix::io::write_probmap(dir.join(format!("probs/{name}.pmap")), &p).map_err(|e| e.to_string())?;
        let y = spmix::io::read_labels(dir.join(format!("c/labels/{name}.png"))).map_err(|e| e.to_string())?;
        let bits = y.labels().iter().map(|&l| u8::from(l == 2)).collect();
        let m = MixMask::new(y.height(), y.width(), bits).unwrap();
        spmix::io::write_mask(dir.join(format!("ood/{name}.png")), &m).map_err(|e| e.to_string())?;
    }
    outputs.push(run_cli(
        dir,
        &["eval", "--pred", "c/labels", "--gt", "c/labels", "--probs", "probs", "--classes", "3"],
    )?);
    outputs.push(run_cli(dir, &["ood-eval", "--probs", "probs", "--ood-mask", "ood"])?);
    outputs.push(run_cli(dir, &["verify-bound", "--instances", "20", "--seed", "4"])?);
    Ok(outputs)
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_a = cli_session(a.path())?;
    let out_b = cli_session(b.path())?;
    if out_a != out_b {
        return Err("standard output differs between runs".into());
    }
    let (fa, fb) = (snapshot(a.path()), snapshot(b.path()));
    if fa != fb {
        let differing: Vec<_> = fa
            .iter()
            .zip(&fb)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.clone())
            .collect();
        return Err(format!("files differ: {differing:?}"));
    }
    Ok(format!("7 commands, {} output streams and {} files byte-identical", out_a.len(), fa.len()))
}

fn ablation_harness() -> Outcome {
    let task = SynthTask {
        n_unlabeled: 8,
        n_test: 4,
        ..SynthTask::default()
    };
    let cfg = TrainerConfig {
        steps: ABLATION_STEPS,
        lr: ROBUST_LR,
        ..TrainerConfig::default()
    };
    let counts = count_sweep(&task, &cfg).map_err(|e| e.to_string())?;
    let props = proportion_sweep(&task, &cfg).map_err(|e| e.to_string())?;
    for line in format_table(&counts).lines().chain(format_table(&props).lines().skip(1)) {
        println!("    {line}");
    }
    let finite = counts
        .iter()
        .chain(&props)
        .all(|r| r.miou.is_finite() && r.nll.is_finite() && r.ece.is_finite());
    check(
        counts.len() == 6 && props.len() == 9 && finite,
        format!("{} count rows, {} proportion rows, all finite", counts.len(), props.len()),
        "missing or non-finite rows",
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("watershed partition", watershed_partition),
        ("boundary recall", boundary_recall_criterion),
        ("mixing identities", mixing_identities),
        ("metric oracles", metric_oracles),
        ("gradient check", gradient_check),
        ("EMA contraction", ema_contraction),
        ("bound verification", bound_verification),
        ("robustness under noise", robustness),
        ("CLI determinism", cli_determinism),
        ("ablation harness", ablation_harness),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        match run() {
            Ok(msg) => println!("PASS {name}: {msg} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{:.1}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
