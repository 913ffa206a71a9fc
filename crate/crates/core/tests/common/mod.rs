//! Independent reference implementations used by the integration tests.
//! Everything here is written for clarity, not speed.

#![allow(dead_code)]

use spmix::{ImageBuffer, Rng};

/// Priority flood with the frontier kept in a plain list. Each step scans the
/// list for the smallest (gradient, push order) entry, then hands its label to
/// the unlabelled 4-neighbours in the order up, left, right, down.
pub fn flood_oracle(grad: &[f32], h: usize, w: usize, markers: &[(usize, usize)]) -> Vec<u32> {
    let mut label: Vec<Option<u32>> = vec![None; h * w];
    let mut frontier: Vec<(f32, usize, usize)> = Vec::new();
    let mut order = 0;
    for (i, &(r, c)) in markers.iter().enumerate() {
        label[r * w + c] = Some(i as u32);
        frontier.push((grad[r * w + c], order, r * w + c));
        order += 1;
    }
    while !frontier.is_empty() {
        let mut best = 0;
        for i in 1..frontier.len() {
            let (g, o, _) = frontier[i];
            let (bg, bo, _) = frontier[best];
            if g < bg || (g == bg && o < bo) {
                best = i;
            }
        }
        let (_, _, p) = frontier.swap_remove(best);
        let (r, c) = (p / w, p % w);
        let mut next = vec![];
        if r > 0 {
            next.push(p - w);
        }
        if c > 0 {
            next.push(p - 1);
        }
        if c + 1 < w {
            next.push(p + 1);
        }
        if r + 1 < h {
            next.push(p + w);
        }
        for q in next {
            if label[q].is_none() {
                label[q] = label[p];
                frontier.push((grad[q], order, q));
                order += 1;
            }
        }
    }
    label.into_iter().map(|l| l.expect("every pixel reached")).collect()
}

/// True when ids cover `0..n`, every region is non-empty and 4-connected.
pub fn is_connected_partition(ids: &[u32], h: usize, w: usize, n: usize) -> bool {
    if ids.len() != h * w || ids.iter().any(|&i| i as usize >= n) {
        return false;
    }
    let mut seen = vec![false; h * w];
    let mut components = 0;
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            let cand = [
                (r > 0).then(|| p - w),
                (c > 0).then(|| p - 1),
                (c + 1 < w).then(|| p + 1),
                (r + 1 < h).then(|| p + w),
            ];
            for q in cand.into_iter().flatten() {
                if !seen[q] && ids[q] == ids[p] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    // one component per id and every id used
    let mut used = vec![false; n];
    ids.iter().for_each(|&i| used[i as usize] = true);
    components == n && used.iter().all(|&u| u)
}

/// Random single-channel gradient image; when `levels` is set the values are
/// quantised to that many levels so that ties are common.
pub fn random_gradient(rng: &mut Rng, h: usize, w: usize, levels: Option<usize>) -> ImageBuffer<f32> {
    let data = (0..h * w)
        .map(|_| match levels {
            Some(l) => rng.below(0, l) as f32,
            None => rng.uniform() as f32 * 100.0,
        })
        .collect();
    ImageBuffer::new(h, w, 1, data).unwrap()
}

pub fn random_rgb(rng: &mut Rng, h: usize, w: usize) -> ImageBuffer<u8> {
    let data = (0..h * w * 3).map(|_| rng.below(0, 256) as u8).collect();
    ImageBuffer::new(h, w, 3, data).unwrap()
}

// ---- metrics ----

/// IoU per class from raw pixel lists, skipping 255 in either list; classes
/// with an empty union are left out of the mean.
pub fn miou_oracle(pred: &[u8], gt: &[u8], classes: usize) -> Option<f64> {
    let mut ious = vec![];
    for c in 0..classes as u8 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (&p, &t) in pred.iter().zip(gt) {
            if p == 255 || t == 255 {
                continue;
            }
            if p == c && t == c {
                inter += 1;
            }
            if p == c || t == c {
                union += 1;
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

fn first_max(px: &[f32]) -> usize {
    let mut best = 0;
    for k in 1..px.len() {
        if px[k] > px[best] {
            best = k;
        }
    }
    best
}

/// Mean clamped negative log-probability of the true class.
pub fn nll_oracle(probs: &[f32], classes: usize, gt: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (i, &t) in gt.iter().enumerate() {
        if t == 255 {
            continue;
        }
        let p = probs[i * classes + t as usize] as f64;
        total += -(p.max(1e-12)).ln();
        n += 1;
    }
    total / n as f64
}

/// Bin `b` holds confidences in `(b/B, (b+1)/B]`; zero goes to the first bin.
pub fn ece_oracle(probs: &[f32], classes: usize, gt: &[u8], bins: usize) -> f64 {
    let mut count = vec![0u64; bins];
    let mut conf = vec![0.0f64; bins];
    let mut hits = vec![0u64; bins];
    let mut n = 0u64;
    for (i, &t) in gt.iter().enumerate() {
        if t == 255 {
            continue;
        }
        let px = &probs[i * classes..(i + 1) * classes];
        let k = first_max(px);
        let c = px[k] as f64;
        let mut b = 0;
        while b + 1 < bins && c > (b + 1) as f64 / bins as f64 {
            b += 1;
        }
        count[b] += 1;
        conf[b] += c;
        hits[b] += (k == t as usize) as u64;
        n += 1;
    }
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let acc = hits[b] as f64 / count[b] as f64;
            let mc = conf[b] / count[b] as f64;
            count[b] as f64 / n as f64 * (acc - mc).abs()
        })
        .sum()
}

/// Fraction of (OOD, in-distribution) pairs ordered correctly, ties half.
pub fn auc_oracle(scores: &[f64], ood: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ood[i] && !ood[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn thresholds_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn tp_fp_at(scores: &[f64], ood: &[bool], t: f64) -> (f64, f64) {
    let (mut tp, mut fp) = (0.0, 0.0);
    for (s, &o) in scores.iter().zip(ood) {
        if *s >= t {
            if o {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
    }
    (tp, fp)
}

/// `Σ (R_t − R_prev) · P_t` with precision and recall recounted from scratch
/// at every distinct threshold.
pub fn aupr_oracle(scores: &[f64], ood: &[bool]) -> f64 {
    let pos = ood.iter().filter(|&&o| o).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds_desc(scores) {
        let (tp, fp) = tp_fp_at(scores, ood, t);
        let recall = tp / pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

/// FPR at the highest threshold whose TPR is at least 0.95.
pub fn fpr95_oracle(scores: &[f64], ood: &[bool]) -> f64 {
    let pos = ood.iter().filter(|&&o| o).count() as f64;
    let neg = ood.len() as f64 - pos;
    for t in thresholds_desc(scores) {
        let (tp, fp) = tp_fp_at(scores, ood, t);
        if tp / pos >= 0.95 {
            return fp / neg;
        }
    }
    unreachable!("the lowest threshold admits everything")
}

/// Random softmax vectors at mixed temperatures, so some pixels are flat and
/// some nearly one-hot.
pub fn random_probs(rng: &mut Rng, pixels: usize, classes: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(pixels * classes);
    for _ in 0..pixels {
        let temp = [0.2, 1.0, 5.0][rng.below(0, 3)];
        let raw: Vec<f64> = (0..classes).map(|_| (temp * rng.normal()).exp()).collect();
        let s: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| (v / s) as f32));
    }
    out
}
