//! Segmentation, calibration and out-of-distribution metrics.
//!
//! Everything accumulates in `f64` even though probability maps are stored as `f32`.

use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgcore::{argmax, ImageBuffer, LabelMap, ProbMap, IGNORE_LABEL};

pub const DEFAULT_ECE_BINS: usize = 15;
/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// `K × K` pixel counts, row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image; pixels where either map is [`IGNORE_LABEL`] are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(
                format!("{:?} prediction", gt.dims()),
                format!("{:?} prediction", pred.dims()),
            ));
        }
        pred.check_classes(self.classes)?;
        gt.check_classes(self.classes)?;
        for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
            if p == IGNORE_LABEL || t == IGNORE_LABEL {
                continue;
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Per-class IoU, `None` for classes absent from both prediction and truth.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_ = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp = (0..self.classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.classes, rhs.classes, "merging confusion matrices of different K");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self += &rhs;
        self
    }
}

pub fn confusion(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

/// Mean IoU over classes present in the prediction or the ground truth.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = cm.class_iou().into_iter().flatten().collect();
    if ious.is_empty() {
        return Err(Error::UndefinedMetric("mIoU: no class present".into()));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

fn check_pair(probs: &ProbMap, gt: &LabelMap) -> Result<()> {
    if probs.dims() != gt.dims() {
        return Err(Error::shape(
            format!("{:?} probabilities", gt.dims()),
            format!("{:?} probabilities", probs.dims()),
        ));
    }
    gt.check_classes(probs.classes())
}

/// Running sums for the negative log-likelihood; merge across images with `+=`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllAccumulator {
    pub sum: f64,
    pub pixels: u64,
    /// Pixels whose ground-truth probability was clamped to [`LOG_CLAMP`].
    pub clamped: u64,
}

impl NllAccumulator {
    pub fn accumulate(&mut self, probs: &ProbMap, gt: &LabelMap) -> Result<()> {
        check_pair(probs, gt)?;
        for (px, &t) in probs.pixels().zip(gt.labels()) {
            if t == IGNORE_LABEL {
                continue;
            }
            let p = px[t as usize] as f64;
            if p < LOG_CLAMP {
                self.clamped += 1;
            }
            self.sum -= p.max(LOG_CLAMP).ln();
            self.pixels += 1;
        }
        Ok(())
    }

    pub fn value(&self) -> Result<f64> {
        if self.pixels == 0 {
            return Err(Error::UndefinedMetric("NLL: no scored pixels".into()));
        }
        Ok(self.sum / self.pixels as f64)
    }
}

impl AddAssign<&NllAccumulator> for NllAccumulator {
    fn add_assign(&mut self, rhs: &NllAccumulator) {
        self.sum += rhs.sum;
        self.pixels += rhs.pixels;
        self.clamped += rhs.clamped;
    }
}

/// Mean of `−ln p(gt)` over non-ignore pixels.
pub fn nll(probs: &ProbMap, gt: &LabelMap) -> Result<f64> {
    let mut acc = NllAccumulator::default();
    acc.accumulate(probs, gt)?;
    acc.value()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
    pub confidence_sum: f64,
    pub correct: u64,
}

impl ReliabilityBin {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidence_sum / self.count as f64
    }
}

/// Equal-width confidence bins over `(0, 1]`; bin `b` holds `(b/B, (b+1)/B]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
        }
        let width = 1.0 / bins as f64;
        Ok(Self {
            bins: (0..bins)
                .map(|b| ReliabilityBin {
                    lower: b as f64 * width,
                    upper: (b + 1) as f64 * width,
                    ..Default::default()
                })
                .collect(),
        })
    }

    fn bin_of(&self, confidence: f64) -> usize {
        let b = self.bins.len();
        ((confidence * b as f64).ceil() as usize).clamp(1, b) - 1
    }

    pub fn add(&mut self, confidence: f64, correct: bool) {
        let b = self.bin_of(confidence);
        let bin = &mut self.bins[b];
        bin.count += 1;
        bin.confidence_sum += confidence;
        bin.correct += u64::from(correct);
    }

    /// Scores every non-ignore pixel by its max-probability confidence.
    pub fn accumulate(&mut self, probs: &ProbMap, gt: &LabelMap) -> Result<()> {
        check_pair(probs, gt)?;
        for (px, &t) in probs.pixels().zip(gt.labels()) {
            if t == IGNORE_LABEL {
                continue;
            }
            let k = argmax(px);
            self.add(px[k] as f64, k == t as usize);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ReliabilityTable) {
        assert_eq!(self.bins.len(), other.bins.len(), "merging tables of different bin counts");
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.count += b.count;
            a.confidence_sum += b.confidence_sum;
            a.correct += b.correct;
        }
    }

    /// `Σ_b (|b| / N) · |acc(b) − conf(b)|`.
    pub fn ece(&self) -> Result<f64> {
        let total: u64 = self.bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return Err(Error::UndefinedMetric("ECE: no scored pixels".into()));
        }
        Ok(self
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / total as f64 * (b.accuracy() - b.mean_confidence()).abs())
            .sum())
    }
}

pub fn ece(probs: &ProbMap, gt: &LabelMap, bins: usize) -> Result<f64> {
    let mut table = ReliabilityTable::new(bins)?;
    table.accumulate(probs, gt)?;
    table.ece()
}

/// Per-pixel maximum class probability.
pub fn mcp_confidence(probs: &ProbMap) -> ImageBuffer<f32> {
    let data = probs
        .pixels()
        .map(|px| px.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    ImageBuffer::new(probs.height(), probs.width(), 1, data)
        .expect("probability map dims are non-empty")
}

/// Per-pixel OOD score `1 − MCP`.
pub fn ood_scores(probs: &ProbMap) -> Vec<f64> {
    mcp_confidence(probs)
        .data()
        .iter()
        .map(|&c| 1.0 - c as f64)
        .collect()
}

/// OOD scores paired with ground truth; OOD samples are the positives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSamples {
    scores: Vec<f64>,
    is_ood: Vec<bool>,
}

impl ScoredSamples {
    pub fn new(scores: Vec<f64>, is_ood: Vec<bool>) -> Result<Self> {
        if scores.len() != is_ood.len() {
            return Err(Error::shape(scores.len(), is_ood.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("NaN OOD score".into()));
        }
        Ok(Self { scores, is_ood })
    }

    pub fn extend(&mut self, scores: &[f64], is_ood: &[bool]) -> Result<()> {
        if scores.len() != is_ood.len() {
            return Err(Error::shape(scores.len(), is_ood.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidInput("NaN OOD score".into()));
        }
        self.scores.extend_from_slice(scores);
        self.is_ood.extend_from_slice(is_ood);
        Ok(())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_ood(&self) -> &[bool] {
        &self.is_ood
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> (u64, u64) {
        let pos = self.is_ood.iter().filter(|&&o| o).count() as u64;
        (pos, self.scores.len() as u64 - pos)
    }

    fn require_both(&self, metric: &str) -> Result<(u64, u64)> {
        let (pos, neg) = self.counts();
        if pos == 0 || neg == 0 {
            return Err(Error::UndefinedMetric(format!(
                "{metric} needs both OOD and in-distribution samples ({pos} OOD, {neg} in)"
            )));
        }
        Ok((pos, neg))
    }

    /// `(tp, fp)` after each group of tied scores, scanning scores high to low.
    fn descending_curve(&self) -> Vec<(u64, u64)> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut curve = vec![];
        let (mut tp, mut fp) = (0u64, 0u64);
        for (i, &s) in order.iter().enumerate() {
            if self.is_ood[s] {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = order
                .get(i + 1)
                .is_none_or(|&next| self.scores[next] != self.scores[s]);
            if last_of_group {
                curve.push((tp, fp));
            }
        }
        curve
    }
}

/// Probability that a random OOD sample outscores a random in-distribution
/// sample, ties counting one half (Mann-Whitney U via mid-ranks).
pub fn roc_auc(s: &ScoredSamples) -> Result<f64> {
    let (pos, neg) = s.require_both("AUC")?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[a].total_cmp(&s.scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s.scores[order[j + 1]] == s.scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let ood_in_group = order[i..=j].iter().filter(|&&k| s.is_ood[k]).count() as u128;
        rank_sum2 += twice_mid * ood_in_group;
        i = j + 1;
    }
    let pos128 = pos as u128;
    let u2 = rank_sum2 - pos128 * (pos128 + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Step-wise area under the precision-recall curve: `Σ_t (R_t − R_{t−1}) · P_t`
/// over unique thresholds in descending order.
pub fn aupr(s: &ScoredSamples) -> Result<f64> {
    let (pos, _) = s.counts();
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPR needs OOD samples".into()));
    }
    let mut area = 0.0;
    let mut prev_tp = 0u64;
    for (tp, fp) in s.descending_curve() {
        if tp > prev_tp {
            let recall_step = (tp - prev_tp) as f64 / pos as f64;
            area += recall_step * tp as f64 / (tp + fp) as f64;
        }
        prev_tp = tp;
    }
    Ok(area)
}

/// FPR at the largest threshold whose TPR reaches 95%, without interpolation.
pub fn fpr_at_95_tpr(s: &ScoredSamples) -> Result<f64> {
    let (pos, neg) = s.require_both("FPR at 95% TPR")?;
    let (_, fp) = s
        .descending_curve()
        .into_iter()
        .find(|&(tp, _)| 100 * tp >= 95 * pos)
        .expect("the lowest threshold admits every sample");
    Ok(fp as f64 / neg as f64)
}

/// Metric values emitted as one JSON object with six decimals; absent
/// metrics are omitted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub miou: Option<f64>,
    pub ece: Option<f64>,
    pub nll: Option<f64>,
    pub auc: Option<f64>,
    pub aupr: Option<f64>,
    pub fpr95: Option<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let fields = [
            ("miou", self.miou),
            ("ece", self.ece),
            ("nll", self.nll),
            ("auc", self.auc),
            ("aupr", self.aupr),
            ("fpr95", self.fpr95),
        ];
        let body: Vec<String> = fields
            .iter()
            .filter_map(|(k, v)| v.map(|v| format!("\"{k}\": {v:.6}")))
            .collect();
        format!("{{{}}}", body.join(", "))
    }
}
