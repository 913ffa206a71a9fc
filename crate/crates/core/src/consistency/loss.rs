//! Supervised and consistency losses, the joint objective and its exact gradient.

use serde::{Deserialize, Serialize};

use super::model::{forward, pixel_features, Feature, ToyModel, FEATURES};
use super::TrainerConfig;
use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, LabelMap, ProbMap, IGNORE_LABEL};
use crate::metrics::LOG_CLAMP;
use crate::mixer::{make_mix, mix_images, mix_probmaps, weak_augment, MixMask};
use crate::rng::Rng;

/// How teacher outputs become student targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoLabelMode {
    /// Cross-entropy against the per-pixel argmax of the mixed teacher output.
    #[default]
    Hard,
    /// Cross-entropy against the full mixed teacher distribution.
    Soft,
}

impl std::str::FromStr for PseudoLabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(PseudoLabelMode::Hard),
            "soft" => Ok(PseudoLabelMode::Soft),
            other => Err(Error::InvalidArgument(format!(
                "unknown pseudo-label mode {other:?} (expected hard or soft)"
            ))),
        }
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Mean of `−ln p(y)` over non-ignore pixels (0 when every pixel is ignored).
pub fn sup_loss(p: &ProbMap, y: &LabelMap) -> Result<f64> {
    if p.dims() != y.dims() {
        return Err(Error::shape(format!("{:?}", y.dims()), format!("{:?}", p.dims())));
    }
    y.check_classes(p.classes())?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (px, &t) in p.pixels().zip(y.labels()) {
        if t != IGNORE_LABEL {
            sum -= clamped_ln(px[t as usize] as f64);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Cross-entropy of the student against mixed teacher pseudo-labels.
pub fn cons_loss(student: &ProbMap, pseudo: &ProbMap, mode: PseudoLabelMode) -> Result<f64> {
    if student.dims() != pseudo.dims() || student.classes() != pseudo.classes() {
        return Err(Error::shape(
            format!("{}x{}x{}", pseudo.height(), pseudo.width(), pseudo.classes()),
            format!("{}x{}x{}", student.height(), student.width(), student.classes()),
        ));
    }
    match mode {
        PseudoLabelMode::Hard => sup_loss(student, &pseudo.argmax()),
        PseudoLabelMode::Soft => {
            let n = student.height() * student.width();
            let sum: f64 = student
                .pixels()
                .zip(pseudo.pixels())
                .map(|(p, t)| {
                    -p.iter()
                        .zip(t)
                        .map(|(&pk, &tk)| tk as f64 * clamped_ln(pk as f64))
                        .sum::<f64>()
                })
                .sum();
            Ok(sum / n as f64)
        }
    }
}

/// A weakly augmented labelled crop with its features cached.
#[derive(Debug, Clone)]
pub struct LabeledView {
    pub image: ImageBuffer<u8>,
    pub labels: LabelMap,
    pub features: Vec<Feature>,
}

/// Everything produced for one unlabelled pair in a step. The same `mask`
/// builds both `mixed` and `pseudo`.
#[derive(Debug, Clone)]
pub struct MixRecord {
    pub base: ImageBuffer<u8>,
    pub donor: ImageBuffer<u8>,
    pub mask: MixMask,
    pub mixed: ImageBuffer<u8>,
    pub teacher_base: ProbMap,
    pub teacher_donor: ProbMap,
    pub pseudo: ProbMap,
    pub features: Vec<Feature>,
}

impl MixRecord {
    /// True when `mixed` and `pseudo` are exactly what `mask` produces.
    pub fn mask_is_consistent(&self) -> bool {
        let img = mix_images(&self.base, &self.donor, &self.mask);
        let lab = mix_probmaps(&self.teacher_base, &self.teacher_donor, &self.mask);
        matches!((img, lab), (Ok(i), Ok(l)) if i == self.mixed && l == self.pseudo)
    }
}

/// A fully drawn step: all randomness resolved, teacher outputs frozen.
#[derive(Debug, Clone, Default)]
pub struct PreparedBatch {
    pub labeled: Vec<LabeledView>,
    pub mixed: Vec<MixRecord>,
}

pub fn prepare_labeled(
    batch: &[(ImageBuffer<u8>, LabelMap)],
    crop: (usize, usize),
    rng: &mut Rng,
) -> Result<Vec<LabeledView>> {
    batch
        .iter()
        .map(|(x, y)| {
            let (image, labels) = weak_augment(x, Some(y), rng, crop)?;
            let labels = labels.expect("labels were supplied");
            let features = pixel_features(&image)?;
            Ok(LabeledView {
                image,
                labels,
                features,
            })
        })
        .collect()
}

/// Teacher sees the two weakly augmented images; the student sees their
/// superpixel mix, with superpixels computed on the first.
pub fn prepare_mixed(
    pairs: &[(ImageBuffer<u8>, ImageBuffer<u8>)],
    teacher: &ToyModel,
    cfg: &TrainerConfig,
    rng: &mut Rng,
) -> Result<Vec<MixRecord>> {
    pairs
        .iter()
        .map(|(u1, u2)| {
            let (base, _) = weak_augment(u1, None, rng, cfg.crop)?;
            let (donor, _) = weak_augment(u2, None, rng, cfg.crop)?;
            let (mixed, mask) = make_mix(&base, &donor, &cfg.mix, rng)?;
            let teacher_base = forward(teacher, &base)?;
            let teacher_donor = forward(teacher, &donor)?;
            let pseudo = mix_probmaps(&teacher_base, &teacher_donor, &mask)?;
            let features = pixel_features(&mixed)?;
            Ok(MixRecord {
                base,
                donor,
                mask,
                mixed,
                teacher_base,
                teacher_donor,
                pseudo,
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub sup: f64,
    pub cons: f64,
    /// `sup + λ · cons`.
    pub total: f64,
}

enum Target<'a> {
    Hard(u8),
    Soft(&'a [f32]),
}

// Pooled cross-entropy of the model against per-pixel targets, with the
// gradient sum Σ (p·Σt − t) ⊗ features when requested.
struct CrossEntropy<'a> {
    model: &'a ToyModel,
    probs: Vec<f64>,
    sum: f64,
    count: usize,
    grad: Option<Vec<f64>>,
}

impl<'a> CrossEntropy<'a> {
    fn new(model: &'a ToyModel, with_grad: bool) -> Self {
        Self {
            model,
            probs: vec![0.0; model.classes()],
            sum: 0.0,
            count: 0,
            grad: with_grad.then(|| vec![0.0; model.weights().len()]),
        }
    }

    fn add(&mut self, feat: &Feature, target: Target<'_>) {
        if matches!(target, Target::Hard(IGNORE_LABEL)) {
            return;
        }
        self.model.probs_into(feat, &mut self.probs);
        self.count += 1;
        let mass = match target {
            Target::Hard(t) => {
                self.sum -= clamped_ln(self.probs[t as usize]);
                1.0
            }
            Target::Soft(t) => {
                self.sum -= t
                    .iter()
                    .zip(&self.probs)
                    .map(|(&tk, &pk)| tk as f64 * clamped_ln(pk))
                    .sum::<f64>();
                t.iter().map(|&v| v as f64).sum()
            }
        };
        let Some(grad) = self.grad.as_mut() else {
            return;
        };
        for (k, &pk) in self.probs.iter().enumerate() {
            let tk = match target {
                Target::Hard(t) => f64::from(u8::from(t as usize == k)),
                Target::Soft(t) => t[k] as f64,
            };
            let d = pk * mass - tk;
            for (g, x) in grad[k * FEATURES..(k + 1) * FEATURES].iter_mut().zip(feat) {
                *g += d * x;
            }
        }
    }

    // Mean loss and mean gradient.
    fn finish(self) -> (f64, Option<Vec<f64>>) {
        let scale = if self.count == 0 { 0.0 } else { 1.0 / self.count as f64 };
        let grad = self.grad.map(|g| g.into_iter().map(|v| v * scale).collect());
        (self.sum * scale, grad)
    }
}

fn labeled_term(model: &ToyModel, views: &[LabeledView], with_grad: bool) -> (f64, Option<Vec<f64>>) {
    let mut ce = CrossEntropy::new(model, with_grad);
    for v in views {
        for (f, &l) in v.features.iter().zip(v.labels.labels()) {
            ce.add(f, Target::Hard(l));
        }
    }
    ce.finish()
}

fn mixed_term(
    model: &ToyModel,
    records: &[MixRecord],
    mode: PseudoLabelMode,
    with_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let mut ce = CrossEntropy::new(model, with_grad);
    for r in records {
        match mode {
            PseudoLabelMode::Hard => {
                let hard = r.pseudo.argmax();
                for (f, &l) in r.features.iter().zip(hard.labels()) {
                    ce.add(f, Target::Hard(l));
                }
            }
            PseudoLabelMode::Soft => {
                for (f, t) in r.features.iter().zip(r.pseudo.pixels()) {
                    ce.add(f, Target::Soft(t));
                }
            }
        }
    }
    ce.finish()
}

/// `L_sup + λ·L_cons` on an already drawn batch. Each term is the mean over
/// its pooled pixels.
pub fn batch_loss(model: &ToyModel, batch: &PreparedBatch, cfg: &TrainerConfig) -> LossTerms {
    let (sup, _) = labeled_term(model, &batch.labeled, false);
    let (cons, _) = mixed_term(model, &batch.mixed, cfg.pseudo_label_mode, false);
    LossTerms {
        sup,
        cons,
        total: sup + cfg.lambda * cons,
    }
}

/// Exact gradient of [`batch_loss`] with respect to the student weights.
///
/// Teacher outputs are constants. The `1e-12` log clamp is not
/// differentiated through.
pub fn batch_grad(model: &ToyModel, batch: &PreparedBatch, cfg: &TrainerConfig) -> Vec<f64> {
    let sup = labeled_term(model, &batch.labeled, true).1.expect("gradient requested");
    if cfg.lambda == 0.0 {
        return sup;
    }
    let cons = mixed_term(model, &batch.mixed, cfg.pseudo_label_mode, true)
        .1
        .expect("gradient requested");
    sup.iter().zip(&cons).map(|(s, c)| s + cfg.lambda * c).collect()
}

/// Draws a batch (labelled augmentations first, then the mixed pairs) from `rng`.
pub fn prepare_batch(
    labeled: &[(ImageBuffer<u8>, LabelMap)],
    pairs: &[(ImageBuffer<u8>, ImageBuffer<u8>)],
    teacher: &ToyModel,
    cfg: &TrainerConfig,
    rng: &mut Rng,
) -> Result<PreparedBatch> {
    Ok(PreparedBatch {
        labeled: prepare_labeled(labeled, cfg.crop, rng)?,
        mixed: prepare_mixed(pairs, teacher, cfg, rng)?,
    })
}

/// Joint loss composed end to end: weak augmentation, superpixel mix,
/// teacher pseudo-labels, student forward, both losses.
pub fn joint_loss(
    model: &ToyModel,
    labeled: &[(ImageBuffer<u8>, LabelMap)],
    pairs: &[(ImageBuffer<u8>, ImageBuffer<u8>)],
    teacher: &ToyModel,
    cfg: &TrainerConfig,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let batch = prepare_batch(labeled, pairs, teacher, cfg, rng)?;
    Ok(batch_loss(model, &batch, cfg))
}

/// Gradient of [`joint_loss`] for the batch the same `rng` state would draw.
pub fn grad(
    model: &ToyModel,
    labeled: &[(ImageBuffer<u8>, LabelMap)],
    pairs: &[(ImageBuffer<u8>, ImageBuffer<u8>)],
    teacher: &ToyModel,
    cfg: &TrainerConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let batch = prepare_batch(labeled, pairs, teacher, cfg, rng)?;
    Ok(batch_grad(model, &batch, cfg))
}
