use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, ProbMap};
use crate::rng::Rng;

/// Per-pixel features: R, G, B, the 3×3 mean of R, G, B (edge replicated),
/// and a constant 1. Colour values are scaled to `[0, 1]`.
pub const FEATURES: usize = 7;

pub type Feature = [f64; FEATURES];

/// Linear softmax segmenter: `softmax(W · features(pixel))` with `W` of shape `K × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    classes: usize,
    weights: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            weights: vec![0.0; classes * FEATURES],
        }
    }

    pub fn from_weights(classes: usize, weights: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("model needs at least one class".into()));
        }
        if weights.len() != classes * FEATURES {
            return Err(Error::shape(classes * FEATURES, weights.len()));
        }
        Ok(Self { classes, weights })
    }

    /// Weights drawn from `N(0, scale²)`.
    pub fn random(classes: usize, scale: f64, rng: &mut Rng) -> Self {
        Self {
            classes,
            weights: (0..classes * FEATURES).map(|_| scale * rng.normal()).collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        FEATURES
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * FEATURES..(class + 1) * FEATURES]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Softmax probabilities for one feature vector, written into `out`.
    pub(crate) fn probs_into(&self, feat: &Feature, out: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        for (k, o) in out.iter_mut().enumerate() {
            let row = self.row(k);
            *o = row.iter().zip(feat).map(|(w, x)| w * x).sum();
            max = max.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }

    /// Probabilities for every pixel in `f64`, row-major `P × K`.
    pub(crate) fn probs_f64(&self, feats: &[Feature]) -> Vec<f64> {
        let mut out = vec![0.0; feats.len() * self.classes];
        for (feat, px) in feats.iter().zip(out.chunks_exact_mut(self.classes)) {
            self.probs_into(feat, px);
        }
        out
    }
}

/// Feature vectors for every pixel of an RGB image.
pub fn pixel_features(x: &ImageBuffer<u8>) -> Result<Vec<Feature>> {
    if x.channels() != 3 {
        return Err(Error::InvalidInput(format!(
            "toy model needs 3 channels, got {}",
            x.channels()
        )));
    }
    let (h, w) = x.dims();
    let mut feats = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut f = [0.0; FEATURES];
            for ch in 0..3 {
                f[ch] = x.get(r, c, ch) as f64 / 255.0;
                let mut sum = 0.0;
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                        let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                        sum += x.get(rr, cc, ch) as f64;
                    }
                }
                f[3 + ch] = sum / (9.0 * 255.0);
            }
            f[6] = 1.0;
            feats.push(f);
        }
    }
    Ok(feats)
}

pub(crate) fn to_probmap(h: usize, w: usize, classes: usize, probs: &[f64]) -> Result<ProbMap> {
    ProbMap::new(h, w, classes, probs.iter().map(|&p| p as f32).collect())
}

/// Per-pixel class probabilities of `model` on `x`.
pub fn forward(model: &ToyModel, x: &ImageBuffer<u8>) -> Result<ProbMap> {
    if !model.is_finite() {
        return Err(Error::InvalidInput("model has non-finite weights".into()));
    }
    let feats = pixel_features(x)?;
    to_probmap(x.height(), x.width(), model.classes(), &model.probs_f64(&feats))
}

/// `φ ← α·φ + (1 − α)·θ`, elementwise, evaluated as `φ + (1 − α)(θ − φ)`
/// so that `φ = θ` is a fixed point in floating point too.
pub fn ema_update(teacher: &ToyModel, student: &ToyModel, alpha: f64) -> Result<ToyModel> {
    if teacher.classes != student.classes {
        return Err(Error::shape(
            format!("{} classes", teacher.classes),
            format!("{} classes", student.classes),
        ));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("EMA momentum {alpha} not in [0, 1)")));
    }
    let weights = teacher
        .weights
        .iter()
        .zip(&student.weights)
        .map(|(phi, theta)| phi + (1.0 - alpha) * (theta - phi))
        .collect();
    Ok(ToyModel {
        classes: teacher.classes,
        weights,
    })
}
