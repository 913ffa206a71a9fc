//! Teacher-student consistency training on a per-pixel linear softmax model.
//!
//! Each step draws a labelled batch and a set of unlabelled pairs. The
//! teacher labels both weakly augmented images of a pair, the student sees
//! their superpixel mix and is trained to match the identically mixed
//! teacher output. The objective is `L_sup + λ·L_cons`; the student follows
//! plain SGD and the teacher follows the student by EMA after every step.

mod loss;
mod model;
mod synth;

pub use loss::{
    batch_grad, batch_loss, cons_loss, grad, joint_loss, prepare_batch, prepare_labeled,
    prepare_mixed, sup_loss, LabeledView, LossTerms, MixRecord, PreparedBatch, PseudoLabelMode,
};
pub use model::{ema_update, forward, pixel_features, Feature, ToyModel, FEATURES};
pub use synth::{scene, Dataset, Split, SynthTask, MAX_CLASSES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ImageBuffer, LabelMap};
use crate::metrics::{ConfusionMatrix, MetricReport, NllAccumulator, ReliabilityTable, DEFAULT_ECE_BINS};
use crate::mixer::MixConfig;
use crate::rng::Rng;

/// Loss weight of the consistency term.
pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Teacher EMA momentum.
pub const DEFAULT_ALPHA: f64 = 0.99;

// Random streams of one training run.
const INIT_STREAM: u64 = 0;
const LABELED_STREAM: u64 = 1;
const UNLABELED_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub mix: MixConfig,
    pub pseudo_label_mode: PseudoLabelMode,
    pub seed: u64,
    pub labeled_batch: usize,
    pub unlabeled_pairs: usize,
    pub crop: (usize, usize),
    /// Standard deviation of the initial student weights.
    pub init_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            lr: 0.1,
            steps: 2000,
            mix: MixConfig::default(),
            pseudo_label_mode: PseudoLabelMode::Hard,
            seed: 0,
            labeled_batch: 4,
            unlabeled_pairs: 2,
            crop: (32, 32),
            init_scale: 0.01,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} not in [0, 1)", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr {} must be > 0", self.lr)));
        }
        if self.labeled_batch == 0 {
            return Err(Error::InvalidArgument("labeled_batch must be at least 1".into()));
        }
        if self.crop.0 == 0 || self.crop.1 == 0 {
            return Err(Error::InvalidArgument("crop must be non-empty".into()));
        }
        self.mix.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub sup_loss: f64,
    pub cons_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<StepRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `step,sup_loss,cons_loss` rows, one per step, after a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,sup_loss,cons_loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.9},{:.9}\n", r.step, r.sup_loss, r.cons_loss));
        }
        out
    }

    /// Moving average of `sup + λ·cons` over windows of `window` steps.
    pub fn smoothed_total(&self, lambda: f64, window: usize) -> Vec<f64> {
        let totals: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.sup_loss + lambda * r.cons_loss)
            .collect();
        totals
            .windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: ToyModel,
    pub teacher: ToyModel,
    pub history: History,
}

/// Training data drawn once from a [`SynthTask`].
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Dataset,
    pub unlabeled: Vec<ImageBuffer<u8>>,
}

impl TrainData {
    pub fn from_task(task: &SynthTask) -> Result<Self> {
        let labeled = task.generate(Split::Labeled)?;
        let unlabeled = task
            .generate(Split::Unlabeled)?
            .into_iter()
            .map(|(x, _)| x)
            .collect();
        Ok(Self { labeled, unlabeled })
    }
}

fn initial_models(classes: usize, cfg: &TrainerConfig) -> (ToyModel, ToyModel) {
    let student = ToyModel::random(classes, cfg.init_scale, &mut Rng::stream(cfg.seed, INIT_STREAM));
    // teacher starts as an exact copy of the student
    let teacher = student.clone();
    (student, teacher)
}

fn draw_labeled(data: &TrainData, cfg: &TrainerConfig, rng: &mut Rng) -> Vec<(ImageBuffer<u8>, LabelMap)> {
    (0..cfg.labeled_batch)
        .map(|_| data.labeled[rng.below(0, data.labeled.len())].clone())
        .collect()
}

fn draw_pairs(
    data: &TrainData,
    cfg: &TrainerConfig,
    rng: &mut Rng,
) -> Vec<(ImageBuffer<u8>, ImageBuffer<u8>)> {
    let n = data.unlabeled.len();
    (0..cfg.unlabeled_pairs)
        .map(|_| {
            let a = rng.below(0, n);
            let b = rng.below(0, n);
            (data.unlabeled[a].clone(), data.unlabeled[b].clone())
        })
        .collect()
}

fn sgd_step(model: &mut ToyModel, grad: &[f64], lr: f64) {
    for (w, g) in model.weights_mut().iter_mut().zip(grad) {
        *w -= lr * g;
    }
}

/// Trains on `task` with the joint objective. See [`train_with_hook`].
pub fn train(task: &SynthTask, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    train_with_hook(task, cfg, |_, _| {})
}

/// Trains and calls `hook(step, batch)` with every drawn batch before the update.
pub fn train_with_hook(
    task: &SynthTask,
    cfg: &TrainerConfig,
    hook: impl FnMut(usize, &PreparedBatch),
) -> Result<TrainOutcome> {
    let data = TrainData::from_task(task)?;
    train_on(&data, task.classes, cfg, hook)
}

pub fn train_on(
    data: &TrainData,
    classes: usize,
    cfg: &TrainerConfig,
    mut hook: impl FnMut(usize, &PreparedBatch),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::InvalidArgument("no labelled training images".into()));
    }
    if cfg.unlabeled_pairs > 0 && data.unlabeled.is_empty() {
        return Err(Error::InvalidArgument("no unlabelled training images".into()));
    }
    let (mut student, mut teacher) = initial_models(classes, cfg);
    let mut labeled_rng = Rng::stream(cfg.seed, LABELED_STREAM);
    let mut unlabeled_rng = Rng::stream(cfg.seed, UNLABELED_STREAM);
    let mut history = History::default();

    for step in 0..cfg.steps {
        let labeled = draw_labeled(data, cfg, &mut labeled_rng);
        let pairs = draw_pairs(data, cfg, &mut unlabeled_rng);
        let batch = PreparedBatch {
            labeled: prepare_labeled(&labeled, cfg.crop, &mut labeled_rng)?,
            mixed: prepare_mixed(&pairs, &teacher, cfg, &mut unlabeled_rng)?,
        };
        hook(step, &batch);

        let terms = batch_loss(&student, &batch, cfg);
        if !terms.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        history.records.push(StepRecord {
            step,
            sup_loss: terms.sup,
            cons_loss: terms.cons,
        });
        let g = batch_grad(&student, &batch, cfg);
        sgd_step(&mut student, &g, cfg.lr);
        if !student.is_finite() {
            return Err(Error::Diverged { step });
        }
        teacher = ema_update(&teacher, &student, cfg.alpha)?;
    }
    Ok(TrainOutcome {
        student,
        teacher,
        history,
    })
}

/// Plain supervised SGD with the same initialisation and labelled draws as
/// [`train`], and no teacher or unlabelled data.
pub fn train_supervised(task: &SynthTask, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = task.generate(Split::Labeled)?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("no labelled training images".into()));
    }
    let data = TrainData {
        labeled,
        unlabeled: vec![],
    };
    let (mut student, teacher) = initial_models(task.classes, cfg);
    let mut rng = Rng::stream(cfg.seed, LABELED_STREAM);
    let sup_only = TrainerConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let mut history = History::default();
    for step in 0..cfg.steps {
        let labeled = draw_labeled(&data, cfg, &mut rng);
        let batch = PreparedBatch {
            labeled: prepare_labeled(&labeled, cfg.crop, &mut rng)?,
            mixed: vec![],
        };
        let terms = batch_loss(&student, &batch, &sup_only);
        if !terms.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        history.records.push(StepRecord {
            step,
            sup_loss: terms.sup,
            cons_loss: 0.0,
        });
        let g = batch_grad(&student, &batch, &sup_only);
        sgd_step(&mut student, &g, cfg.lr);
    }
    Ok(TrainOutcome {
        student,
        teacher,
        history,
    })
}

/// mIoU, ECE and NLL of `model` over a labelled dataset (pixels pooled).
pub fn evaluate(model: &ToyModel, data: &[(ImageBuffer<u8>, LabelMap)]) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::new(model.classes());
    let mut nll = NllAccumulator::default();
    let mut rel = ReliabilityTable::new(DEFAULT_ECE_BINS)?;
    for (x, y) in data {
        let p = forward(model, x)?;
        cm.accumulate(&p.argmax(), y)?;
        nll.accumulate(&p, y)?;
        rel.accumulate(&p, y)?;
    }
    Ok(MetricReport {
        miou: Some(crate::metrics::miou(&cm)?),
        ece: Some(rel.ece()?),
        nll: Some(nll.value()?),
        ..Default::default()
    })
}
