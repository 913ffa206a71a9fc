//! The `spmix` command line.
//!
//! Machine-readable results go to standard output, diagnostics to standard
//! error. Exit status is 0 on success, 1 when `verify-bound` finds a violated
//! inequality and 2 on any error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bound::{AbsLoss, BoundInstance};
use crate::consistency::{evaluate, scene, train, PseudoLabelMode, Split, SynthTask, TrainerConfig};
use crate::error::{Error, Result};
use crate::imgcore::{LabelMap, ProbMap};
use crate::io;
use crate::metrics::{
    aupr, fpr_at_95_tpr, miou, ood_scores, roc_auc, ConfusionMatrix, MetricReport, NllAccumulator,
    ReliabilityTable, ScoredSamples, DEFAULT_ECE_BINS,
};
use crate::mixer::{make_mix, MixConfig};
use crate::rng::Rng;
use crate::superpixel::{compute_superpixels, Algorithm};

#[derive(Debug, Parser)]
#[command(name = "spmix", version, about = "Superpixel mixing, consistency training and robustness metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute superpixels of an RGB PNG and write them as a 16-bit PNG.
    Superpixels(SuperpixelsArgs),
    /// Superpixel-mix two same-sized images.
    Mix(MixArgs),
    /// Segmentation metrics over a corpus of label and probability maps.
    Eval(EvalArgs),
    /// OOD ranking metrics using 1 - max class probability as the score.
    OodEval(OodEvalArgs),
    /// Train the toy model on synthetic scenes.
    TrainToy(TrainToyArgs),
    /// Check the training-loss risk bound on random finite instances.
    VerifyBound(VerifyBoundArgs),
    /// Write a synthetic scene corpus (images and labels).
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
pub struct SuperpixelsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = Algorithm::Watershed)]
    pub algo: Algorithm,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub proportion: f64,
    #[arg(long, default_value_t = Algorithm::Watershed)]
    pub algo: Algorithm,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted label PNGs.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth label PNGs; 255 is ignored.
    #[arg(long)]
    pub gt: PathBuf,
    /// Probability maps (`.pmap`).
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct OodEvalArgs {
    #[arg(long)]
    pub probs: PathBuf,
    /// Grayscale PNGs; non-zero marks an OOD pixel.
    #[arg(long)]
    pub ood_mask: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// TOML, or JSON when the extension is `.json`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "student.tmdl")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub teacher_checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "history.csv")]
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyBoundArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub max_support: usize,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Standard deviation of the added pixel noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flat training configuration file. Keys mirror the trainer and mixer
/// settings; the synthetic task keys carry a `task_` prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub lambda: f64,
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub labeled_batch: usize,
    pub unlabeled_pairs: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub init_scale: f64,
    pub pseudo_label_mode: PseudoLabelMode,
    pub n_superpixels: usize,
    pub proportion: f64,
    pub algo: Algorithm,
    pub task_height: usize,
    pub task_width: usize,
    pub task_classes: usize,
    pub task_labeled: usize,
    pub task_unlabeled: usize,
    pub task_test: usize,
    pub task_noise_labeled: f64,
    pub task_noise_unlabeled: f64,
    pub task_noise_test: f64,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self::from_parts(&TrainerConfig::default(), &SynthTask::default())
    }
}

impl TrainFile {
    pub fn from_parts(cfg: &TrainerConfig, task: &SynthTask) -> Self {
        Self {
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            lr: cfg.lr,
            steps: cfg.steps,
            seed: cfg.seed,
            labeled_batch: cfg.labeled_batch,
            unlabeled_pairs: cfg.unlabeled_pairs,
            crop_height: cfg.crop.0,
            crop_width: cfg.crop.1,
            init_scale: cfg.init_scale,
            pseudo_label_mode: cfg.pseudo_label_mode,
            n_superpixels: cfg.mix.n_superpixels,
            proportion: cfg.mix.proportion,
            algo: cfg.mix.algo,
            task_height: task.height,
            task_width: task.width,
            task_classes: task.classes,
            task_labeled: task.n_labeled,
            task_unlabeled: task.n_unlabeled,
            task_test: task.n_test,
            task_noise_labeled: task.noise_labeled,
            task_noise_unlabeled: task.noise_unlabeled,
            task_noise_test: task.noise_test,
        }
    }

    /// Trainer and task; both share `seed`.
    pub fn split(&self) -> (TrainerConfig, SynthTask) {
        let cfg = TrainerConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            lr: self.lr,
            steps: self.steps,
            mix: MixConfig {
                n_superpixels: self.n_superpixels,
                proportion: self.proportion,
                algo: self.algo,
                seed: self.seed,
            },
            pseudo_label_mode: self.pseudo_label_mode,
            seed: self.seed,
            labeled_batch: self.labeled_batch,
            unlabeled_pairs: self.unlabeled_pairs,
            crop: (self.crop_height, self.crop_width),
            init_scale: self.init_scale,
        };
        let task = SynthTask {
            height: self.task_height,
            width: self.task_width,
            classes: self.task_classes,
            n_labeled: self.task_labeled,
            n_unlabeled: self.task_unlabeled,
            n_test: self.task_test,
            noise_labeled: self.task_noise_labeled,
            noise_unlabeled: self.task_noise_unlabeled,
            noise_test: self.task_noise_test,
            seed: self.seed,
        };
        (cfg, task)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if is_json {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }
}

/// Parses `args` (program name first), runs the command and maps the outcome
/// to an exit status.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli.command, &mut out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one command, writing its machine-readable output to `out`.
///
/// `Ok(false)` means the command ran but its check failed.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Superpixels(a) => superpixels(a, out),
        Command::Mix(a) => mix(a, out),
        Command::Eval(a) => eval(a, out),
        Command::OodEval(a) => ood_eval(a, out),
        Command::TrainToy(a) => train_toy(a, out),
        Command::VerifyBound(a) => verify_bound(a, out),
        Command::GenSynth(a) => gen_synth(a, out),
    }
    .inspect(|_| {
        let _ = out.flush();
    })
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn superpixels(a: &SuperpixelsArgs, out: &mut dyn Write) -> Result<bool> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let img = io::read_rgb(&a.input)?;
    let sp = compute_superpixels(&img, a.algo, a.n)?;
    io::write_superpixels(&a.output, &sp)?;
    emit(
        out,
        &format!(
            "{{\"algo\": \"{}\", \"requested_n\": {}, \"actual_n\": {}}}",
            a.algo,
            a.n,
            sp.n()
        ),
    )?;
    Ok(true)
}

fn mix(a: &MixArgs, out: &mut dyn Write) -> Result<bool> {
    let cfg = MixConfig {
        n_superpixels: a.n,
        proportion: a.proportion,
        algo: a.algo,
        seed: a.seed,
    };
    cfg.validate()?;
    let x1 = io::read_rgb(&a.a)?;
    let x2 = io::read_rgb(&a.b)?;
    let (mixed, mask) = make_mix(&x1, &x2, &cfg, &mut Rng::seed(a.seed))?;
    io::write_rgb(&a.out, &mixed)?;
    if let Some(p) = &a.mask_out {
        io::write_mask(p, &mask)?;
    }
    emit(
        out,
        &format!(
            "{{\"donor_pixels\": {}, \"area_fraction\": {:.6}}}",
            mask.count_ones(),
            mask.area_fraction()
        ),
    )?;
    Ok(true)
}

/// Files of `dir` paired by stem with the ground-truth files.
fn paired(gt: &[PathBuf], dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    gt.iter()
        .map(|g| {
            let p = dir.join(format!("{}.{ext}", io::stem(g)));
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::InvalidInput(format!(
                    "{} has no counterpart {}",
                    g.display(),
                    p.display()
                )))
            }
        })
        .collect()
}

fn corpus(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let files = io::list_files(dir, ext)?;
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(files)
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<bool> {
    if a.classes == 0 {
        return Err(Error::InvalidArgument("--classes must be at least 1".into()));
    }
    if a.pred.is_none() && a.probs.is_none() {
        return Err(Error::InvalidArgument("give --pred, --probs or both".into()));
    }
    let gt_files = corpus(&a.gt, "png")?;
    let pred_files = a.pred.as_deref().map(|d| paired(&gt_files, d, "png")).transpose()?;
    let prob_files = a.probs.as_deref().map(|d| paired(&gt_files, d, "pmap")).transpose()?;

    let mut cm = ConfusionMatrix::new(a.classes);
    let mut nll = NllAccumulator::default();
    let mut rel = ReliabilityTable::new(a.bins)?;
    for (i, g) in gt_files.iter().enumerate() {
        let gt = io::read_labels(g)?;
        gt.check_classes(a.classes)?;
        if let Some(files) = &pred_files {
            let pred: LabelMap = io::read_labels(&files[i])?;
            cm.accumulate(&pred, &gt)?;
        }
        if let Some(files) = &prob_files {
            let p: ProbMap = io::read_probmap(&files[i])?;
            if p.classes() != a.classes {
                return Err(Error::shape(
                    format!("{} classes", a.classes),
                    format!("{} classes in {}", p.classes(), files[i].display()),
                ));
            }
            nll.accumulate(&p, &gt)?;
            rel.accumulate(&p, &gt)?;
        }
    }
    let mut report = MetricReport::default();
    if pred_files.is_some() {
        report.miou = Some(miou(&cm)?);
    }
    if prob_files.is_some() {
        report.ece = Some(rel.ece()?);
        report.nll = Some(nll.value()?);
    }
    emit(out, &report.to_json())?;
    Ok(true)
}

fn ood_eval(a: &OodEvalArgs, out: &mut dyn Write) -> Result<bool> {
    let mask_files = corpus(&a.ood_mask, "png")?;
    let prob_files = paired(&mask_files, &a.probs, "pmap")?;
    let mut samples = ScoredSamples::default();
    for (m, p) in mask_files.iter().zip(&prob_files) {
        let mask = io::read_mask(m)?;
        let probs = io::read_probmap(p)?;
        if mask.dims() != probs.dims() {
            return Err(Error::shape(
                format!("{:?} from {}", mask.dims(), m.display()),
                format!("{:?} from {}", probs.dims(), p.display()),
            ));
        }
        let is_ood: Vec<bool> = mask.bits().iter().map(|&b| b != 0).collect();
        samples.extend(&ood_scores(&probs), &is_ood)?;
    }
    let report = MetricReport {
        auc: Some(roc_auc(&samples)?),
        aupr: Some(aupr(&samples)?),
        fpr95: Some(fpr_at_95_tpr(&samples)?),
        ..Default::default()
    };
    emit(out, &report.to_json())?;
    Ok(true)
}

fn train_toy(a: &TrainToyArgs, out: &mut dyn Write) -> Result<bool> {
    let (cfg, task) = TrainFile::load(&a.config)?.split();
    cfg.validate()?;
    task.validate()?;
    let outcome = train(&task, &cfg)?;
    io::write_checkpoint(&a.checkpoint, &outcome.student)?;
    if let Some(p) = &a.teacher_checkpoint {
        io::write_checkpoint(p, &outcome.teacher)?;
    }
    io::write_text(&a.history, &outcome.history.to_csv())?;
    let test = task.generate(Split::Test)?;
    let report = if test.is_empty() {
        MetricReport::default()
    } else {
        evaluate(&outcome.student, &test)?
    };
    emit(out, &report.to_json())?;
    Ok(true)
}

#[derive(Serialize)]
struct BoundSummary {
    instances: usize,
    passed: usize,
    all_hold: bool,
}

fn verify_bound(a: &VerifyBoundArgs, out: &mut dyn Write) -> Result<bool> {
    if a.dim == 0 || a.max_support == 0 {
        return Err(Error::InvalidArgument("--dim and --max-support must be at least 1".into()));
    }
    let mut rng = Rng::seed(a.seed);
    let mut passed = 0;
    for _ in 0..a.instances {
        let report = BoundInstance::random(&mut rng, a.max_support, a.dim)?.evaluate(&AbsLoss::default());
        passed += report.holds as usize;
        emit(out, &serde_json::to_string(&report).expect("report serialises"))?;
    }
    let summary = BoundSummary {
        instances: a.instances,
        passed,
        all_hold: passed == a.instances,
    };
    emit(out, &serde_json::to_string(&summary).expect("summary serialises"))?;
    Ok(summary.all_hold)
}

fn gen_synth(a: &GenSynthArgs, out: &mut dyn Write) -> Result<bool> {
    let task = SynthTask {
        height: a.height,
        width: a.width,
        classes: a.classes,
        noise_test: a.noise,
        ..SynthTask::default()
    };
    task.validate()?;
    let images = a.out.join("images");
    let labels = a.out.join("labels");
    io::create_dir(&images)?;
    io::create_dir(&labels)?;
    let mut rng = Rng::seed(a.seed);
    let digits = a.count.max(1).to_string().len().max(4);
    for i in 0..a.count {
        let (x, y) = scene(&mut rng, a.height, a.width, a.classes, a.noise)?;
        let name = format!("{i:0digits$}.png");
        io::write_rgb(images.join(&name), &x)?;
        io::write_labels(labels.join(&name), &y)?;
    }
    emit(out, &format!("{{\"count\": {}}}", a.count))?;
    Ok(true)
}
