//! Multi-run experiments on the synthetic task: consistency training against
//! the supervised baseline, and the superpixel-count and proportion sweeps.

use serde::Serialize;

use crate::consistency::{evaluate, train_on, train_supervised, Split, SynthTask, TrainData, TrainerConfig};
use crate::error::Result;
use crate::metrics::MetricReport;

/// Superpixel counts of the count sweep.
pub const ABLATION_COUNTS: [usize; 6] = [20, 50, 100, 200, 500, 1000];
/// Mixing proportions of the proportion sweep.
pub const ABLATION_PROPORTIONS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub miou: f64,
    pub nll: f64,
    pub ece: f64,
}

impl RunMetrics {
    fn from_report(seed: u64, r: &MetricReport) -> Self {
        Self {
            seed,
            miou: r.miou.unwrap_or(f64::NAN),
            nll: r.nll.unwrap_or(f64::NAN),
            ece: r.ece.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub miou: f64,
    pub nll: f64,
    pub ece: f64,
}

fn mean_of(runs: &[RunMetrics]) -> MeanMetrics {
    let n = runs.len() as f64;
    MeanMetrics {
        miou: runs.iter().map(|r| r.miou).sum::<f64>() / n,
        nll: runs.iter().map(|r| r.nll).sum::<f64>() / n,
        ece: runs.iter().map(|r| r.ece).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub consistency: Vec<RunMetrics>,
    pub baseline: Vec<RunMetrics>,
    pub consistency_mean: MeanMetrics,
    pub baseline_mean: MeanMetrics,
}

impl Comparison {
    /// Mean mIoU at least the baseline's and mean NLL at most the baseline's.
    pub fn consistency_wins(&self) -> bool {
        self.consistency_mean.miou >= self.baseline_mean.miou
            && self.consistency_mean.nll <= self.baseline_mean.nll
    }
}

/// Trains with `cfg` and with the supervised baseline for every seed, and
/// evaluates both students on the task's (noisy) test split.
///
/// The seed sets both the scene generator and the trainer, so each seed is
/// an independent draw of data and initialisation shared by the two arms.
pub fn compare_with_baseline(task: &SynthTask, cfg: &TrainerConfig, seeds: &[u64]) -> Result<Comparison> {
    let mut consistency = Vec::with_capacity(seeds.len());
    let mut baseline = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let task = SynthTask { seed, ..task.clone() };
        let cfg = TrainerConfig { seed, ..cfg.clone() };
        let test = task.generate(Split::Test)?;
        let data = TrainData::from_task(&task)?;
        let ours = train_on(&data, task.classes, &cfg, |_, _| {})?;
        consistency.push(RunMetrics::from_report(seed, &evaluate(&ours.student, &test)?));
        let base = train_supervised(&task, &cfg)?;
        baseline.push(RunMetrics::from_report(seed, &evaluate(&base.student, &test)?));
    }
    Ok(Comparison {
        consistency_mean: mean_of(&consistency),
        baseline_mean: mean_of(&baseline),
        consistency,
        baseline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub n_superpixels: usize,
    pub proportion: f64,
    pub miou: f64,
    pub nll: f64,
    pub ece: f64,
}

/// One training run per setting, all on the same data and seed.
pub fn sweep(task: &SynthTask, cfg: &TrainerConfig, settings: &[(usize, f64)]) -> Result<Vec<AblationRow>> {
    let data = TrainData::from_task(task)?;
    let test = task.generate(Split::Test)?;
    settings
        .iter()
        .map(|&(n, proportion)| {
            let mut run = cfg.clone();
            run.mix.n_superpixels = n;
            run.mix.proportion = proportion;
            let out = train_on(&data, task.classes, &run, |_, _| {})?;
            let r = RunMetrics::from_report(cfg.seed, &evaluate(&out.student, &test)?);
            Ok(AblationRow {
                n_superpixels: n,
                proportion,
                miou: r.miou,
                nll: r.nll,
                ece: r.ece,
            })
        })
        .collect()
}

/// Sweep over [`ABLATION_COUNTS`] at the configured proportion.
pub fn count_sweep(task: &SynthTask, cfg: &TrainerConfig) -> Result<Vec<AblationRow>> {
    let settings: Vec<_> = ABLATION_COUNTS.iter().map(|&n| (n, cfg.mix.proportion)).collect();
    sweep(task, cfg, &settings)
}

/// Sweep over [`ABLATION_PROPORTIONS`] at the configured superpixel count.
pub fn proportion_sweep(task: &SynthTask, cfg: &TrainerConfig) -> Result<Vec<AblationRow>> {
    let settings: Vec<_> = ABLATION_PROPORTIONS
        .iter()
        .map(|&p| (cfg.mix.n_superpixels, p))
        .collect();
    sweep(task, cfg, &settings)
}

/// Fixed-width text table of sweep rows.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:>6} {:>6} {:>8} {:>8} {:>8}\n", "n", "p", "miou", "nll", "ece");
    for r in rows {
        out.push_str(&format!(
            "{:>6} {:>6.2} {:>8.4} {:>8.4} {:>8.4}\n",
            r.n_superpixels, r.proportion, r.miou, r.nll, r.ece
        ));
    }
    out
}
