//! Out-of-distribution detection with the max-class-probability score. Test
//! scenes get a square of a colour halfway between two known classes; its
//! pixels are the OOD positives.
//!
//! cargo run --release --example ood

use spmix::consistency::{forward, train, Split, SynthTask, TrainerConfig};
use spmix::metrics::{aupr, fpr_at_95_tpr, ood_scores, roc_auc, ScoredSamples};
use spmix::Rng;

const PATCH_RGB: [u8; 3] = [122, 72, 122];

fn main() -> spmix::Result<()> {
    let task = SynthTask::default();
    let cfg = TrainerConfig { steps: 400, lr: 0.5, ..TrainerConfig::default() };
    let model = train(&task, &cfg)?.student;

    let mut rng = Rng::seed(99);
    let mut samples = ScoredSamples::default();
    for (mut x, _) in task.generate(Split::Test)? {
        let (h, w) = x.dims();
        let side = h.min(w) / 4;
        let (top, left) = (rng.below(0, h - side), rng.below(0, w - side));
        let mut is_ood = vec![false; h * w];
        for r in top..top + side {
            for c in left..left + side {
                for (ch, &v) in PATCH_RGB.iter().enumerate() {
                    x.set(r, c, ch, v);
                }
                is_ood[r * w + c] = true;
            }
        }
        samples.extend(&ood_scores(&forward(&model, &x)?), &is_ood)?;
    }
    let positives = samples.is_ood().iter().filter(|&&o| o).count();
    println!("{} pixels, {} OOD", samples.len(), positives);
    println!("AUROC  {:.4}", roc_auc(&samples)?);
    println!("AUPR   {:.4}", aupr(&samples)?);
    println!("FPR95  {:.4}", fpr_at_95_tpr(&samples)?);
    Ok(())
}
