//! Segmentation and calibration metrics for a briefly trained model: mIoU,
//! NLL, ECE and the reliability table behind it.
//!
//! cargo run --release --example metrics

use spmix::consistency::{forward, train, Split, SynthTask, TrainerConfig};
use spmix::metrics::{confusion, miou, ConfusionMatrix, NllAccumulator, ReliabilityTable};

fn main() -> spmix::Result<()> {
    let task = SynthTask::default();
    let cfg = TrainerConfig { steps: 300, lr: 0.5, ..TrainerConfig::default() };
    let model = train(&task, &cfg)?.student;

    let mut cm = ConfusionMatrix::new(task.classes);
    let mut nll = NllAccumulator::default();
    let mut table = ReliabilityTable::new(10)?;
    for (x, y) in task.generate(Split::Test)? {
        let p = forward(&model, &x)?;
        cm.accumulate(&p.argmax(), &y)?;
        nll.accumulate(&p, &y)?;
        table.accumulate(&p, &y)?;
    }

    println!("per-class IoU: {:?}", cm.class_iou().iter().map(|v| v.map(|v| (v * 1e4).round() / 1e4)).collect::<Vec<_>>());
    println!("mIoU {:.4}  NLL {:.4}  ECE {:.4}", miou(&cm)?, nll.value()?, table.ece()?);
    println!();
    println!("        bin  count  accuracy  confidence");
    for bin in &table.bins {
        if bin.count > 0 {
            let range = format!("({:.1},{:.1}]", bin.lower, bin.upper);
            println!("{range:>11} {:>6} {:>9.4} {:>11.4}", bin.count, bin.accuracy(), bin.mean_confidence());
        }
    }

    let (x, y) = &task.generate(Split::Test)?[0];
    let p = forward(&model, x)?;
    println!();
    println!("first test image: mIoU {:.4}", miou(&confusion(&p.argmax(), y, task.classes)?)?);
    Ok(())
}
