//! Teacher-student consistency training on synthetic scenes. Prints the
//! smoothed loss curve and the test metrics of the student and the teacher,
//! and optionally writes both checkpoints and the loss history.
//!
//! cargo run --release --example teacher_student [-- <steps> [out_dir]]

use spmix::consistency::{evaluate, train_with_hook, PseudoLabelMode, Split, SynthTask, TrainerConfig};
use spmix::io;

fn main() -> spmix::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let out = args.next();

    let task = SynthTask::default();
    let cfg = TrainerConfig { steps, pseudo_label_mode: PseudoLabelMode::Hard, ..TrainerConfig::default() };
    let mut mixed_pixels = 0usize;
    let outcome = train_with_hook(&task, &cfg, |_, batch| {
        mixed_pixels += batch.mixed.iter().map(|m| m.mask.count_ones()).sum::<usize>();
    })?;

    let smooth = outcome.history.smoothed_total(cfg.lambda, 50);
    println!("step   smoothed loss");
    for (i, v) in smooth.iter().enumerate().step_by((smooth.len() / 10).max(1)) {
        println!("{:>4} {:>15.5}", i + 50, v);
    }
    println!("donor pixels seen by the student: {mixed_pixels}");

    let test = task.generate(Split::Test)?;
    println!("student {}", evaluate(&outcome.student, &test)?.to_json());
    println!("teacher {}", evaluate(&outcome.teacher, &test)?.to_json());

    if let Some(dir) = out {
        let dir = std::path::Path::new(&dir);
        io::create_dir(dir)?;
        io::write_checkpoint(dir.join("student.tmdl"), &outcome.student)?;
        io::write_checkpoint(dir.join("teacher.tmdl"), &outcome.teacher)?;
        io::write_text(dir.join("history.csv"), &outcome.history.to_csv())?;
    }
    Ok(())
}
