//! Consistency training against the supervised baseline on noisy test scenes.
//!
//! cargo run --release --example robustness [-- <steps> [lr]]

use spmix::consistency::{SynthTask, TrainerConfig};
use spmix::experiment::compare_with_baseline;

fn main() -> spmix::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let task = SynthTask::default();
    let cfg = TrainerConfig {
        steps,
        lr,
        ..TrainerConfig::default()
    };
    let t = std::time::Instant::now();
    let cmp = compare_with_baseline(&task, &cfg, &[0, 1, 2, 3, 4])?;
    println!("steps {steps}, lr {lr}");
    println!("seed   miou(cons) miou(base)  nll(cons)  nll(base)");
    for (c, b) in cmp.consistency.iter().zip(&cmp.baseline) {
        println!("{:>4} {:>11.4} {:>10.4} {:>10.4} {:>10.4}", c.seed, c.miou, b.miou, c.nll, b.nll);
    }
    let (c, b) = (cmp.consistency_mean, cmp.baseline_mean);
    println!("mean {:>11.4} {:>10.4} {:>10.4} {:>10.4}", c.miou, b.miou, c.nll, b.nll);
    println!("consistency at least as robust: {}", cmp.consistency_wins());
    eprintln!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
