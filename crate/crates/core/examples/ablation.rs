//! Superpixel-count and mixing-proportion sweeps. Each row is one training run
//! on the same data and seed.
//!
//! cargo run --release --example ablation [-- <steps>]

use spmix::consistency::{SynthTask, TrainerConfig};
use spmix::experiment::{count_sweep, format_table, proportion_sweep};

fn main() -> spmix::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let task = SynthTask::default();
    let cfg = TrainerConfig { steps, lr: 0.5, ..TrainerConfig::default() };

    println!("count sweep (p = {})", cfg.mix.proportion);
    print!("{}", format_table(&count_sweep(&task, &cfg)?));
    println!();
    println!("proportion sweep (n = {})", cfg.mix.n_superpixels);
    print!("{}", format_table(&proportion_sweep(&task, &cfg)?));
    Ok(())
}
