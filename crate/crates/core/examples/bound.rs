//! Exact evaluation of the risk bound on random finite distributions:
//! every term of the bound and every step of its proof, printed for one
//! instance, then a pass count over many.
//!
//! cargo run --release --example bound [-- <instances>]

use spmix::bound::{AbsLoss, BoundInstance};
use spmix::Rng;

fn main() -> spmix::Result<()> {
    let instances = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let loss = AbsLoss::default();

    let one = BoundInstance::random(&mut Rng::seed(0), 12, 3)?.verify(&loss)?;
    println!("training loss   {:.6}", one.lhs);
    println!("true risk       {:.6}", one.true_risk);
    println!("|Pmix - P|_1    {:.6}", one.l1_mix);
    println!("|Pemp - P|_1    {:.6}", one.l1_emp);
    println!("teacher risk    {:.6}", one.teacher_risk);
    println!("sup loss M      {:.6}", one.m);
    println!("bound           {:.6}", one.rhs);
    println!();
    for s in &one.steps {
        println!("{:<32} {:>12.6} <= {:>12.6}  {}", s.name, s.lhs, s.rhs, if s.holds { "ok" } else { "FAIL" });
    }

    let mut rng = Rng::seed(1);
    let mut held = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..instances {
        let r = BoundInstance::random(&mut rng, 20, 3)?.evaluate(&loss);
        held += r.holds as usize;
        tightest = tightest.min(r.rhs - r.lhs);
    }
    println!();
    println!("{held}/{instances} instances hold, smallest gap {tightest:.3e}");
    Ok(())
}
