//! `canopyforge losscheck`: finite-difference verification table for every
//! loss kernel. Exits 1 when any kernel exceeds the error threshold.

use clap::Args;

use canopyforge::losses::gradcheck::LOSSCHECK_THRESHOLD;
use canopyforge::losses::standard_kernel_checks;
use canopyforge::Result;

#[derive(Args)]
pub struct LosscheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
}

pub fn run(args: LosscheckArgs, seed: u64) -> Result<u8> {
    let checks = standard_kernel_checks(args.eps, seed)?;
    println!("{:<24} {:>14}  status", "kernel", "max_rel_error");
    let mut failed = false;
    for check in &checks {
        let ok = check.max_rel_error < LOSSCHECK_THRESHOLD;
        failed |= !ok;
        println!(
            "{:<24} {:>14.3e}  {}",
            check.name,
            check.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!(
        "threshold {LOSSCHECK_THRESHOLD:.0e} (eps {:.0e}, seed {seed})",
        args.eps
    );
    Ok(if failed { 1 } else { 0 })
}
