use std::time::Instant;

use clap::Args;
use sumo::model::verify::verify_all;
use sumo::{Error, Result};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let start = Instant::now();
    let reports = verify_all(a.seed)?;
    println!("{:<28} {:>14} {:>10}  result", "check", "max rel err", "tolerance");
    let mut failed = 0;
    for r in &reports {
        let ok = r.passed();
        failed += usize::from(!ok);
        println!(
            "{:<28} {:>14.3e} {:>10.0e}  {}",
            r.name,
            r.report.max_rel_error(),
            r.report.tolerance,
            if ok { "PASS" } else { "FAIL" }
        );
        for g in r.report.groups.iter().filter(|g| g.max_rel_error >= r.report.tolerance) {
            println!("    {:<24} {:>14.3e} at index {}", g.name, g.max_rel_error, g.worst_index);
        }
    }
    println!("{} checks, {failed} failed, {:.1} s", reports.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
