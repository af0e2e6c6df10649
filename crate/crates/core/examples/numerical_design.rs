//! Solves the worst-case and average objectives for a few output counts
//! and compares them with the closed-form design.

use noutput::analytical::design_for_n;
use noutput::numerical::{solve, Objective, SolverConfig};
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    let budget = PrivacyBudget::new(std::env::args().nth(1).map_or(1.0, |s| s.parse().unwrap_or(1.0)))?;
    for n in 2..=6 {
        let worst = solve(budget, n, &SolverConfig::with_objective(Objective::Worst))?;
        let avg = solve(budget, n, &SolverConfig::with_objective(Objective::Avg))?;
        let closed = design_for_n(budget, n)?.map(|c| c.worst_case_variance);
        println!(
            "N={n} worst={:.6} avg design: worst={:.6} mean var={:.6} analytical={}",
            worst.worst_case_variance(),
            avg.worst_case_variance(),
            avg.average_variance(),
            closed.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    Ok(())
}
