//! Simulated worst-case mean-estimation RMSE against the theoretical
//! `sqrt(max Var / m)`.

use noutput::analytical::design_analytical;
use noutput::baselines::{duchi_design, PmParams};
use noutput::metrics::{worst_case_grid, worst_case_rmse, MeanMechanism};
use noutput::PrivacyBudget;

fn report(name: &str, mech: &dyn MeanMechanism, theory: f64, m: usize) -> noutput::Result<()> {
    let grid = worst_case_grid(mech, 21);
    let out = worst_case_rmse(mech, m, 200, &grid, 11)?;
    println!(
        "  {name:<10} simulated {:.5} at x={:+.3}  theory {:.5}",
        out.rmse,
        out.argmax,
        (theory / m as f64).sqrt()
    );
    Ok(())
}

fn main() -> noutput::Result<()> {
    let m = 10_000;
    for eps in [1.0, 3.0] {
        let budget = PrivacyBudget::new(eps)?;
        println!("eps={eps}");
        let duchi = duchi_design(budget);
        report("duchi", &duchi, duchi.worst_case_variance(), m)?;
        let ours = design_analytical(budget)?.design().clone();
        report("analytical", &ours, ours.worst_case_variance(), m)?;
        let pm = PmParams::standard(budget);
        report("pm", &pm, pm.dense_worst_case_variance(10_000), m)?;
    }
    Ok(())
}
