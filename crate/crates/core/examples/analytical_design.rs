//! Closed-form designs: the selected output count and its worst-case
//! variance across budgets.

use noutput::analytical::{bits_required, design_analytical};
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    println!("{:>5} {:>3} {:>4} {:>12}", "eps", "N", "bits", "worst var");
    for eps in [0.25, 0.5, 0.7, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0] {
        let budget = PrivacyBudget::new(eps)?;
        let sel = design_analytical(budget)?;
        println!(
            "{eps:>5} {:>3} {:>4} {:>12.6}",
            sel.n_outputs(),
            bits_required(budget)?,
            sel.selected.worst_case_variance
        );
    }
    let sel = design_analytical(PrivacyBudget::new(3.0)?)?;
    println!("\neps=3 outputs: {:?}", sel.design().outputs());
    println!("eps=3 endpoints: {:?}", sel.design().endpoints());
    Ok(())
}
