//! The two-output mechanism is Duchi et al.'s: outputs `±(e^eps+1)/(e^eps-1)`
//! and worst-case variance at `x = 0`.

use noutput::analytical::design_for_n;
use noutput::baselines::duchi_design;
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    for eps in [0.5, 1.0, 2.0, 4.0] {
        let budget = PrivacyBudget::new(eps)?;
        let duchi = duchi_design(budget);
        let two = design_for_n(budget, 2)?.expect("N = 2 always exists").design;
        let worst = two.worst_case();
        println!(
            "eps={eps:<4} a={:.6} duchi a={:.6} worst var={:.6} at x={:+.3}",
            two.outputs()[1],
            duchi.outputs()[1],
            worst.variance,
            worst.argmax
        );
    }
    Ok(())
}
