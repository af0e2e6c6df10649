//! Mean estimation on synthetic data with the analytical design and PM.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noutput::analytical::design_analytical;
use noutput::baselines::PmParams;
use noutput::estimation::{mean_estimate, ReportBatch};
use noutput::harness::{synthetic, SyntheticDist};
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = synthetic(SyntheticDist::TruncatedGaussian { mu: 0.2, sigma: 0.4 }, 100_000, &mut rng)?;
    let truth = xs.iter().sum::<f64>() / xs.len() as f64;
    println!("true mean {truth:.5}");
    for eps in [0.5, 1.0, 2.0, 4.0] {
        let budget = PrivacyBudget::new(eps)?;
        let design = design_analytical(budget)?.design().clone();
        let ours = mean_estimate(&ReportBatch::from_design("analytical", &design, &xs, &mut rng)?)?;
        let pm = mean_estimate(&ReportBatch::from_pm("pm", &PmParams::standard(budget), &xs, &mut rng)?)?;
        println!("eps={eps:<3} analytical {ours:+.5}  pm {pm:+.5}");
    }
    Ok(())
}
