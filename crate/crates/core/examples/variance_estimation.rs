//! Population variance read off the EM histogram.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noutput::analytical::design_analytical;
use noutput::estimation::{em_estimate, theta_discrete, variance_from_histogram, EmConfig, ReportBatch};
use noutput::harness::{synthetic, SyntheticDist};
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs = synthetic(SyntheticDist::Uniform, 100_000, &mut rng)?;
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let truth = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    println!("true variance {truth:.5}");
    for eps in [1.0, 2.0, 4.0] {
        let design = design_analytical(PrivacyBudget::new(eps)?)?.design().clone();
        let theta = theta_discrete(&design, 64)?;
        let batch = ReportBatch::from_design("analytical", &design, &xs, &mut rng)?;
        let est = em_estimate(&batch.binned_counts(theta.rows())?, &theta, &EmConfig::default())?;
        println!("eps={eps:<3} estimate {:.5}", variance_from_histogram(&est.histogram));
    }
    Ok(())
}
