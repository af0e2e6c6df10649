//! EM histogram estimation from discrete and continuous reports, scored by
//! Wasserstein distance against the true histogram.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use noutput::analytical::design_analytical;
use noutput::baselines::{CategoricalParams, CategoricalScheme, PmParams};
use noutput::estimation::{em_estimate, theta_continuous, theta_discrete, EmConfig, Histogram, ReportBatch};
use noutput::harness::{synthetic, SyntheticDist};
use noutput::metrics::wasserstein;
use noutput::PrivacyBudget;

fn main() -> noutput::Result<()> {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs = synthetic(SyntheticDist::bimodal(), 50_000, &mut rng)?;
    let truth = Histogram::from_values(&xs, d)?;
    let em = EmConfig::default();
    for eps in [1.0, 2.0, 4.0] {
        let budget = PrivacyBudget::new(eps)?;

        let design = design_analytical(budget)?.design().clone();
        let theta = theta_discrete(&design, d)?;
        let batch = ReportBatch::from_design("analytical", &design, &xs, &mut rng)?;
        let ours = em_estimate(&batch.binned_counts(theta.rows())?, &theta, &em)?;

        let pm = PmParams::standard(budget);
        let theta = theta_continuous(&pm, d, d)?;
        let batch = ReportBatch::from_pm("pm", &pm, &xs, &mut rng)?;
        let pm_est = em_estimate(&batch.binned_counts(theta.rows())?, &theta, &em)?;

        let oue = CategoricalParams::new(budget, CategoricalScheme::Oue, d)?;
        let reports = xs.iter().map(|&x| oue.perturb(x, &mut rng)).collect::<noutput::Result<Vec<_>>>()?;
        let oue_est = oue.estimate_histogram(&reports)?;

        println!(
            "eps={eps:<3} W1 analytical {:.4} ({} iters)  pm {:.4}  oue {:.4}",
            wasserstein(&ours.histogram, &truth)?,
            ours.iterations,
            wasserstein(&pm_est.histogram, &truth)?,
            wasserstein(&oue_est, &truth)?
        );
    }
    Ok(())
}
