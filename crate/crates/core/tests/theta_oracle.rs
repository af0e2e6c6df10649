mod common;

use common::pm_theta_quadrature;
use noutput::analytical::design_analytical;
use noutput::baselines::PmParams;
use noutput::estimation::{theta_continuous, theta_discrete, theta_discrete_analytical};
use noutput::PrivacyBudget;

const EPS_GRID: [f64; 5] = [0.3, 0.9, 1.8, 3.0, 5.0];

fn check(pm: &PmParams, d: usize, d_tilde: usize) -> bool {
    let theta = theta_continuous(pm, d, d_tilde).unwrap();
    let oracle = pm_theta_quadrature(pm, d, d_tilde);
    for (j, row) in oracle.iter().enumerate() {
        for (i, &want) in row.iter().enumerate() {
            let got = theta.get(j, i);
            assert!(
                (got - want).abs() <= 1e-6,
                "eps {} d {d} d~ {d_tilde}: theta[{j}][{i}] = {got}, quadrature {want}",
                pm.budget.epsilon()
            );
        }
    }
    let (lo, hi) = pm.domain();
    pm.band_width() >= (hi - lo) / d_tilde as f64
}

#[test]
fn continuous_matrix_matches_quadrature_in_both_width_cases() {
    let mut wide = 0;
    let mut narrow = 0;
    for eps in EPS_GRID {
        let budget = PrivacyBudget::new(eps).unwrap();
        for pm in [PmParams::standard(budget), PmParams::sub(budget)] {
            for (d, d_tilde) in [(16, 16), (16, 3), (8, 40), (5, 7)] {
                if check(&pm, d, d_tilde) {
                    wide += 1;
                } else {
                    narrow += 1;
                }
            }
        }
    }
    assert!(wide > 0 && narrow > 0, "wide {wide} narrow {narrow}");
}

#[test]
fn high_density_band_favours_the_middle_output_bin() {
    let pm = PmParams::standard(PrivacyBudget::new(4f64.ln()).unwrap());
    let theta = theta_continuous(&pm, 2, 3).unwrap();
    let (lo, hi) = pm.domain();
    assert!((lo + 3.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    for i in 0..2 {
        assert!(theta.get(1, i) > theta.get(2 * (1 - i), i));
    }
}

#[test]
fn discrete_matrix_closed_form_agrees_with_trapezoid() {
    for eps in [0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
        let design = design_analytical(PrivacyBudget::new(eps).unwrap()).unwrap().design().clone();
        for d in [1, 7, 16, 64] {
            let a = theta_discrete(&design, d).unwrap();
            let b = theta_discrete_analytical(&design, d).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-9, "eps {eps} d {d}");
            assert!(a.stochastic_error() <= 1e-9);
        }
    }
}
