//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use noutput::baselines::PmParams;
use noutput::estimation::uniform_edges;

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// `Pr[output bin j | input bin i]` for the Piecewise Mechanism by 2-D
/// quadrature of its density: an inner Simpson integral over the output bin,
/// split where the density jumps, inside an outer Simpson integral over the
/// input bin.
pub fn pm_theta_quadrature(pm: &PmParams, d: usize, d_tilde: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = pm.domain();
    let input = uniform_edges(-1.0, 1.0, d);
    let output = uniform_edges(lo, hi, d_tilde);
    let mut theta = vec![vec![0.0; d]; d_tilde];
    for (j, row) in theta.iter_mut().enumerate() {
        let (ya, yb) = (output[j], output[j + 1]);
        for (i, cell) in row.iter_mut().enumerate() {
            let (xa, xb) = (input[i], input[i + 1]);
            let inner = |x: f64| {
                let mut cuts = vec![ya, yb, pm.left(x).clamp(ya, yb), pm.right(x).clamp(ya, yb)];
                cuts.sort_by(f64::total_cmp);
                cuts.windows(2)
                    .map(|w| {
                        // Probe the interior so the piece sees one density level.
                        let mid = 0.5 * (w[0] + w[1]);
                        let level = pm.density(mid, x);
                        simpson(&|_y| level, w[0], w[1], 1e-15)
                    })
                    .sum::<f64>()
            };
            *cell = simpson(&inner, xa, xb, 1e-13) / (xb - xa);
        }
    }
    theta
}
