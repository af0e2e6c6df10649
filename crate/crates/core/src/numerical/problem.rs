//! The nonlinear program in reduced coordinates.
//!
//! Equality constraints are removed by construction. Column sums fix one
//! entry per column, and the boundary condition `x_n = 1` fixes the two
//! extreme entries of column `n` (two linear equations in `P[n][n]` and
//! `P[-n][n]`). What remains is a box-bounded problem with inequality
//! constraints only, over `z = [a_1..a_n, free entries, (tau)]`.

use super::layout::{signed_output, DecisionVector, Layout};
use super::Objective;

/// Sparse gradient over the full decision vector.
type Sparse = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy)]
enum Con {
    /// `a_{k-1} - a_k + delta <= 0`.
    Order(usize),
    /// `-w[idx] <= 0` for a derived entry.
    NonNeg(usize),
    /// `P[i][ref] - P[i][j] <= 0`.
    LdpLow(i64, i64),
    /// `P[i][j] - e^eps P[i][ref] <= 0`.
    LdpHigh(i64, i64),
    /// `x_{j-1} - x_j + delta <= 0`.
    Endpoint(i64),
    /// `segmax_j - tau <= 0`.
    Epigraph(i64),
}

/// Quantities along the half table, with optional sparse gradients.
pub(crate) struct Moments {
    /// `x_0..x_n`.
    pub x: Vec<f64>,
    /// Second moments `sum_i a_i^2 P[i][j]` for `j = 0..n`.
    pub second: Vec<f64>,
    pub dx: Vec<Sparse>,
    pub dsecond: Vec<Sparse>,
}

impl Moments {
    pub fn new(layout: &Layout, w: &[f64], with_grad: bool) -> Self {
        let n = layout.half() as i64;
        let mut x = vec![0.0; n as usize + 1];
        let mut second = vec![0.0; n as usize + 1];
        let mut dx = vec![Vec::new(); n as usize + 1];
        let mut dsecond = vec![Vec::new(); n as usize + 1];
        for j in 0..=n {
            let ju = j as usize;
            for i in layout.rows().filter(|&i| i != 0) {
                let a = signed_output(w, i);
                let k = layout.a_index(i.unsigned_abs() as usize);
                let idx = layout.p_index(i, j);
                let p = w[idx];
                if j > 0 {
                    x[ju] += a * p;
                }
                second[ju] += a * a * p;
                if with_grad {
                    if j > 0 {
                        dx[ju].push((idx, a));
                        dx[ju].push((k, i.signum() as f64 * p));
                    }
                    dsecond[ju].push((idx, a * a));
                    dsecond[ju].push((k, 2.0 * w[k] * p));
                }
            }
        }
        Self {
            x,
            second,
            dx,
            dsecond,
        }
    }

    /// Largest variance on segment `[x_{j-1}, x_j]`. The variance is
    /// concave along the segment, so the maximizer is the clamped vertex;
    /// by the envelope theorem the gradient is taken at that fixed point.
    pub fn segment_max(&self, j: usize, with_grad: bool) -> (f64, Sparse) {
        let (u, v) = (self.x[j - 1], self.x[j]);
        let (lo, hi) = (self.second[j - 1], self.second[j]);
        let d = v - u;
        let alpha = if d >= 1e-12 {
            (((hi - lo) / (2.0 * d) - u) / d).clamp(0.0, 1.0)
        } else if hi - v * v > lo - u * u {
            1.0
        } else {
            0.0
        };
        let xa = u + alpha * d;
        let value = (1.0 - alpha) * lo + alpha * hi - xa * xa;
        let mut grad = Vec::new();
        if with_grad {
            scaled_push(&mut grad, &self.dsecond[j - 1], 1.0 - alpha);
            scaled_push(&mut grad, &self.dsecond[j], alpha);
            scaled_push(&mut grad, &self.dx[j - 1], -2.0 * xa * (1.0 - alpha));
            scaled_push(&mut grad, &self.dx[j], -2.0 * xa * alpha);
        }
        (value, grad)
    }

    pub fn worst(&self) -> f64 {
        (1..self.x.len())
            .map(|j| self.segment_max(j, false).0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Reduced average objective: `sum over all 2n segments of
    /// (sum_i a_i^2 (P[i][j-1] + P[i][j])) (x_j - x_{j-1})`.
    pub fn reduced_sum(&self, with_grad: bool) -> (f64, Sparse) {
        let mut value = 0.0;
        let mut grad = Vec::new();
        for j in 1..self.x.len() {
            let m = self.second[j - 1] + self.second[j];
            let d = self.x[j] - self.x[j - 1];
            value += 2.0 * m * d;
            if with_grad {
                scaled_push(&mut grad, &self.dsecond[j - 1], 2.0 * d);
                scaled_push(&mut grad, &self.dsecond[j], 2.0 * d);
                scaled_push(&mut grad, &self.dx[j], 2.0 * m);
                scaled_push(&mut grad, &self.dx[j - 1], -2.0 * m);
            }
        }
        (value, grad)
    }
}

fn scaled_push(out: &mut Sparse, src: &Sparse, s: f64) {
    if s != 0.0 {
        out.extend(src.iter().map(|&(k, v)| (k, v * s)));
    }
}

pub(crate) struct Evaluation {
    pub objective: f64,
    pub objective_grad: Vec<f64>,
    pub constraints: Vec<f64>,
    pub constraint_grads: Vec<Vec<f64>>,
}

pub(crate) struct Problem {
    layout: Layout,
    exp_eps: f64,
    delta: f64,
    objective: Objective,
    /// z position of each decision-vector entry, `None` for derived ones.
    z_of_w: Vec<Option<usize>>,
    /// Position in the derived list for each decision-vector entry.
    derived_pos: Vec<Option<usize>>,
    derived: Vec<(i64, i64)>,
    n_z: usize,
    cons: Vec<Con>,
}

impl Problem {
    pub fn new(layout: Layout, exp_eps: f64, delta: f64, objective: Objective) -> Self {
        let derived = layout.eliminated();
        let mut derived_pos = vec![None; layout.len()];
        for (pos, &(i, j)) in derived.iter().enumerate() {
            derived_pos[layout.p_index(i, j)] = Some(pos);
        }
        let mut z_of_w = vec![None; layout.len()];
        let mut n_z = 0;
        for (k, slot) in z_of_w.iter_mut().enumerate() {
            if derived_pos[k].is_none() {
                *slot = Some(n_z);
                n_z += 1;
            }
        }
        if objective == Objective::Worst {
            n_z += 1;
        }
        let n = layout.half() as i64;
        let mut cons = Vec::new();
        for k in 2..=layout.half() {
            cons.push(Con::Order(k));
        }
        for &(i, j) in &derived {
            cons.push(Con::NonNeg(layout.p_index(i, j)));
        }
        for i in layout.rows().filter(|&i| i >= 0) {
            let cols: Vec<i64> = if i == 0 { (0..n).collect() } else { (-n + 1..=n).collect() };
            for j in cols {
                cons.push(Con::LdpLow(i, j));
                cons.push(Con::LdpHigh(i, j));
            }
        }
        for j in 1..=n {
            cons.push(Con::Endpoint(j));
        }
        if objective == Objective::Worst {
            for j in 1..=n {
                cons.push(Con::Epigraph(j));
            }
        }
        Self {
            layout,
            exp_eps,
            delta,
            objective,
            z_of_w,
            derived_pos,
            derived,
            n_z,
            cons,
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.cons.len()
    }

    fn tau_index(&self) -> Option<usize> {
        (self.objective == Objective::Worst).then(|| self.n_z - 1)
    }

    /// Bounds on `z`.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(0.0, 1.0); self.n_z];
        let n = self.layout.half();
        for k in 1..=n {
            let zi = self.z_of_w[self.layout.a_index(k)].expect("outputs are free");
            b[zi] = if k == n { (1.0, 1e4) } else { (self.delta, 1e4) };
        }
        if let Some(t) = self.tau_index() {
            b[t] = (0.0, 1e8);
        }
        b
    }

    /// Reduced coordinates of a point that already satisfies the equalities.
    pub fn to_z(&self, v: &DecisionVector) -> Vec<f64> {
        let w = v.values();
        let mut z = vec![0.0; self.n_z];
        for (k, slot) in self.z_of_w.iter().enumerate() {
            if let Some(zi) = slot {
                z[*zi] = w[k];
            }
        }
        if let Some(t) = self.tau_index() {
            z[t] = Moments::new(&self.layout, w, false).worst();
        }
        z
    }

    /// Full decision vector from `z`, plus the z-gradients of each derived entry.
    pub fn expand(&self, z: &[f64]) -> (Vec<f64>, Vec<Sparse>) {
        let layout = &self.layout;
        let n = layout.half() as i64;
        let mut w = vec![0.0; layout.len()];
        for (k, slot) in self.z_of_w.iter().enumerate() {
            if let Some(zi) = slot {
                w[k] = z[*zi];
            }
        }
        let zi = |i: i64, j: i64| self.z_of_w[layout.p_index(i, j)].expect("free entry");
        let mut jac = vec![Vec::new(); self.derived.len()];
        for (pos, &(di, dj)) in self.derived.iter().enumerate() {
            if dj == 0 || dj == n {
                continue;
            }
            let mut acc = 1.0;
            for i in layout.rows().filter(|&i| i != di) {
                acc -= w[layout.p_index(i, dj)];
                jac[pos].push((zi(i, dj), -1.0));
            }
            w[layout.p_index(di, dj)] = acc;
        }
        let center = self.derived_pos[layout.p_index(if layout.is_odd() { 0 } else { 1 }, 0)]
            .expect("centre entry is derived");
        if layout.is_odd() {
            let mut acc = 1.0;
            for k in 1..=n {
                acc -= 2.0 * w[layout.p_index(k, 0)];
                jac[center].push((zi(k, 0), -2.0));
            }
            w[layout.p_index(0, 0)] = acc;
        } else {
            let mut acc = 0.5;
            for k in 2..=n {
                acc -= w[layout.p_index(k, 0)];
                jac[center].push((zi(k, 0), -1.0));
            }
            w[layout.p_index(1, 0)] = acc;
        }
        let an_idx = layout.a_index(n as usize);
        let an = w[an_idx];
        let (mut s0, mut s1) = (0.0, 0.0);
        for i in layout.rows().filter(|i| i.abs() < n) {
            let p = w[layout.p_index(i, n)];
            s0 += p;
            s1 += signed_output(&w, i) * p;
        }
        for (sign, i) in [(1.0, n), (-1.0, -n)] {
            let idx = layout.p_index(i, n);
            let pos = self.derived_pos[idx].expect("extreme entries are derived");
            w[idx] = ((1.0 - s0) + sign * (1.0 - s1) / an) / 2.0;
            let row = &mut jac[pos];
            for r in layout.rows().filter(|r| r.abs() < n) {
                row.push((zi(r, n), (-1.0 - sign * signed_output(&w, r) / an) / 2.0));
            }
            for k in 1..n {
                let diff = w[layout.p_index(k, n)] - w[layout.p_index(-k, n)];
                let za = self.z_of_w[layout.a_index(k as usize)].expect("outputs are free");
                row.push((za, -sign * diff / (2.0 * an)));
            }
            let za = self.z_of_w[an_idx].expect("outputs are free");
            row.push((za, -sign * (1.0 - s1) / (2.0 * an * an)));
        }
        (w, jac)
    }

    fn to_dense(&self, sparse: &Sparse, jac: &[Sparse], out: &mut [f64]) {
        for &(k, v) in sparse {
            match self.z_of_w[k] {
                Some(zi) => out[zi] += v,
                None => {
                    let pos = self.derived_pos[k].expect("derived entry");
                    for &(zi, jv) in &jac[pos] {
                        out[zi] += v * jv;
                    }
                }
            }
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        let layout = &self.layout;
        let n = layout.half() as i64;
        let (w, jac) = self.expand(z);
        let mom = Moments::new(layout, &w, true);
        let p = |i: i64, j: i64| w[layout.p_index(i, j)];
        let reference = |i: i64| if i == 0 { (0, n) } else { (i, -n) };
        let mut constraints = Vec::with_capacity(self.cons.len());
        let mut constraint_grads = Vec::with_capacity(self.cons.len());
        let mut seg_cache: Vec<Option<(f64, Sparse)>> = vec![None; n as usize + 1];
        for &con in &self.cons {
            let mut dense = vec![0.0; self.n_z];
            let (value, sparse): (f64, Sparse) = match con {
                Con::Order(k) => {
                    let (lo, hi) = (layout.a_index(k - 1), layout.a_index(k));
                    (w[lo] - w[hi] + self.delta, vec![(lo, 1.0), (hi, -1.0)])
                }
                Con::NonNeg(idx) => (-w[idx], vec![(idx, -1.0)]),
                Con::LdpLow(i, j) => {
                    let (ri, rj) = reference(i);
                    (
                        p(ri, rj) - p(i, j),
                        vec![(layout.p_index(ri, rj), 1.0), (layout.p_index(i, j), -1.0)],
                    )
                }
                Con::LdpHigh(i, j) => {
                    let (ri, rj) = reference(i);
                    (
                        p(i, j) - self.exp_eps * p(ri, rj),
                        vec![(layout.p_index(i, j), 1.0), (layout.p_index(ri, rj), -self.exp_eps)],
                    )
                }
                Con::Endpoint(j) => {
                    let ju = j as usize;
                    let mut g = mom.dx[ju - 1].clone();
                    scaled_push(&mut g, &mom.dx[ju], -1.0);
                    (mom.x[ju - 1] - mom.x[ju] + self.delta, g)
                }
                Con::Epigraph(j) => {
                    let ju = j as usize;
                    let (value, g) = seg_cache[ju]
                        .get_or_insert_with(|| mom.segment_max(ju, true))
                        .clone();
                    let t = self.tau_index().expect("epigraph needs tau");
                    dense[t] = -1.0;
                    (value - z[t], g)
                }
            };
            self.to_dense(&sparse, &jac, &mut dense);
            constraints.push(value);
            constraint_grads.push(dense);
        }
        let mut objective_grad = vec![0.0; self.n_z];
        let objective = match self.objective {
            Objective::Worst => {
                let t = self.tau_index().expect("tau");
                objective_grad[t] = 1.0;
                z[t]
            }
            Objective::Avg => {
                let (value, g) = mom.reduced_sum(true);
                self.to_dense(&g, &jac, &mut objective_grad);
                for v in objective_grad.iter_mut() {
                    *v /= 4.0;
                }
                value / 4.0
            }
        };
        Evaluation {
            objective,
            objective_grad,
            constraints,
            constraint_grads,
        }
    }

    /// Largest positive constraint violation at `z`, ignoring the epigraph
    /// rows (those only bound the auxiliary variable).
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.assess(z, &self.evaluate(z)).1
    }

    /// True objective (for the worst case, the largest segment peak rather
    /// than `tau`) and constraint violation of an evaluated point.
    pub fn assess(&self, z: &[f64], ev: &Evaluation) -> (f64, f64) {
        let mut violation: f64 = 0.0;
        let mut peak_excess = f64::NEG_INFINITY;
        for (c, &v) in self.cons.iter().zip(&ev.constraints) {
            match c {
                Con::Epigraph(_) => peak_excess = peak_excess.max(v),
                // Ordering margins are a modelling choice, not feasibility.
                Con::Order(_) | Con::Endpoint(_) => violation = violation.max(v - self.delta),
                _ => violation = violation.max(v),
            }
        }
        let value = match self.tau_index() {
            Some(t) => z[t] + peak_excess,
            None => ev.objective,
        };
        (value, violation)
    }
}
