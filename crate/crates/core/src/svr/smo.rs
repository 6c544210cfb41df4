//! Sequential minimal optimization on the `beta` form of the dual.
//!
//! Each step moves one pair `(i, j)` along `beta_i += t, beta_j -= t`, which
//! keeps `sum beta = 0`. `i` minimizes the right derivative of the objective
//! in `beta_i` among rows that can grow. `j` is chosen among rows that can
//! shrink and violate KKT against `i`, maximizing the second-order gain
//! `(down_j - up_i)^2 / eta_ij`. Convergence is the first-order gap
//! `max down - min up <= tol`. The step
//! exactly minimizes the objective along that line, which is convex and
//! piecewise quadratic because of the `eps * |beta|` term.

use super::cache::KernelRows;
use super::{DualProblem, DualSolution, DualSolver};

#[derive(Debug, Clone, Copy, Default)]
pub struct Smo;

impl DualSolver for Smo {
    fn name(&self) -> &'static str {
        "smo"
    }

    fn solve(&self, problem: &DualProblem<'_>) -> DualSolution {
        SmoState::new(problem).run()
    }
}

struct SmoState<'p, 'a> {
    p: &'p DualProblem<'a>,
    kernel: KernelRows<'p, 'a>,
    beta: Vec<f64>,
    /// `K beta - y`
    grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Violator {
    up: Option<(usize, f64)>,
    down: Option<(usize, f64)>,
}

impl Violator {
    fn gap(&self) -> f64 {
        match (self.up, self.down) {
            (Some((_, up)), Some((_, down))) => down - up,
            _ => f64::NEG_INFINITY,
        }
    }
}

impl<'p, 'a> SmoState<'p, 'a> {
    fn new(p: &'p DualProblem<'a>) -> Self {
        Self {
            p,
            kernel: KernelRows::new(p),
            beta: vec![0.0; p.n()],
            grad: p.y.iter().map(|y| -y).collect(),
        }
    }

    /// Right derivative of the objective in `beta_i`.
    fn up(&self, i: usize) -> f64 {
        let s = if self.beta[i] >= 0.0 { 1.0 } else { -1.0 };
        self.grad[i] + self.p.epsilon * s
    }

    /// Left derivative of the objective in `beta_i`.
    fn down(&self, i: usize) -> f64 {
        let s = if self.beta[i] <= 0.0 { -1.0 } else { 1.0 };
        self.grad[i] + self.p.epsilon * s
    }

    fn select(&self) -> Violator {
        let c = self.p.c;
        let mut up: Option<(usize, f64)> = None;
        let mut down: Option<(usize, f64)> = None;
        for i in 0..self.beta.len() {
            if self.beta[i] < c {
                let v = self.up(i);
                if up.is_none_or(|(_, best)| v < best) {
                    up = Some((i, v));
                }
            }
            if self.beta[i] > -c {
                let v = self.down(i);
                if down.is_none_or(|(_, best)| v > best) {
                    down = Some((i, v));
                }
            }
        }
        Violator { up, down }
    }

    /// Applies `grad += t (K_i - K_j)` and selects the next pair in the
    /// same pass.
    fn update_and_select(&mut self, t: f64, ki: &[f64], kj: &[f64]) -> Violator {
        let c = self.p.c;
        let eps = self.p.epsilon;
        let (mut up_i, mut up_v) = (usize::MAX, f64::INFINITY);
        let (mut down_i, mut down_v) = (usize::MAX, f64::NEG_INFINITY);
        for (r, (g, (&b, (&a, &k)))) in self
            .grad
            .iter_mut()
            .zip(self.beta.iter().zip(ki.iter().zip(kj)))
            .enumerate()
        {
            *g += t * (a - k);
            // written as selects rather than nested branches: the conditions
            // are data-dependent and mispredict badly
            let up = if b < c {
                *g + if b >= 0.0 { eps } else { -eps }
            } else {
                f64::INFINITY
            };
            let down = if b > -c {
                *g + if b <= 0.0 { -eps } else { eps }
            } else {
                f64::NEG_INFINITY
            };
            if up < up_v {
                (up_i, up_v) = (r, up);
            }
            if down > down_v {
                (down_i, down_v) = (r, down);
            }
        }
        Violator {
            up: (up_i != usize::MAX).then_some((up_i, up_v)),
            down: (down_i != usize::MAX).then_some((down_i, down_v)),
        }
    }

    /// Row that can shrink with the largest `(down_j - up_i)^2 / eta_ij`.
    fn second_order(&self, i: usize, up_i: f64, ki: &[f64]) -> Option<usize> {
        let c = self.p.c;
        let eps = self.p.epsilon;
        let kii = self.kernel.diag(i);
        let diag = self.kernel.diags();
        // best gain kept as the fraction num / den to avoid dividing per row
        let (mut best, mut num, mut den) = (usize::MAX, 0.0f64, 1.0f64);
        for (j, ((&b, &g), (&kjj, &kij))) in self
            .beta
            .iter()
            .zip(&self.grad)
            .zip(diag.iter().zip(ki))
            .enumerate()
        {
            let down = g + if b <= 0.0 { -eps } else { eps };
            let gap = down - up_i;
            let eta = (kii + kjj - 2.0 * kij).max(1e-12);
            let gain = gap * gap;
            let better = (b > -c) & (gap > 0.0) & (j != i) & (gain * den > num * eta);
            if better {
                (best, num, den) = (j, gain, eta);
            }
        }
        (best != usize::MAX).then_some(best)
    }

    /// Minimizes `phi(t) = eta/2 t^2 + lin * t + eps (|bi + t| + |bj - t|)`
    /// over `t in [0, hi]`.
    fn line_search(&self, i: usize, j: usize, eta: f64, hi: f64) -> f64 {
        let (bi, bj) = (self.beta[i], self.beta[j]);
        let lin = self.grad[i] - self.grad[j];
        let eps = self.p.epsilon;
        let mut knots = vec![hi];
        if bi < 0.0 && -bi < hi {
            knots.push(-bi);
        }
        if bj > 0.0 && bj < hi {
            knots.push(bj);
        }
        knots.sort_by(f64::total_cmp);

        let mut start = 0.0;
        for end in knots {
            if end <= start {
                continue;
            }
            let mid = 0.5 * (start + end);
            let si = if bi + mid >= 0.0 { 1.0 } else { -1.0 };
            let sj = if bj - mid >= 0.0 { 1.0 } else { -1.0 };
            let slope = lin + eps * (si - sj);
            let t = if eta > 0.0 {
                (-slope / eta).clamp(start, end)
            } else if slope < 0.0 {
                end
            } else {
                start
            };
            if t < end {
                return t;
            }
            start = end;
        }
        start
    }

    fn objective_delta(&self, i: usize, j: usize, eta: f64, t: f64) -> f64 {
        let (bi, bj) = (self.beta[i], self.beta[j]);
        let lin = self.grad[i] - self.grad[j];
        0.5 * eta * t * t
            + lin * t
            + self.p.epsilon * ((bi + t).abs() + (bj - t).abs() - bi.abs() - bj.abs())
    }

    fn run(mut self) -> DualSolution {
        let c = self.p.c;
        let tol = self.p.tol;
        let mut iterations = 0;
        let mut converged = false;
        let mut last_gap = f64::INFINITY;

        let mut v = self.select();
        while iterations < self.p.max_iter {
            last_gap = v.gap();
            if last_gap <= tol {
                converged = true;
                break;
            }
            let (Some((i, up_i)), Some((j_max, _))) = (v.up, v.down) else {
                converged = true;
                break;
            };
            let ki = self.kernel.row(i);
            let j = self.second_order(i, up_i, &ki).unwrap_or(j_max);
            let kj = self.kernel.row(j);
            let eta = (self.kernel.diag(i) + self.kernel.diag(j) - 2.0 * ki[j]).max(0.0);
            let to_ci = c - self.beta[i];
            let to_cj = self.beta[j] + c;
            let hi = to_ci.min(to_cj);
            let t = self.line_search(i, j, eta, hi);
            if !(t > 0.0) {
                // numerically flat; nothing left to gain along this pair
                break;
            }
            debug_assert!(self.objective_delta(i, j, eta, t) <= 1e-12 * (1.0 + t));

            self.beta[i] = if t == to_ci { c } else { self.beta[i] + t };
            self.beta[j] = if t == to_cj { -c } else { self.beta[j] - t };
            v = self.update_and_select(t, &ki, &kj);
            iterations += 1;
            debug_assert!(self.beta.iter().all(|b| b.abs() <= c));
        }

        if !converged {
            last_gap = self.select().gap();
            converged = last_gap <= tol;
        }
        let bias = self.bias();
        DualSolution {
            beta: self.beta,
            bias,
            iterations,
            converged,
            residual: last_gap.max(0.0),
        }
    }

    /// Average over free rows when there are any, else the midpoint of the
    /// interval the KKT conditions allow.
    fn bias(&self) -> f64 {
        let c = self.p.c;
        let eps = self.p.epsilon;
        let (mut sum, mut count) = (0.0, 0usize);
        for (i, &b) in self.beta.iter().enumerate() {
            if b != 0.0 && b.abs() < c {
                sum += -(self.grad[i] + eps * b.signum());
                count += 1;
            }
        }
        if count > 0 {
            return sum / count as f64;
        }
        let v = self.select();
        match (v.up, v.down) {
            (Some((_, up)), Some((_, down))) => -0.5 * (up + down),
            (Some((_, up)), None) => -up,
            (None, Some((_, down))) => -down,
            (None, None) => 0.0,
        }
    }
}
