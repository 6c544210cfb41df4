//! Dense reference solver for the SVR dual.
//!
//! Works on the original `2n` variables `z = (alpha, alpha*)`:
//!
//! ```text
//! min  1/2 (alpha - alpha*)' K (alpha - alpha*) + eps * 1'(alpha + alpha*) - y'(alpha - alpha*)
//! s.t. 1'alpha = 1'alpha*,  0 <= alpha, alpha* <= C
//! ```
//!
//! using accelerated projected gradient with adaptive restart and an exact
//! projection onto the box-and-hyperplane feasible set. The bias is recovered
//! from the primal: the midpoint of the set of `b` minimizing the
//! epsilon-insensitive loss of the fitted kernel expansion. It shares nothing
//! with the SMO path beyond kernel evaluation and is meant for small `n`.

use super::{DualProblem, DualSolution, DualSolver};

#[derive(Debug, Clone, Copy)]
pub struct DenseProjectedGradient {
    pub max_iter: usize,
    /// Stop once the sup-norm of the gradient mapping falls below this.
    pub mapping_tol: f64,
}

impl Default for DenseProjectedGradient {
    fn default() -> Self {
        Self {
            max_iter: 2_000_000,
            mapping_tol: 1e-11,
        }
    }
}

/// Full output of the reference solver.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub beta: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    pub mapping_norm: f64,
}

impl DualSolver for DenseProjectedGradient {
    fn name(&self) -> &'static str {
        "dense-pg"
    }

    fn solve(&self, problem: &DualProblem<'_>) -> DualSolution {
        let s = self.solve_dense(problem);
        DualSolution {
            beta: s.beta,
            bias: s.bias,
            iterations: s.iterations,
            converged: s.mapping_norm <= self.mapping_tol,
            residual: s.mapping_norm,
        }
    }
}

struct Dense<'a> {
    n: usize,
    k: Vec<f64>,
    y: &'a [f64],
    c: f64,
    eps: f64,
}

impl Dense<'_> {
    fn k_times(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.k[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(beta)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn beta(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| z[i] - z[self.n + i]).collect()
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let beta = self.beta(z);
        let kb = self.k_times(&beta);
        let quad: f64 = beta.iter().zip(&kb).map(|(b, k)| b * k).sum();
        let tube: f64 = z.iter().sum();
        let fit: f64 = beta.iter().zip(self.y).map(|(b, y)| b * y).sum();
        0.5 * quad + self.eps * tube - fit
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let kb = self.k_times(&self.beta(z));
        let mut g = Vec::with_capacity(2 * self.n);
        g.extend((0..self.n).map(|i| kb[i] + self.eps - self.y[i]));
        g.extend((0..self.n).map(|i| -kb[i] + self.eps + self.y[i]));
        g
    }

    /// Euclidean projection onto `{0 <= z <= C, sum(alpha) = sum(alpha*)}`.
    ///
    /// The projection is `alpha = clip(v - lam)`, `alpha* = clip(v* + lam)`
    /// for the `lam` zeroing the decreasing piecewise-linear function `h`.
    fn project(&self, v: &[f64]) -> Vec<f64> {
        let (n, c) = (self.n, self.c);
        let h = |lam: f64| -> f64 {
            let a: f64 = v[..n].iter().map(|x| (x - lam).clamp(0.0, c)).sum();
            let s: f64 = v[n..].iter().map(|x| (x + lam).clamp(0.0, c)).sum();
            a - s
        };
        let mut knots: Vec<f64> = Vec::with_capacity(4 * n);
        for &x in &v[..n] {
            knots.push(x - c);
            knots.push(x);
        }
        for &x in &v[n..] {
            knots.push(-x);
            knots.push(c - x);
        }
        knots.sort_by(f64::total_cmp);
        // h(knots[0]) >= 0 >= h(knots[last]); find the bracketing pair
        let (mut lo, mut hi) = (0usize, knots.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if h(knots[mid]) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b) = (knots[lo], knots[hi]);
        let (ha, hb) = (h(a), h(b));
        let lam = if ha <= 0.0 {
            a
        } else if ha - hb > 0.0 {
            a + ha * (b - a) / (ha - hb)
        } else {
            a
        };
        let mut z = Vec::with_capacity(2 * n);
        z.extend(v[..n].iter().map(|x| (x - lam).clamp(0.0, c)));
        z.extend(v[n..].iter().map(|x| (x + lam).clamp(0.0, c)));
        z
    }

    fn mapping_norm(&self, z: &[f64], step: f64) -> f64 {
        let g = self.gradient(z);
        let trial: Vec<f64> = z.iter().zip(&g).map(|(x, g)| x - step * g).collect();
        let p = self.project(&trial);
        z.iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / step
    }

    /// Midpoint of `argmin_b sum_i max(0, |r_i - b| - eps)` with `r = y - K beta`.
    fn primal_bias(&self, beta: &[f64]) -> f64 {
        let kb = self.k_times(beta);
        let r: Vec<f64> = self.y.iter().zip(&kb).map(|(y, k)| y - k).collect();
        let loss = |b: f64| -> f64 {
            r.iter()
                .map(|ri| ((ri - b).abs() - self.eps).max(0.0))
                .sum()
        };
        let mut knots: Vec<f64> = r
            .iter()
            .flat_map(|ri| [ri - self.eps, ri + self.eps])
            .collect();
        knots.sort_by(f64::total_cmp);
        let values: Vec<f64> = knots.iter().map(|&b| loss(b)).collect();
        let best = values.iter().copied().fold(f64::INFINITY, f64::min);
        let slack = 1e-12 * (1.0 + best);
        let first = values.iter().position(|&v| v <= best + slack).unwrap();
        let last = values.iter().rposition(|&v| v <= best + slack).unwrap();
        0.5 * (knots[first] + knots[last])
    }
}

impl DenseProjectedGradient {
    pub fn solve_dense(&self, problem: &DualProblem<'_>) -> OracleSolution {
        let n = problem.n();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = problem.kernel.eval(problem.row(i), problem.row(j));
            }
        }
        let dense = Dense {
            n,
            k,
            y: problem.y,
            c: problem.c,
            eps: problem.epsilon,
        };
        // Hessian is [[K, -K], [-K, K]]; Gershgorin bounds its largest eigenvalue
        let lipschitz = (0..n)
            .map(|i| {
                2.0 * dense.k[i * n..(i + 1) * n]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
            .max(1e-12);
        let step = 1.0 / lipschitz;

        let mut x = vec![0.0; 2 * n];
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut iterations = 0;
        let mut mapping = f64::INFINITY;
        while iterations < self.max_iter {
            let g = dense.gradient(&y);
            let trial: Vec<f64> = y.iter().zip(&g).map(|(a, g)| a - step * g).collect();
            let x_next = dense.project(&trial);
            iterations += 1;

            // restart momentum when it points uphill
            let uphill: f64 = y
                .iter()
                .zip(&x_next)
                .zip(&x)
                .map(|((yv, xn), xo)| (yv - xn) * (xn - xo))
                .sum();
            if uphill > 0.0 {
                t = 1.0;
                y.clone_from(&x_next);
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let w = (t - 1.0) / t_next;
                y = x_next
                    .iter()
                    .zip(&x)
                    .map(|(xn, xo)| xn + w * (xn - xo))
                    .collect();
                t = t_next;
            }
            x = x_next;

            if iterations % 25 == 0 {
                mapping = dense.mapping_norm(&x, step);
                if mapping <= self.mapping_tol {
                    break;
                }
            }
        }
        if iterations % 25 != 0 {
            mapping = dense.mapping_norm(&x, step);
        }

        let beta = dense.beta(&x);
        let bias = dense.primal_bias(&beta);
        OracleSolution {
            objective: dense.objective(&x),
            alpha: x[..n].to_vec(),
            alpha_star: x[n..].to_vec(),
            beta,
            bias,
            iterations,
            mapping_norm: mapping,
        }
    }
}
