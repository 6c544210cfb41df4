//! Epsilon-insensitive support vector regression.
//!
//! Training solves the dual in the `beta = alpha - alpha*` parameterization:
//!
//! ```text
//! min  1/2 beta' K beta + eps * sum |beta_i| - y' beta
//! s.t. sum beta_i = 0,  -C <= beta_i <= C
//! ```
//!
//! and the regression function is `f(x) = sum_i beta_i K(x_i, x) + b`.
//! Solvers are pluggable through [`solvers`]; `smo` is the production solver
//! and `dense-pg` a projected-gradient reference used to cross-check it.

mod cache;
pub mod kernel;
pub mod oracle;
pub mod smo;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub use kernel::{kernel, kernels, rbf_kernel, Kernel, Linear, Rbf};

/// RBF width, either fixed or derived from the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    /// `1 / (F * Var(X))`, or `1 / F` when the data has zero variance.
    Scale,
    Value(f64),
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Scale => f.write_str("scale"),
            Gamma::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scale" {
            return Ok(Gamma::Scale);
        }
        s.parse::<f64>().map(Gamma::Value).map_err(|_| {
            Error::InvalidParams(format!("gamma must be `scale` or a number, got {s:?}"))
        })
    }
}

impl Gamma {
    /// Resolves against a row-major training matrix.
    pub fn resolve(self, x: &[f32], width: usize) -> f64 {
        match self {
            Gamma::Value(v) => v,
            Gamma::Scale => {
                let n = x.len() as f64;
                if x.is_empty() || width == 0 {
                    return 1.0 / width.max(1) as f64;
                }
                let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
                let var = x
                    .iter()
                    .map(|&v| {
                        let d = f64::from(v) - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / n;
                if var > 0.0 {
                    1.0 / (width as f64 * var)
                } else {
                    1.0 / width as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    /// Box constraint on each dual variable.
    pub c: f64,
    /// Half-width of the insensitive tube.
    pub epsilon: f64,
    pub gamma: Gamma,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration budget in passes of `n` working-set updates; `None` means `10 * n`.
    pub max_passes: Option<usize>,
    pub kernel: String,
    pub solver: String,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            gamma: Gamma::Scale,
            tol: 1e-3,
            max_passes: None,
            kernel: "rbf".to_string(),
            solver: "smo".to_string(),
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "C must be positive, got {}",
                self.c
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "gamma must be positive, got {g}"
                )));
            }
        }
        if !kernels().contains(&self.kernel) {
            kernels().build(&self.kernel, 1.0)?;
        }
        if !solvers().contains(&self.solver) {
            solvers().build(&self.solver, ())?;
        }
        Ok(())
    }

    /// Total working-set updates allowed for `n` training rows.
    pub fn iteration_budget(&self, n: usize) -> usize {
        self.max_passes.unwrap_or(10 * n).saturating_mul(n).max(1)
    }
}

/// A box- and equality-constrained dual to be solved.
pub struct DualProblem<'a> {
    /// Row-major `n × width` training inputs.
    pub x: &'a [f32],
    pub width: usize,
    pub y: &'a [f64],
    pub kernel: &'a dyn Kernel,
    pub c: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl DualProblem<'_> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.x[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Solver-specific optimality residual at exit.
    pub residual: f64,
}

pub trait DualSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &DualProblem<'_>) -> DualSolution;
}

pub fn solvers() -> &'static Registry<dyn DualSolver> {
    static REGISTRY: OnceLock<Registry<dyn DualSolver>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn DualSolver> = Registry::new("solver");
        reg.register("smo", "two-variable maximal-violating-pair updates", |_| {
            Arc::new(smo::Smo)
        });
        reg.register(
            "dense-pg",
            "accelerated projected gradient over the dense 2n-variable dual",
            |_| Arc::new(oracle::DenseProjectedGradient::default()),
        );
        reg
    })
}

/// Trained regression function.
#[derive(Clone)]
pub struct SvrModel {
    /// Row-major `S × width`.
    pub support_vectors: Vec<f32>,
    pub width: usize,
    /// `alpha_i - alpha*_i` per support vector; never zero.
    pub beta: Vec<f64>,
    pub bias: f64,
    /// Resolved RBF width.
    pub gamma: f64,
    pub params: SvrParams,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    kernel: Arc<dyn Kernel>,
}

impl fmt::Debug for SvrModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SvrModel")
            .field("n_support", &self.n_support())
            .field("width", &self.width)
            .field("bias", &self.bias)
            .field("gamma", &self.gamma)
            .field("kernel", &self.kernel.name())
            .finish()
    }
}

impl PartialEq for SvrModel {
    fn eq(&self, other: &Self) -> bool {
        self.support_vectors == other.support_vectors
            && self.width == other.width
            && self.beta == other.beta
            && self.bias.to_bits() == other.bias.to_bits()
            && self.gamma.to_bits() == other.gamma.to_bits()
            && self.params == other.params
            && self.support_indices == other.support_indices
    }
}

impl SvrModel {
    /// Assembles a model from its parts; used when loading.
    pub fn from_parts(
        support_vectors: Vec<f32>,
        width: usize,
        beta: Vec<f64>,
        bias: f64,
        gamma: f64,
        params: SvrParams,
        support_indices: Vec<usize>,
    ) -> Result<Self> {
        if support_vectors.len() != beta.len() * width || support_indices.len() != beta.len() {
            return Err(Error::LengthMismatch {
                expected: beta.len() * width,
                found: support_vectors.len(),
            });
        }
        let kernel = kernel(&params.kernel, gamma)?;
        Ok(Self {
            support_vectors,
            width,
            beta,
            bias,
            gamma,
            params,
            support_indices,
            kernel,
        })
    }

    /// Model with no support vectors: `f(x) = bias`.
    pub fn constant(width: usize, bias: f64, params: SvrParams) -> Result<Self> {
        let gamma = params.gamma.resolve(&[], width);
        Self::from_parts(
            Vec::new(),
            width,
            Vec::new(),
            bias,
            gamma,
            params,
            Vec::new(),
        )
    }

    pub fn n_support(&self) -> usize {
        self.beta.len()
    }

    pub fn support_vector(&self, s: usize) -> &[f32] {
        &self.support_vectors[s * self.width..(s + 1) * self.width]
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.width {
            return Err(Error::LengthMismatch {
                expected: self.width,
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f32]) -> f64 {
        let mut acc = 0.0;
        for (s, &b) in self.beta.iter().enumerate() {
            acc += b * self.kernel.eval(self.support_vector(s), x);
        }
        acc + self.bias
    }

    /// Dual coefficients over all `n` training rows (zero off the support set).
    pub fn full_beta(&self, n: usize) -> Vec<f64> {
        let mut beta = vec![0.0; n];
        for (&i, &b) in self.support_indices.iter().zip(&self.beta) {
            if i < n {
                beta[i] = b;
            }
        }
        beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub n_rows: usize,
    pub n_support: usize,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub gamma: f64,
    pub solver: String,
}

fn check_training_input(x: &[f32], width: usize, y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() != y.len() * width {
        return Err(Error::LengthMismatch {
            expected: y.len() * width,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Fits an SVR on row-major `x` (`y.len() × width`).
pub fn train_svr(
    x: &[f32],
    width: usize,
    y: &[f64],
    params: &SvrParams,
) -> Result<(SvrModel, TrainSummary)> {
    params.validate()?;
    check_training_input(x, width, y)?;
    let n = y.len();
    let gamma = params.gamma.resolve(x, width);
    let kern = kernel(&params.kernel, gamma)?;

    let solution = if n == 1 {
        // the equality constraint pins the only coefficient at zero
        DualSolution {
            beta: vec![0.0],
            bias: y[0],
            iterations: 0,
            converged: true,
            residual: 0.0,
        }
    } else {
        let solver = solvers().build(&params.solver, ())?;
        let problem = DualProblem {
            x,
            width,
            y,
            kernel: kern.as_ref(),
            c: params.c,
            epsilon: params.epsilon,
            tol: params.tol,
            max_iter: params.iteration_budget(n),
        };
        solver.solve(&problem)
    };

    let mut support_vectors = Vec::new();
    let mut beta = Vec::new();
    let mut support_indices = Vec::new();
    for (i, &b) in solution.beta.iter().enumerate() {
        if b != 0.0 {
            support_vectors.extend_from_slice(&x[i * width..(i + 1) * width]);
            beta.push(b);
            support_indices.push(i);
        }
    }
    let summary = TrainSummary {
        n_rows: n,
        n_support: beta.len(),
        iterations: solution.iterations,
        converged: solution.converged,
        residual: solution.residual,
        gamma,
        solver: params.solver.clone(),
    };
    let model = SvrModel {
        support_vectors,
        width,
        beta,
        bias: solution.bias,
        gamma,
        params: params.clone(),
        support_indices,
        kernel: kern,
    };
    Ok((model, summary))
}

/// Dual objective `1/2 beta'K beta + eps * sum(alpha + alpha*) - y'beta`, with
/// `alpha = max(beta, 0)` and `alpha* = max(-beta, 0)`.
pub fn dual_objective(
    beta: &[f64],
    x: &[f32],
    width: usize,
    y: &[f64],
    params: &SvrParams,
) -> Result<f64> {
    check_training_input(x, width, y)?;
    if beta.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            found: beta.len(),
        });
    }
    let slack = 1e-12 * params.c.max(1.0);
    if let Some(b) = beta.iter().find(|b| b.abs() > params.c + slack) {
        return Err(Error::InfeasiblePoint(format!(
            "|beta| = {} exceeds C = {}",
            b.abs(),
            params.c
        )));
    }
    let sum: f64 = beta.iter().sum();
    if sum.abs() > params.tol.max(1e-9) * beta.len() as f64 {
        return Err(Error::InfeasiblePoint(format!("sum of beta is {sum}")));
    }
    let kern = kernel(&params.kernel, params.gamma.resolve(x, width))?;
    let row = |i: usize| &x[i * width..(i + 1) * width];
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if beta[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if beta[j] != 0.0 {
                quad += beta[i] * beta[j] * kern.eval(row(i), row(j));
            }
        }
    }
    let tube: f64 = beta.iter().map(|b| b.abs()).sum();
    let fit: f64 = beta.iter().zip(y).map(|(b, y)| b * y).sum();
    Ok(0.5 * quad + params.epsilon * tube - fit)
}

/// Largest violation of the epsilon-KKT conditions over the training rows,
/// measured with the model's own bias:
///
/// * `beta_i < C` requires `f(x_i) - y_i + eps * s_i >= 0` with `s_i = 1` if `beta_i >= 0` else `-1`;
/// * `beta_i > -C` requires `f(x_i) - y_i - eps * t_i <= 0` with `t_i = 1` if `beta_i <= 0` else `-1`.
pub fn kkt_violation(model: &SvrModel, x: &[f32], y: &[f64]) -> f64 {
    let width = model.width;
    let n = y.len().min(x.len() / width.max(1));
    let beta = model.full_beta(n);
    let c = model.params.c;
    let eps = model.params.epsilon;
    let mut worst = 0.0f64;
    for i in 0..n {
        let r = model.predict_unchecked(&x[i * width..(i + 1) * width]) - y[i];
        if beta[i] < c {
            let s = if beta[i] >= 0.0 { 1.0 } else { -1.0 };
            worst = worst.max(-(r + eps * s));
        }
        if beta[i] > -c {
            let t = if beta[i] <= 0.0 { 1.0 } else { -1.0 };
            worst = worst.max(r - eps * t);
        }
    }
    worst
}
