use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Positive semi-definite kernel over `f32` rows, evaluated in `f64`.
pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, a: &[f32], b: &[f32]) -> f64;
}

/// `exp(-gamma * |a - b|^2)`
pub struct Rbf {
    pub gamma: f64,
}

impl Kernel for Rbf {
    fn name(&self) -> &'static str {
        "rbf"
    }

    fn eval(&self, a: &[f32], b: &[f32]) -> f64 {
        let sq: f64 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum();
        (-self.gamma * sq).exp()
    }
}

/// Plain dot product.
pub struct Linear;

impl Kernel for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn eval(&self, a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum()
    }
}

/// Kernels by name; the constructor argument is the resolved RBF width.
pub fn kernels() -> &'static Registry<dyn Kernel, f64> {
    static REGISTRY: OnceLock<Registry<dyn Kernel, f64>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Kernel, f64> = Registry::new("kernel");
        reg.register(
            "rbf",
            "radial basis function exp(-gamma |x-y|^2)",
            |gamma| Arc::new(Rbf { gamma }),
        );
        reg.register("linear", "dot product (diagnostics only)", |_| {
            Arc::new(Linear)
        });
        reg
    })
}

pub fn kernel(name: &str, gamma: f64) -> Result<Arc<dyn Kernel>> {
    kernels().build(name, gamma)
}

pub fn rbf_kernel(x: &[f32], y: &[f32], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParams(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(Rbf { gamma }.eval(x, y))
}
