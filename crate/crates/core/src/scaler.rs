//! Per-column z-score standardization of feature rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest divisor used by [`FeatureScaler::transform`].
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    pub fitted_on: usize,
}

impl FeatureScaler {
    /// Fits column means and population standard deviations of a row-major
    /// `n_rows × width` matrix. Accumulates in `f64`.
    pub fn fit(rows: &[f32], width: usize) -> Result<Self> {
        if width == 0 || rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !rows.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                expected: (rows.len() / width + 1) * width,
                found: rows.len(),
            });
        }
        let n = rows.len() / width;
        let mut means = vec![0.0f64; width];
        for row in rows.chunks_exact(width) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += f64::from(v);
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut vars = vec![0.0f64; width];
        for row in rows.chunks_exact(width) {
            for ((acc, &v), m) in vars.iter_mut().zip(row).zip(&means) {
                let d = f64::from(v) - m;
                *acc += d * d;
            }
        }
        let stds = vars.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self {
            means,
            stds,
            fitted_on: n,
        })
    }

    /// Scaler that leaves rows unchanged.
    pub fn identity(width: usize) -> Self {
        Self {
            means: vec![0.0; width],
            stds: vec![1.0; width],
            fitted_on: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, row: &[f32]) -> Result<Vec<f32>> {
        let mut out = row.to_vec();
        self.transform_in_place(&mut out)?;
        Ok(out)
    }

    pub fn transform_in_place(&self, row: &mut [f32]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::LengthMismatch {
                expected: self.width(),
                found: row.len(),
            });
        }
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = ((f64::from(*v) - m) / s.max(MIN_STD)) as f32;
        }
        Ok(())
    }

    /// Transforms every row of a row-major matrix in place.
    pub fn transform_rows(&self, rows: &mut [f32]) -> Result<()> {
        let width = self.width();
        if width == 0 || !rows.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                expected: width,
                found: rows.len(),
            });
        }
        rows.chunks_exact_mut(width)
            .try_for_each(|row| self.transform_in_place(row))
    }
}
