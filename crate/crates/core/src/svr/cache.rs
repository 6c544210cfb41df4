use std::sync::Arc;

use super::DualProblem;

/// Kernel rows cached in `f64`, least-recently-used eviction.
/// Values are recomputed identically on a miss, so the cache size never
/// changes results.
pub(crate) struct KernelRows<'p, 'a> {
    problem: &'p DualProblem<'a>,
    capacity: usize,
    rows: Vec<Option<Arc<Vec<f64>>>>,
    /// Last access time per cached row.
    stamps: Vec<u64>,
    clock: u64,
    cached: usize,
    diag: Vec<f64>,
}

/// Upper bound on cached kernel entries (8 bytes each).
const CACHE_ENTRIES: usize = 1 << 25;

impl<'p, 'a> KernelRows<'p, 'a> {
    pub(crate) fn new(problem: &'p DualProblem<'a>) -> Self {
        let n = problem.n();
        let diag = (0..n)
            .map(|i| problem.kernel.eval(problem.row(i), problem.row(i)))
            .collect();
        Self {
            problem,
            capacity: (CACHE_ENTRIES / n.max(1)).clamp(2, n.max(2)),
            rows: vec![None; n],
            stamps: vec![0; n],
            clock: 0,
            cached: 0,
            diag,
        }
    }

    pub(crate) fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    pub(crate) fn diags(&self) -> &[f64] {
        &self.diag
    }

    pub(crate) fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        self.clock += 1;
        self.stamps[i] = self.clock;
        if let Some(row) = &self.rows[i] {
            return Arc::clone(row);
        }
        if self.cached >= self.capacity {
            // evict the stalest cached row other than `i`
            let victim = (0..self.rows.len())
                .filter(|&r| self.rows[r].is_some())
                .min_by_key(|&r| self.stamps[r])
                .expect("cache is non-empty when full");
            self.rows[victim] = None;
            self.cached -= 1;
        }
        let p = self.problem;
        let xi = p.row(i);
        let row = Arc::new(
            (0..p.n())
                .map(|k| p.kernel.eval(xi, p.row(k)))
                .collect::<Vec<_>>(),
        );
        self.rows[i] = Some(Arc::clone(&row));
        self.cached += 1;
        row
    }
}
