//! Dense convex quadratic programs with box constraints.
//!
//! ```text
//!     minimize     1/2 x' H x + g' x + c
//!     subject to   lower <= x <= upper
//! ```
//!
//! Solved with a primal-dual active-set iteration, which settles in a handful
//! of reduced solves on well-behaved problems. If it cycles, a primal
//! active-set method takes over from the last iterate. Both end with an exact
//! solve on the final free set, so the KKT residual is at rounding level.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxQp {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x) + self.c
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.g
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.lower, &self.upper, |v, lo, hi| v.max(lo).min(hi))
    }

    /// Infinity norm of `x - P(x - grad)`; zero exactly at a KKT point.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = self.gradient(x);
        (0..self.dim())
            .map(|i| {
                let p = (x[i] - grad[i]).max(self.lower[i]).min(self.upper[i]);
                (x[i] - p).abs()
            })
            .fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.h.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension(format!(
                "QP with {n} variables has H {:?}, bounds {}/{}",
                self.h.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..n {
            // negated so that NaN bounds are rejected too
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::InfeasibleBounds {
                    index: i,
                    min: self.lower[i],
                    max: self.upper[i],
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    /// Defaults to `10 * n^2` when unset.
    pub max_iterations: Option<usize>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

pub fn solve_qp(qp: &BoxQp, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_from(qp, settings, None)
}

/// Solve starting from `start` (projected onto the box) or the origin.
pub fn solve_qp_from(
    qp: &BoxQp,
    settings: &QpSettings,
    start: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    qp.check()?;
    let n = qp.dim();
    let max_iterations = settings.max_iterations.unwrap_or(10 * n * n).max(10);
    let x0 = match start {
        Some(s) if s.len() == n => qp.project(s),
        _ => qp.project(&DVector::zeros(n)),
    };
    if n == 0 {
        return Ok(finish(qp, x0, 0));
    }

    let (x, iterations, settled) = primal_dual(qp, &x0, max_iterations.min(PDAS_LIMIT));
    if settled {
        let sol = finish(qp, x, iterations);
        if sol.kkt_residual <= settings.tolerance {
            return Ok(sol);
        }
        return primal_active_set(qp, sol.x, settings.tolerance, iterations, max_iterations);
    }
    primal_active_set(qp, qp.project(&x), settings.tolerance, iterations, max_iterations)
}

const PDAS_LIMIT: usize = 50;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

fn finish(qp: &BoxQp, x: DVector<f64>, iterations: usize) -> QpSolution {
    QpSolution {
        objective: qp.objective(&x),
        kkt_residual: qp.kkt_residual(&x),
        x,
        iterations,
    }
}

/// Minimize over the free variables with the others pinned at their values
/// in `x`. `None` when the reduced Hessian is not positive definite.
fn solve_free(qp: &BoxQp, x: &DVector<f64>, free: &[usize]) -> Option<DVector<f64>> {
    if free.is_empty() {
        return Some(DVector::zeros(0));
    }
    let n = qp.dim();
    let mut pinned = x.clone();
    for &i in free {
        pinned[i] = 0.0;
    }
    let h_fx = DMatrix::from_fn(free.len(), n, |r, c| qp.h[(free[r], c)]);
    let rhs = -(DVector::from_fn(free.len(), |r, _| qp.g[free[r]]) + h_fx * pinned);
    let h_ff = DMatrix::from_fn(free.len(), free.len(), |r, c| qp.h[(free[r], free[c])]);
    h_ff.cholesky().map(|chol| chol.solve(&rhs))
}

/// Primal-dual active-set iteration: guess the active bounds from
/// `x - grad / diag(H)`, pin them, solve for the rest, repeat until the
/// guess stops changing. Returns the last iterate and whether it settled.
fn primal_dual(qp: &BoxQp, x0: &DVector<f64>, limit: usize) -> (DVector<f64>, usize, bool) {
    let n = qp.dim();
    let mut x = x0.clone();
    let mut grad = qp.gradient(&x);
    let mut sets: Option<Vec<Bound>> = None;
    for it in 1..=limit {
        let next: Vec<Bound> = (0..n)
            .map(|i| {
                let trial = x[i] - grad[i] / qp.h[(i, i)].max(f64::MIN_POSITIVE);
                if trial <= qp.lower[i] {
                    Bound::Lower
                } else if trial >= qp.upper[i] {
                    Bound::Upper
                } else {
                    Bound::Free
                }
            })
            .collect();
        if sets.as_ref() == Some(&next) {
            return (x, it - 1, true);
        }
        let free: Vec<usize> = (0..n).filter(|&i| next[i] == Bound::Free).collect();
        for i in 0..n {
            match next[i] {
                Bound::Lower => x[i] = qp.lower[i],
                Bound::Upper => x[i] = qp.upper[i],
                Bound::Free => {}
            }
        }
        let Some(xf) = solve_free(qp, &x, &free) else {
            return (x, it, false);
        };
        for (k, &i) in free.iter().enumerate() {
            x[i] = xf[k];
        }
        grad = qp.gradient(&x);
        sets = Some(next);
    }
    (x, limit, false)
}

/// Primal active-set method from a feasible point; terminates finitely for
/// strictly convex problems.
fn primal_active_set(
    qp: &BoxQp,
    mut x: DVector<f64>,
    tolerance: f64,
    mut iterations: usize,
    max_iterations: usize,
) -> Result<QpSolution> {
    let n = qp.dim();
    let mut working: Vec<Bound> = (0..n)
        .map(|i| {
            if x[i] <= qp.lower[i] {
                Bound::Lower
            } else if x[i] >= qp.upper[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    loop {
        if iterations >= max_iterations {
            return Err(Error::IterationLimit {
                iterations,
                residual: qp.kkt_residual(&x),
                best: x.iter().copied().collect(),
            });
        }
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&i| working[i] == Bound::Free).collect();
        let target = solve_free(qp, &x, &free).ok_or(Error::NotPsd)?;
        let step: Vec<f64> = free.iter().enumerate().map(|(k, &i)| target[k] - x[i]).collect();

        let mut alpha = 1.0;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let p = step[k];
            let room = if p < 0.0 {
                (qp.lower[i] - x[i]) / p
            } else if p > 0.0 {
                (qp.upper[i] - x[i]) / p
            } else {
                continue;
            };
            if room < alpha {
                alpha = room.max(0.0);
                blocking = Some((i, if p < 0.0 { Bound::Lower } else { Bound::Upper }));
            }
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] += alpha * step[k];
        }
        if let Some((i, side)) = blocking {
            x[i] = if side == Bound::Lower { qp.lower[i] } else { qp.upper[i] };
            working[i] = side;
            continue;
        }

        // Subspace optimum reached: release the bound with the most wrong-signed multiplier.
        let grad = qp.gradient(&x);
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match working[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => continue,
            };
            if violation > 0.0 && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) if qp.kkt_residual(&x) > tolerance => working[i] = Bound::Free,
            _ => {
                let sol = finish(qp, x, iterations);
                if sol.kkt_residual > tolerance {
                    return Err(Error::IterationLimit {
                        iterations,
                        residual: sol.kkt_residual,
                        best: sol.x.iter().copied().collect(),
                    });
                }
                return Ok(sol);
            }
        }
    }
}
