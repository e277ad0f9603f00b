//! Exposure propensity update.
//!
//! Stationarity of the bound in `μ_i` gives
//! `f(m) = m · Σ_j (1 − Q_ij) μ_j / (1 − m μ_j) − Σ_j Q_ij = 0`, summed over
//! every training pair touching `i`. `f` is increasing on `[0, 1)`, so the
//! root is bracketed by the clamp interval.

use super::data::TrainingData;
use crate::model::{LatentState, VariationalPosterior};

const MAX_ITERATIONS: usize = 200;

/// The terms of `f` for one node: `(1 − Q_ij, μ_j)` pairs plus `Σ Q_ij`.
#[derive(Debug, Default)]
pub struct MuEquation {
    terms: Vec<(f64, f64)>,
    exposed: f64,
}

impl MuEquation {
    pub fn for_node(data: &TrainingData, q: &VariationalPosterior, mu: &[f64], i: usize) -> Self {
        let n = data.n;
        let qd = q.dense();
        let mut eq = Self {
            terms: Vec::with_capacity(if data.directed { 2 * n } else { n }),
            exposed: 0.0,
        };
        let mut add = |idx: usize, j: usize| {
            if !data.train[idx] {
                return;
            }
            let qij = qd[idx];
            eq.exposed += qij;
            if qij < 1.0 {
                eq.terms.push((1.0 - qij, mu[j]));
            }
        };
        for j in 0..n {
            add(i * n + j, j);
            if data.directed {
                add(j * n + i, j);
            }
        }
        eq
    }

    pub fn residual(&self, m: f64) -> f64 {
        let s: f64 = self
            .terms
            .iter()
            .map(|&(hidden, mu_j)| hidden * mu_j / (1.0 - m * mu_j))
            .sum();
        m * s - self.exposed
    }

    /// Residual and its derivative in one pass.
    fn residual_and_slope(&self, m: f64) -> (f64, f64) {
        let (mut s, mut ds) = (0.0, 0.0);
        for &(hidden, mu_j) in &self.terms {
            let r = 1.0 / (1.0 - m * mu_j);
            let t = hidden * mu_j * r;
            s += t;
            ds += t * r;
        }
        (m * s - self.exposed, ds)
    }

    /// Root of the residual on `[ε, 1 − ε]`, clamped at whichever end the
    /// residual does not change sign. `None` when the node has no training
    /// pairs and the equation is vacuous.
    pub fn solve(&self, epsilon: f64, tol: f64) -> Option<f64> {
        self.solve_from(1.0 - epsilon, epsilon, tol)
    }

    /// As [`solve`](Self::solve), with Newton iterations started at `guess`.
    /// The residual is increasing and convex, so after at most one step the
    /// iterates approach the root from above. Bisection takes over if a
    /// step leaves the bracket.
    pub fn solve_from(&self, guess: f64, epsilon: f64, tol: f64) -> Option<f64> {
        if self.terms.is_empty() && self.exposed == 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (epsilon, 1.0 - epsilon);
        if self.residual(hi) <= 0.0 {
            return Some(hi);
        }
        if self.residual(lo) >= 0.0 {
            return Some(lo);
        }
        let mut m = guess.clamp(lo, hi);
        for _ in 0..MAX_ITERATIONS {
            let (f, slope) = self.residual_and_slope(m);
            if f.abs() < tol || hi - lo <= f64::EPSILON * m {
                break;
            }
            if f > 0.0 {
                hi = m;
            } else {
                lo = m;
            }
            let step = m - f / slope;
            m = if step > lo && step < hi {
                step
            } else {
                0.5 * (lo + hi)
            };
        }
        Some(m)
    }
}

/// New `μ_i` given the current propensities of all other nodes.
pub fn solve_mu(
    data: &TrainingData,
    q: &VariationalPosterior,
    state: &LatentState,
    i: usize,
    tol: f64,
) -> f64 {
    let mu = state.mu.as_slice().expect("contiguous mu");
    MuEquation::for_node(data, q, mu, i)
        .solve_from(mu[i], state.epsilon, tol)
        .unwrap_or(state.mu[i])
}

/// One Gauss–Seidel pass over the nodes in index order.
pub fn sweep_mu(data: &TrainingData, q: &VariationalPosterior, state: &mut LatentState, tol: f64) {
    for i in 0..state.n_nodes() {
        state.mu[i] = solve_mu(data, q, state, i, tol);
    }
}
