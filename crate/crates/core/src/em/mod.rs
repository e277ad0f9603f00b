//! Expectation–maximisation for the exposure model and its no-exposure
//! baseline.
//!
//! One iteration is an E-step (`Q` from the current parameters) followed by
//! an M-step that updates `u`, then `v` (directed), then `w`, then sweeps
//! `μ` node by node. The bound is checked every `check_every` iterations.

mod data;
mod mu;
mod updates;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::TrainingData;
pub use mu::{solve_mu, sweep_mu, MuEquation};
pub use updates::{
    sweep_u, unit_posterior, update_q, update_rho, update_u, update_v, update_w, EStep,
};

use crate::error::{Error, Result};
use crate::graph::{ObservedGraph, PairMask};
use crate::model::{pair_bound, LatentState, VariationalPosterior, LAMBDA_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exposure {
    /// Joint inference of communities and exposure.
    Exp,
    /// Plain Poisson model (`Q ≡ 1`).
    NoExp,
}

impl std::fmt::Display for Exposure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Exposure::Exp => "exp",
            Exposure::NoExp => "noexp",
        })
    }
}

impl std::str::FromStr for Exposure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(Exposure::Exp),
            "noexp" => Ok(Exposure::NoExp),
            _ => Err(Error::Validation(format!("unknown exposure mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub k_communities: usize,
    pub directed: bool,
    pub exposure: Exposure,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub check_every: usize,
    /// Convergence threshold on the increase of the bound between checks.
    pub tol: f64,
    /// Consecutive sub-threshold checks required to stop.
    pub decision_window: usize,
    /// Clamp for `μ`: propensities live in `[ε, 1 − ε]`.
    pub mu_epsilon: f64,
    pub mu_solver_tol: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_communities: 2,
            directed: false,
            exposure: Exposure::Exp,
            n_restarts: 5,
            max_iters: 500,
            check_every: 10,
            tol: 1e-2,
            decision_window: 2,
            mu_epsilon: 1e-5,
            mu_solver_tol: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.k_communities,
            self.n_restarts,
            self.max_iters,
            self.check_every,
            self.decision_window,
        ];
        if counts.contains(&0) {
            return Err(Error::Validation("fit counts must be positive".into()));
        }
        if !(self.tol > 0.0 && self.mu_solver_tol > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if !(self.mu_epsilon > 0.0 && self.mu_epsilon < 0.5) {
            return Err(Error::Validation("mu epsilon must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub state: LatentState,
    pub posterior: VariationalPosterior,
    pub exposure: Exposure,
    /// Bound after the closing E-step of the winning restart.
    pub final_bound: f64,
    /// `(iteration, bound)` checkpoints of the winning restart.
    pub bound_trace: Vec<(usize, f64)>,
    pub restart_index: usize,
    /// Final bound of every restart, in restart order.
    pub restart_bounds: Vec<f64>,
}

impl FitResult {
    pub fn lambda(&self, i: usize, j: usize) -> f64 {
        crate::model::lambda_pair(&self.state, i, j)
    }

    /// `iteration,L` CSV.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,L")?;
        for (it, l) in &self.bound_trace {
            writeln!(out, "{it},{l:e}")?;
        }
        Ok(())
    }

    /// `i j Q_ij` for every pair with no observed edge.
    pub fn write_q<W: Write>(&self, g: &ObservedGraph, out: W) -> Result<()> {
        self.posterior
            .write_pairs(out, g.pairs().filter(|&(i, j)| g.weight(i, j) == 0))
    }
}

/// Objective tracked by the fit: the variational bound with exposure, the
/// Poisson log-likelihood without.
pub fn objective(
    data: &TrainingData,
    state: &LatentState,
    q: &VariationalPosterior,
    exposure: Exposure,
) -> Result<f64> {
    let n = data.n;
    let factors = state.target_factors();
    let mut total = 0.0;
    for i in 0..n {
        let ui = state.u.row(i);
        let ui = ui.as_slice().expect("standard layout");
        let start = if data.directed { 0 } else { i + 1 };
        for j in start..n {
            let idx = i * n + j;
            if j == i || !data.train[idx] {
                continue;
            }
            let f = factors.row(j);
            let lam: f64 = ui.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
            let a = data.a[idx];
            total += match exposure {
                Exposure::Exp => pair_bound(a, lam, state.mu[i] * state.mu[j], q.get(i, j))
                    .ok_or(Error::Contract(i, j))?,
                Exposure::NoExp if a > 0 => {
                    a as f64 * lam.max(LAMBDA_FLOOR).ln() - lam - crate::model::ln_factorial(a)
                }
                Exposure::NoExp => -lam,
            };
        }
    }
    Ok(total)
}

/// Hook invoked after every EM iteration with `(restart, iteration, state, q)`,
/// where `q` is the posterior the M-step used.
pub type IterationObserver<'a> =
    dyn Fn(usize, usize, &LatentState, &VariationalPosterior) + Sync + 'a;

/// Fits the model with `cfg.n_restarts` random initialisations and keeps
/// the one with the highest final bound.
pub fn fit(g: &ObservedGraph, cfg: &FitConfig, mask: Option<&PairMask>) -> Result<FitResult> {
    fit_observed(g, cfg, mask, &|_, _, _, _| {})
}

pub fn fit_observed(
    g: &ObservedGraph,
    cfg: &FitConfig,
    mask: Option<&PairMask>,
    observer: &IterationObserver<'_>,
) -> Result<FitResult> {
    cfg.validate()?;
    if cfg.directed != g.is_directed() {
        return Err(Error::Validation(
            "fit mode and graph disagree on directedness".into(),
        ));
    }
    if let Some(m) = mask {
        if m.n_nodes() != g.n_nodes() || m.is_directed() != g.is_directed() {
            return Err(Error::Validation("mask does not match the graph".into()));
        }
    }
    let data = TrainingData::new(g, mask);
    let runs: Vec<Result<RunOutcome>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(&data, cfg, r, observer))
        .collect();
    let runs: Vec<RunOutcome> = runs.into_iter().collect::<Result<_>>()?;
    let restart_bounds: Vec<f64> = runs.iter().map(|r| r.final_bound).collect();
    for (r, b) in restart_bounds.iter().enumerate() {
        log::info!("restart {r}: final bound {b:.6}");
    }
    let best =
        restart_bounds.iter().enumerate().fold(
            0,
            |best, (r, b)| if *b > restart_bounds[best] { r } else { best },
        );
    let win = runs.into_iter().nth(best).expect("at least one restart");
    Ok(FitResult {
        state: win.state,
        posterior: win.posterior,
        exposure: cfg.exposure,
        final_bound: win.final_bound,
        bound_trace: win.trace,
        restart_index: best,
        restart_bounds,
    })
}

struct RunOutcome {
    state: LatentState,
    posterior: VariationalPosterior,
    final_bound: f64,
    trace: Vec<(usize, f64)>,
}

/// Seed for restart `r`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ r as u64
}

fn run_restart(
    data: &TrainingData,
    cfg: &FitConfig,
    restart: usize,
    observer: &IterationObserver<'_>,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, restart));
    let mut state = LatentState::random(
        data.n,
        cfg.k_communities,
        cfg.directed,
        cfg.mu_epsilon,
        &mut rng,
    );
    let annotate = |iteration: usize| {
        move |e: Error| Error::Fit {
            restart,
            iteration,
            source: Box::new(e),
        }
    };

    let fixed_q = (cfg.exposure == Exposure::NoExp).then(|| unit_posterior(data));
    let mut trace = Vec::new();
    let mut streak = 0;
    let mut q = fixed_q
        .clone()
        .unwrap_or_else(|| update_q(data, &state).posterior);
    for it in 1..=cfg.max_iters {
        if fixed_q.is_none() {
            q = update_q(data, &state).posterior;
        }
        m_step(data, &mut state, &q, cfg).map_err(annotate(it))?;
        observer(restart, it, &state, &q);

        if it % cfg.check_every == 0 || it == cfg.max_iters {
            let l = objective(data, &state, &q, cfg.exposure).map_err(annotate(it))?;
            if let Some(&(_, prev)) = trace.last() {
                if l - prev < cfg.tol {
                    streak += 1;
                } else {
                    streak = 0;
                }
            }
            log::debug!("restart {restart} iteration {it}: L = {l:.6}");
            trace.push((it, l));
            if streak >= cfg.decision_window {
                break;
            }
        }
    }
    let posterior = match fixed_q {
        Some(q) => q,
        None => update_q(data, &state).posterior,
    };
    let final_bound = objective(data, &state, &posterior, cfg.exposure)
        .map_err(annotate(trace.last().map_or(0, |t| t.0)))?;
    Ok(RunOutcome {
        state,
        posterior,
        final_bound,
        trace,
    })
}

/// Parameter updates for a fixed posterior.
pub fn m_step(
    data: &TrainingData,
    state: &mut LatentState,
    q: &VariationalPosterior,
    cfg: &FitConfig,
) -> Result<()> {
    if state.is_directed() {
        state.u = update_u(data, state, q)?;
        state.v = Some(update_v(data, state, q)?);
    } else {
        sweep_u(data, state, q)?;
    }
    state.w = update_w(data, state, q)?;
    if cfg.exposure == Exposure::Exp {
        sweep_mu(data, q, state, cfg.mu_solver_tol);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> ObservedGraph {
        let mut edges = Vec::new();
        for block in [0usize, 5] {
            for i in 0..5 {
                for j in (i + 1)..5 {
                    edges.push((block + i, block + j, 1));
                }
            }
        }
        ObservedGraph::from_weighted_edges(10, false, edges).unwrap()
    }

    #[test]
    fn noexp_posterior_is_unit_and_mu_untouched() {
        let g = two_cliques();
        let cfg = FitConfig {
            exposure: Exposure::NoExp,
            n_restarts: 2,
            seed: 4,
            ..FitConfig::default()
        };
        let res = fit(&g, &cfg, None).unwrap();
        for (i, j) in g.pairs() {
            assert_eq!(res.posterior.get(i, j), 1.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(4, res.restart_index));
        let init = LatentState::random(10, 2, false, cfg.mu_epsilon, &mut rng);
        assert_eq!(init.mu, res.state.mu);
    }

    #[test]
    fn cliques_split_by_dominant_membership() {
        let g = two_cliques();
        let cfg = FitConfig {
            seed: 11,
            ..FitConfig::default()
        };
        let res = fit(&g, &cfg, None).unwrap();
        let argmax = |i: usize| {
            let r = res.state.u.row(i);
            if r[0] >= r[1] {
                0
            } else {
                1
            }
        };
        for block in [0usize, 5] {
            let c = argmax(block);
            assert!((block..block + 5).all(|i| argmax(i) == c));
        }
        assert_ne!(argmax(0), argmax(5));
    }

    #[test]
    fn deterministic_trace() {
        let g = two_cliques();
        let cfg = FitConfig {
            seed: 3,
            n_restarts: 3,
            ..FitConfig::default()
        };
        let a = fit(&g, &cfg, None).unwrap();
        let b = fit(&g, &cfg, None).unwrap();
        assert_eq!(a.bound_trace, b.bound_trace);
        assert_eq!(a.restart_index, b.restart_index);
        assert_eq!(a.final_bound, b.final_bound);
    }

    #[test]
    fn final_bound_is_best_restart() {
        let g = two_cliques();
        let res = fit(
            &g,
            &FitConfig {
                seed: 8,
                ..FitConfig::default()
            },
            None,
        )
        .unwrap();
        let max = res
            .restart_bounds
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(res.final_bound, max);
        assert_eq!(res.restart_bounds.len(), 5);
    }

    #[test]
    fn rejects_mode_mismatch() {
        let g = two_cliques();
        let cfg = FitConfig {
            directed: true,
            ..FitConfig::default()
        };
        assert!(matches!(fit(&g, &cfg, None), Err(Error::Validation(_))));
        assert!(FitConfig {
            tol: 0.0,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            mu_epsilon: 0.5,
            ..FitConfig::default()
        }
        .validate()
        .is_err());
    }
}
