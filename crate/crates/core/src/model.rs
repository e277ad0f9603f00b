//! Parameter containers and the pointwise model: Poisson rates, masked
//! likelihood terms and the variational lower bound.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{ObservedGraph, PairMask};

/// Floor applied to rates inside logarithms only.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Memberships, affinity and exposure propensities.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    /// Out-memberships, `N × K`.
    pub u: Array2<f64>,
    /// In-memberships, present only for directed models.
    pub v: Option<Array2<f64>>,
    /// Affinity, `K × K`; symmetric for undirected models.
    pub w: Array2<f64>,
    /// Exposure propensities, each in `[epsilon, 1 - epsilon]`.
    pub mu: Array1<f64>,
    pub epsilon: f64,
}

impl LatentState {
    /// Uniform `(0, 1)` draws for `u`, `v`, `w` and uniform `(ε, 1 − ε)` for `μ`.
    /// Undirected models get a symmetrised `w`.
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        k: usize,
        directed: bool,
        epsilon: f64,
        rng: &mut R,
    ) -> Self {
        let mut draw =
            |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>());
        let u = draw(n, k);
        let v = directed.then(|| draw(n, k));
        let mut w = draw(k, k);
        if !directed {
            for a in 0..k {
                for b in 0..a {
                    w[[a, b]] = w[[b, a]];
                }
            }
        }
        let mu = Array1::from_shape_simple_fn(n, || {
            epsilon + (1.0 - 2.0 * epsilon) * rng.random::<f64>()
        });
        Self {
            u,
            v,
            w,
            mu,
            epsilon,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.u.nrows()
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_directed(&self) -> bool {
        self.v.is_some()
    }

    /// Memberships on the receiving side of a pair: `v` if directed, else `u`.
    pub fn targets(&self) -> &Array2<f64> {
        self.v.as_ref().unwrap_or(&self.u)
    }

    /// `F[j, k] = Σ_q w[k, q] · t[j, q]` with `t` the receiving memberships,
    /// so that `λ_ij = Σ_k u[i, k] · F[j, k]`.
    pub fn target_factors(&self) -> Array2<f64> {
        self.targets().dot(&self.w.t())
    }

    /// `G[i, q] = Σ_k u[i, k] · w[k, q]`, so that `λ_ij = Σ_q G[i, q] · t[j, q]`.
    pub fn source_factors(&self) -> Array2<f64> {
        self.u.dot(&self.w)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.u.dim();
        if k == 0 || n == 0 {
            return Err(Error::Validation("empty latent state".into()));
        }
        if self.w.dim() != (k, k) || self.mu.len() != n {
            return Err(Error::Validation("latent state dimensions disagree".into()));
        }
        if let Some(v) = &self.v {
            if v.dim() != (n, k) {
                return Err(Error::Validation("v has the wrong shape".into()));
            }
        }
        let nonneg = |m: &Array2<f64>| m.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !nonneg(&self.u) || !nonneg(&self.w) || !self.v.as_ref().is_none_or(nonneg) {
            return Err(Error::Validation("negative or non-finite parameter".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Validation("epsilon must lie in (0, 0.5)".into()));
        }
        let (lo, hi) = (self.epsilon, 1.0 - self.epsilon);
        if self.mu.iter().any(|m| !(lo..=hi).contains(m)) {
            return Err(Error::Validation(
                "mu outside [epsilon, 1 - epsilon]".into(),
            ));
        }
        if self.v.is_none() && self.w != self.w.t() {
            return Err(Error::Validation(
                "undirected model needs symmetric w".into(),
            ));
        }
        Ok(())
    }

    /// Propensities with clamp values snapped to exactly 0 and 1, for export.
    pub fn reported_mu(&self) -> Array1<f64> {
        let (lo, hi) = (self.epsilon, 1.0 - self.epsilon);
        self.mu.mapv(|m| {
            if m <= lo {
                0.0
            } else if m >= hi {
                1.0
            } else {
                m
            }
        })
    }

    /// Text serialisation: a dimension header, then `u`, `w`, `mu` and
    /// optionally `v` blocks, row-major, shortest round-trip decimals.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let (n, k) = self.u.dim();
        writeln!(
            out,
            "n {n} k {k} directed {} epsilon {:e}",
            u8::from(self.is_directed()),
            self.epsilon
        )?;
        let mut block = |name: &str, m: &Array2<f64>| -> Result<()> {
            writeln!(out, "{name}")?;
            for row in m.rows() {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
                writeln!(out, "{}", cells.join(" "))?;
            }
            Ok(())
        };
        block("u", &self.u)?;
        block("w", &self.w)?;
        block("mu", &self.mu.clone().insert_axis(ndarray::Axis(1)))?;
        if let Some(v) = &self.v {
            block("v", v)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let perr = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "empty state file"))?;
        let header = header?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            h.iter()
                .position(|t| *t == key)
                .and_then(|p| h.get(p + 1).copied())
                .ok_or_else(|| perr(hl, &format!("header missing `{key}`")))
        };
        let n: usize = field("n")?.parse().map_err(|_| perr(hl, "bad n"))?;
        let k: usize = field("k")?.parse().map_err(|_| perr(hl, "bad k"))?;
        let directed = field("directed")? == "1";
        let epsilon: f64 = field("epsilon")?
            .parse()
            .map_err(|_| perr(hl, "bad epsilon"))?;

        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let (ln, title) = lines
                .next()
                .ok_or_else(|| perr(0, &format!("missing `{name}` block")))?;
            if title?.trim() != name {
                return Err(perr(ln, &format!("expected `{name}` block")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| perr(0, &format!("`{name}` block truncated")))?;
                let row = row?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| perr(ln, "non-numeric entry"))?;
                if vals.len() != cols {
                    return Err(perr(ln, "row has the wrong length"));
                }
                data.extend(vals);
            }
            Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
        };
        let u = read_block("u", n, k)?;
        let w = read_block("w", k, k)?;
        let mu = read_block("mu", n, 1)?.column(0).to_owned();
        let v = if directed {
            Some(read_block("v", n, k)?)
        } else {
            None
        };
        let state = Self {
            u,
            v,
            w,
            mu,
            epsilon,
        };
        state.validate()?;
        Ok(state)
    }
}

/// Bernoulli means `Q_ij` approximating the posterior of the exposure mask.
/// Stored densely; undirected posteriors are kept symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalPosterior {
    n_nodes: usize,
    directed: bool,
    q: Vec<f64>,
}

impl VariationalPosterior {
    pub fn filled(n_nodes: usize, directed: bool, value: f64) -> Self {
        let mut q = vec![value; n_nodes * n_nodes];
        for i in 0..n_nodes {
            q[i * n_nodes + i] = 0.0;
        }
        Self {
            n_nodes,
            directed,
            q,
        }
    }

    pub(crate) fn from_dense(n_nodes: usize, directed: bool, q: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), n_nodes * n_nodes);
        Self {
            n_nodes,
            directed,
            q,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n_nodes + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.q[i * self.n_nodes + j] = value;
        if !self.directed {
            self.q[j * self.n_nodes + i] = value;
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub(crate) fn dense(&self) -> &[f64] {
        &self.q
    }

    /// Writes `i j Q_ij` lines for the given pairs (typically those with `A = 0`).
    pub fn write_pairs<W: Write, I: IntoIterator<Item = (usize, usize)>>(
        &self,
        mut out: W,
        pairs: I,
    ) -> Result<()> {
        for (i, j) in pairs {
            writeln!(out, "{i} {j} {:e}", self.get(i, j))?;
        }
        Ok(())
    }
}

/// `λ_ij = Σ_{k,q} u_ik · t_jq · w_kq`, with `t = v` for directed models.
pub fn lambda_pair(state: &LatentState, i: usize, j: usize) -> f64 {
    let t = state.targets();
    let k = state.k();
    let mut total = 0.0;
    for a in 0..k {
        let ua = state.u[[i, a]];
        if ua == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for b in 0..k {
            inner += t[[j, b]] * state.w[[a, b]];
        }
        total += ua * inner;
    }
    total
}

/// `ln x!`, exact summation for small arguments and a Stirling series beyond.
pub fn ln_factorial(x: u64) -> f64 {
    if x < 2 {
        return 0.0;
    }
    if x < 256 {
        return (2..=x).map(|k| (k as f64).ln()).sum();
    }
    let n = x as f64;
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    n * n.ln() - n
        + 0.5 * (2.0 * std::f64::consts::PI * n).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// `ln Pois(x; λ)`, with `ln Pois(0; 0) = 0` and `ln Pois(x > 0; 0) = −∞`.
pub fn poisson_log_pmf(x: u64, lam: f64) -> f64 {
    if lam == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lam + x as f64 * lam.ln() - ln_factorial(x)
}

/// `ln P(A | Z, λ)`: the Poisson term when exposed, `ln δ(A)` otherwise.
pub fn masked_edge_log_lik(a: u64, lam: f64, z: u8) -> f64 {
    if z == 1 {
        poisson_log_pmf(a, lam)
    } else if a == 0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Contribution of one training pair to the lower bound. `None` flags a
/// pair with an observed edge but `Q < 1`.
#[inline]
pub(crate) fn pair_bound(a: u64, lam: f64, mu_ij: f64, q: f64) -> Option<f64> {
    if a > 0 {
        if q != 1.0 {
            return None;
        }
        let x = a as f64;
        Some(x * lam.max(LAMBDA_FLOOR).ln() - lam - ln_factorial(a) + mu_ij.ln())
    } else {
        let exposed = if q > 0.0 {
            q * (-lam + mu_ij.ln())
        } else {
            0.0
        };
        let hidden = if q < 1.0 {
            (1.0 - q) * (1.0 - mu_ij).ln()
        } else {
            0.0
        };
        Some(exposed + hidden - xlogx(q) - xlogx(1.0 - q))
    }
}

/// Variational lower bound `L(q, θ, μ)` summed over all non-held pairs.
pub fn lower_bound(
    g: &ObservedGraph,
    state: &LatentState,
    q: &VariationalPosterior,
    mask: Option<&PairMask>,
) -> Result<f64> {
    let factors = state.target_factors();
    let k = state.k();
    let mut total = 0.0;
    for (i, j) in g.pairs() {
        if mask.is_some_and(|m| m.is_held(i, j)) {
            continue;
        }
        let lam: f64 = (0..k).map(|a| state.u[[i, a]] * factors[[j, a]]).sum();
        let mu_ij = state.mu[i] * state.mu[j];
        total +=
            pair_bound(g.weight(i, j), lam, mu_ij, q.get(i, j)).ok_or(Error::Contract(i, j))?;
    }
    Ok(total)
}

/// Poisson log-likelihood over non-held pairs; the objective of the model
/// without exposure.
pub fn poisson_log_likelihood(
    g: &ObservedGraph,
    state: &LatentState,
    mask: Option<&PairMask>,
) -> f64 {
    let factors = state.target_factors();
    let k = state.k();
    let mut total = 0.0;
    for (i, j) in g.pairs() {
        if mask.is_some_and(|m| m.is_held(i, j)) {
            continue;
        }
        let lam: f64 = (0..k).map(|a| state.u[[i, a]] * factors[[j, a]]).sum();
        let a = g.weight(i, j);
        total += if a > 0 {
            a as f64 * lam.max(LAMBDA_FLOOR).ln() - lam - ln_factorial(a)
        } else {
            -lam
        };
    }
    total
}
