//! Closed-form M-step updates and the E-step.
//!
//! Every membership/affinity update has the multiplicative form
//! `x ← Σ Q·A·ρ / Σ Q·(rate factor)`. The `ρ` responsibilities are never
//! materialised for all pairs; for an edge they reduce to
//! `x · factor / λ_ij`, computed from the state handed in.

use ndarray::Array2;

use super::data::TrainingData;
use crate::error::{Error, Result};
use crate::model::{LatentState, VariationalPosterior};

/// Share of `λ_ij` carried by each community pair `(k, q)`; sums to one.
pub fn update_rho(state: &LatentState, i: usize, j: usize) -> Result<Array2<f64>> {
    let t = state.targets();
    let k = state.k();
    let mut rho = Array2::zeros((k, k));
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            let x = state.u[[i, a]] * t[[j, b]] * state.w[[a, b]];
            rho[[a, b]] = x;
            total += x;
        }
    }
    if total <= 0.0 {
        return Err(Error::DegeneratePair(i, j));
    }
    rho /= total;
    Ok(rho)
}

#[inline]
fn ratio(num: f64, den: f64, param: &'static str, node: usize, community: usize) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::Degenerate {
            param,
            node,
            community,
        })
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Accumulates `Σ_q ρ_ijkq` weighted by `Q·A` over the edges of `row`,
/// given the factor matrix on the other side of each pair.
fn edge_numerator(
    row: &[f64],
    edges: &[(usize, u64)],
    factors: &Array2<f64>,
    q: &VariationalPosterior,
    q_index: impl Fn(usize) -> (usize, usize),
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for &(j, a) in edges {
        let f = factors.row(j);
        let f = f.as_slice().expect("standard layout");
        let lam = dot(row, f);
        if lam <= 0.0 {
            continue;
        }
        let (qi, qj) = q_index(j);
        let scale = q.get(qi, qj) * a as f64 / lam;
        for (o, (x, y)) in out.iter_mut().zip(row.iter().zip(f)) {
            *o += scale * x * y;
        }
    }
}

/// `Σ_j Q_ij · F[j, ·]` over training partners `j` of `i`.
fn exposure_weighted_sum(
    data: &TrainingData,
    q: &VariationalPosterior,
    factors: &Array2<f64>,
    i: usize,
    outgoing: bool,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let n = data.n;
    let k = out.len();
    let qd = q.dense();
    let f = factors.as_slice().expect("standard layout");
    let mut accumulate = |j: usize, idx: usize| {
        let qij = qd[idx];
        if !data.train[idx] || qij == 0.0 {
            return;
        }
        for (o, y) in out.iter_mut().zip(&f[j * k..(j + 1) * k]) {
            *o += qij * y;
        }
    };
    if outgoing {
        for j in 0..n {
            accumulate(j, i * n + j);
        }
    } else {
        for j in 0..n {
            accumulate(j, j * n + i);
        }
    }
}

/// Simultaneous update of every `u_i` from the state handed in.
pub fn update_u(
    data: &TrainingData,
    state: &LatentState,
    q: &VariationalPosterior,
) -> Result<Array2<f64>> {
    let factors = state.target_factors();
    let (n, k) = state.u.dim();
    let mut next = Array2::zeros((n, k));
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for i in 0..n {
        let row = state.u.row(i);
        let row = row.as_slice().expect("standard layout");
        edge_numerator(row, &data.out_edges[i], &factors, q, |j| (i, j), &mut num);
        exposure_weighted_sum(data, q, &factors, i, true, &mut den);
        for c in 0..k {
            next[[i, c]] = ratio(num[c], den[c], "u", i, c)?;
        }
    }
    Ok(next)
}

/// Node-by-node update of `u` in place for undirected models: node `i` sees
/// the already-updated memberships of nodes `j < i`. Each step is the exact
/// maximiser of the bound in `u_i` with everything else fixed.
pub fn sweep_u(
    data: &TrainingData,
    state: &mut LatentState,
    q: &VariationalPosterior,
) -> Result<()> {
    debug_assert!(!state.is_directed());
    let (n, k) = state.u.dim();
    let mut factors = state.target_factors();
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for i in 0..n {
        {
            let row = state.u.row(i);
            let row = row.as_slice().expect("standard layout");
            edge_numerator(row, &data.out_edges[i], &factors, q, |j| (i, j), &mut num);
        }
        exposure_weighted_sum(data, q, &factors, i, true, &mut den);
        for c in 0..k {
            state.u[[i, c]] = ratio(num[c], den[c], "u", i, c)?;
        }
        for a in 0..k {
            factors[[i, a]] = (0..k).map(|b| state.w[[a, b]] * state.u[[i, b]]).sum();
        }
    }
    Ok(())
}

/// In-membership update for directed models:
/// `v_jq ← Σ_i Q_ij A_ij Σ_k ρ_ijkq / Σ_i Q_ij Σ_k u_ik w_kq`.
pub fn update_v(
    data: &TrainingData,
    state: &LatentState,
    q: &VariationalPosterior,
) -> Result<Array2<f64>> {
    let v = state
        .v
        .as_ref()
        .ok_or_else(|| Error::Validation("update_v needs a directed state".into()))?;
    let sources = state.source_factors();
    let (n, k) = v.dim();
    let mut next = Array2::zeros((n, k));
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for j in 0..n {
        let row = v.row(j);
        let row = row.as_slice().expect("standard layout");
        edge_numerator(row, &data.in_edges[j], &sources, q, |i| (i, j), &mut num);
        exposure_weighted_sum(data, q, &sources, j, false, &mut den);
        for c in 0..k {
            next[[j, c]] = ratio(num[c], den[c], "v", j, c)?;
        }
    }
    Ok(next)
}

/// Affinity update. Sums run over ordered training pairs, which for an
/// undirected model folds both orientations and keeps `w` symmetric.
pub fn update_w(
    data: &TrainingData,
    state: &LatentState,
    q: &VariationalPosterior,
) -> Result<Array2<f64>> {
    let t = state.targets();
    let factors = state.target_factors();
    let (n, k) = state.u.dim();
    let mut num = Array2::<f64>::zeros((k, k));
    for i in 0..n {
        let ui = state.u.row(i);
        let ui = ui.as_slice().expect("standard layout");
        for &(j, a) in &data.out_edges[i] {
            let lam = dot(ui, factors.row(j).as_slice().expect("standard layout"));
            if lam <= 0.0 {
                continue;
            }
            let scale = q.get(i, j) * a as f64 / lam;
            for x in 0..k {
                if ui[x] == 0.0 {
                    continue;
                }
                for y in 0..k {
                    num[[x, y]] += scale * ui[x] * t[[j, y]];
                }
            }
        }
    }
    // Σ_{i≠j} Q_ij u_ik t_jq = (uᵀ · (Q ∘ train) · t)_kq
    let qd = q.dense();
    let ts = t.as_slice().expect("standard layout");
    let mut qt = Array2::<f64>::zeros((n, k));
    for (i, mut acc) in qt.rows_mut().into_iter().enumerate() {
        let acc = acc.as_slice_mut().expect("standard layout");
        let q_row = &qd[i * n..(i + 1) * n];
        let train_row = &data.train[i * n..(i + 1) * n];
        for (j, (&qij, &tr)) in q_row.iter().zip(train_row).enumerate() {
            if !tr || qij == 0.0 {
                continue;
            }
            for (o, y) in acc.iter_mut().zip(&ts[j * k..(j + 1) * k]) {
                *o += qij * y;
            }
        }
    }
    let den = state.u.t().dot(&qt);
    let mut next = Array2::zeros((k, k));
    for x in 0..k {
        for y in 0..k {
            next[[x, y]] = ratio(num[[x, y]] * state.w[[x, y]], den[[x, y]], "w", x, y)?;
        }
    }
    if !data.directed {
        // Symmetric up to summation order; make it exact.
        for x in 0..k {
            for y in 0..x {
                let m = 0.5 * (next[[x, y]] + next[[y, x]]);
                next[[x, y]] = m;
                next[[y, x]] = m;
            }
        }
    }
    Ok(next)
}

/// Outcome of an E-step.
#[derive(Clone, Debug)]
pub struct EStep {
    pub posterior: VariationalPosterior,
    /// Pairs whose posterior denominator underflowed to zero and were clamped to 0.
    pub n_clamped: usize,
}

/// Exposure posterior for every pair. Training pairs use
/// `Q = Pois(A; λ) μ_ij / (Pois(A; λ) μ_ij + δ(A) (1 − μ_ij))`, which is
/// exactly 1 whenever `A > 0`. Held pairs carry no observation, so their
/// posterior equals the prior `μ_ij`.
pub fn update_q(data: &TrainingData, state: &LatentState) -> EStep {
    let n = data.n;
    let factors = state.target_factors();
    let k = state.k();
    let fs = factors.as_slice().expect("standard layout");
    let mut q = vec![0.0; n * n];
    let mut n_clamped = 0;
    for i in 0..n {
        let ui = state.u.row(i);
        let ui = ui.as_slice().expect("standard layout");
        let start = if data.directed { 0 } else { i + 1 };
        for j in start..n {
            if j == i {
                continue;
            }
            let idx = i * n + j;
            let mu_ij = state.mu[i] * state.mu[j];
            let value = if !data.train[idx] {
                mu_ij
            } else if data.a[idx] > 0 {
                1.0
            } else {
                let lam = dot(ui, &fs[j * k..(j + 1) * k]);
                let exposed = (-lam).exp() * mu_ij;
                let den = exposed + (1.0 - mu_ij);
                if den > 0.0 {
                    exposed / den
                } else {
                    n_clamped += 1;
                    0.0
                }
            };
            q[idx] = value;
            if !data.directed {
                q[j * n + i] = value;
            }
        }
    }
    if n_clamped > 0 {
        log::warn!("E-step clamped {n_clamped} pairs with zero posterior mass to Q = 0");
    }
    EStep {
        posterior: VariationalPosterior::from_dense(n, data.directed, q),
        n_clamped,
    }
}

/// The posterior of the model without exposure: `Q ≡ 1` off the diagonal.
pub fn unit_posterior(data: &TrainingData) -> VariationalPosterior {
    VariationalPosterior::filled(data.n, data.directed, 1.0)
}
