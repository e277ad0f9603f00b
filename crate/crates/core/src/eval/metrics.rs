use ndarray::Array2;

use crate::em::{Exposure, FitResult};
use crate::error::{Error, Result};
use crate::graph::{mean_degree, ObservedGraph};
use crate::graph::{ExposureMask, Pair, PairMask};
use crate::synth::SyntheticInstance;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub pair: Pair,
    pub score: f64,
    /// Nonnegative weight; anything above zero counts as a positive.
    pub label: u64,
}

/// Area under the ROC curve with ties counted as one half, computed from
/// tie groups of the sorted scores.
pub fn auc(scored: &[ScoredPair]) -> Result<f64> {
    if scored.iter().any(|s| s.score.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.label > 0)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = sorted.iter().filter(|s| s.1).count();
    let n_neg = sorted.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels",
        ));
    }
    let mut wins = 0.0;
    let mut neg_below = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        let group = &sorted[start..end];
        let pos = group.iter().filter(|s| s.1).count() as f64;
        let neg = group.len() as f64 - pos;
        wins += pos * neg_below + 0.5 * pos * neg;
        neg_below += neg;
        start = end;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// How exposure is assigned to a held-out pair when scoring it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HeldExposure {
    /// Posterior formula evaluated at the held entry's observed count, so a
    /// held edge gets `Q = 1`. This consults the held-out weight.
    #[default]
    Posterior,
    /// The entry is unobserved, so its posterior is the prior `μ_i μ_j`.
    Marginal,
    /// Treat the hidden entry as an observed zero in the posterior formula.
    AssumeAbsent,
}

fn absent_posterior(lam: f64, mu_ij: f64) -> f64 {
    let exposed = (-lam).exp() * mu_ij;
    let den = exposed + 1.0 - mu_ij;
    if den > 0.0 {
        exposed / den
    } else {
        0.0
    }
}

/// Link-prediction scores for held-out pairs: `Q_ij λ_ij` with exposure,
/// `λ_ij` without. Labels come from the full graph.
pub fn link_scores(
    result: &FitResult,
    g: &ObservedGraph,
    mask: &PairMask,
    pairs: impl IntoIterator<Item = Pair>,
    held_exposure: HeldExposure,
) -> Result<Vec<ScoredPair>> {
    let state = &result.state;
    pairs
        .into_iter()
        .map(|(i, j)| {
            if !mask.is_held(i, j) {
                return Err(Error::Protocol(format!(
                    "pair ({i}, {j}) was used for training"
                )));
            }
            let lam = result.lambda(i, j);
            let score = match result.exposure {
                Exposure::NoExp => lam,
                Exposure::Exp => {
                    let mu_ij = state.mu[i] * state.mu[j];
                    let q = match held_exposure {
                        HeldExposure::Posterior if g.weight(i, j) > 0 => 1.0,
                        HeldExposure::Posterior | HeldExposure::AssumeAbsent => {
                            absent_posterior(lam, mu_ij)
                        }
                        HeldExposure::Marginal => mu_ij,
                    };
                    q * lam
                }
            };
            Ok(ScoredPair {
                pair: (i, j),
                score,
                label: g.weight(i, j),
            })
        })
        .collect()
}

/// AUC of the posterior `Q` against the true mask over all distinct pairs,
/// or only over pairs without an observed edge when `unobserved_only`.
pub fn mask_auc(
    result: &FitResult,
    truth: &ExposureMask,
    observed: &ObservedGraph,
    unobserved_only: bool,
) -> Result<f64> {
    if truth.n_nodes() != result.posterior.n_nodes() {
        return Err(Error::Validation("mask and fit sizes differ".into()));
    }
    let scored: Vec<ScoredPair> = observed
        .pairs()
        .filter(|&(i, j)| !unobserved_only || observed.weight(i, j) == 0)
        .map(|(i, j)| ScoredPair {
            pair: (i, j),
            score: result.posterior.get(i, j),
            label: u64::from(truth.get(i, j)),
        })
        .collect();
    auc(&scored)
}

/// Maximum-weight perfect assignment on a square matrix (Hungarian method
/// with potentials). Returns `col_of_row`.
pub fn max_weight_assignment(weights: &Array2<f64>) -> Vec<usize> {
    let n = weights.nrows();
    assert_eq!(n, weights.ncols(), "assignment needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    // Minimise cost = −weight; 1-based arrays with a dummy 0 row/column.
    let cost = |i: usize, j: usize| -weights[[i - 1, j - 1]];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}

fn cosine(x: impl Iterator<Item = f64> + Clone, y: impl Iterator<Item = f64> + Clone) -> f64 {
    let dot: f64 = x.clone().zip(y.clone()).map(|(a, b)| a * b).sum();
    let nx: f64 = x.map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.map(|b| b * b).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Mean per-node cosine similarity between inferred and true memberships,
/// after aligning inferred communities to true ones by the assignment that
/// maximises total column cosine similarity. Columns are compared on
/// row-normalised memberships so the alignment ignores per-node scale.
pub fn community_similarity(inferred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if inferred.dim() != truth.dim() {
        return Err(Error::Validation(format!(
            "membership shapes differ: {:?} vs {:?}",
            inferred.dim(),
            truth.dim()
        )));
    }
    let (n, k) = truth.dim();
    if n == 0 {
        return Err(Error::Validation("no nodes".into()));
    }
    let (inferred_dir, truth_dir) = (unit_rows(inferred), unit_rows(truth));
    let columns = Array2::from_shape_fn((k, k), |(a, b)| {
        cosine(
            inferred_dir.column(a).iter().copied(),
            truth_dir.column(b).iter().copied(),
        )
    });
    // inferred column a ↦ true column assign[a]
    let assign = max_weight_assignment(&columns);
    let mut source_of = vec![0; k];
    for (a, &b) in assign.iter().enumerate() {
        source_of[b] = a;
    }
    let total: f64 = (0..n)
        .map(|i| {
            cosine(
                source_of.iter().map(|&a| inferred[[i, a]]),
                truth.row(i).iter().copied(),
            )
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionAtK {
    pub value: f64,
    pub k: usize,
    /// Nodes with fewer than `k` candidates; they are scored on all of them.
    pub short_nodes: usize,
    /// Nodes with no candidates at all, left out of the mean.
    pub skipped_nodes: usize,
}

/// For each node, the share of its `k` highest-`λ` unobserved partners that
/// are ground-truth edges, averaged over nodes.
pub fn precision_at_k(
    result: &FitResult,
    instance: &SyntheticInstance,
    k: usize,
) -> Result<PrecisionAtK> {
    if k == 0 {
        return Err(Error::Validation("k must be positive".into()));
    }
    let obs = &instance.observed;
    let n = obs.n_nodes();
    let targets = result.state.target_factors();
    let kk = result.state.k();
    let mut sum = 0.0;
    let mut counted = 0;
    let mut short_nodes = 0;
    let mut skipped_nodes = 0;
    let mut cands: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cands.clear();
        for j in 0..n {
            if j == i || obs.weight(i, j) > 0 {
                continue;
            }
            let lam: f64 = (0..kk)
                .map(|c| result.state.u[[i, c]] * targets[[j, c]])
                .sum();
            cands.push((lam, j));
        }
        if cands.is_empty() {
            skipped_nodes += 1;
            continue;
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = k.min(cands.len());
        if take < k {
            short_nodes += 1;
        }
        let hits = cands[..take]
            .iter()
            .filter(|&&(_, j)| instance.ground_truth.weight(i, j) > 0)
            .count();
        sum += hits as f64 / take as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("no node has unobserved partners"));
    }
    Ok(PrecisionAtK {
        value: sum / counted as f64,
        k,
        short_nodes,
        skipped_nodes,
    })
}

/// Expected precision of picking unobserved partners uniformly at random:
/// `(⟨k⟩_g − ⟨k⟩) / (N − ⟨k⟩)`.
pub fn random_baseline_p_at_k(instance: &SyntheticInstance) -> f64 {
    random_baseline_from_degrees(
        mean_degree(&instance.ground_truth),
        mean_degree(&instance.observed),
        instance.observed.n_nodes(),
    )
}

pub fn random_baseline_from_degrees(k_truth: f64, k_observed: f64, n: usize) -> f64 {
    (k_truth - k_observed) / (n as f64 - k_observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sp(score: f64, label: u64) -> ScoredPair {
        ScoredPair {
            pair: (0, 1),
            score,
            label,
        }
    }

    #[test]
    fn auc_examples() {
        // Brute force: (0.9 > 0.8) wins, (0.3 < 0.8) loses → 1/2.
        assert_eq!(auc(&[sp(0.9, 1), sp(0.8, 0), sp(0.3, 1)]).unwrap(), 0.5);
        assert_eq!(auc(&[sp(0.9, 2), sp(0.1, 0), sp(0.5, 1)]).unwrap(), 1.0);
        assert_eq!(auc(&[sp(0.4, 1), sp(0.4, 0), sp(0.4, 0)]).unwrap(), 0.5);
        assert!(matches!(auc(&[sp(0.1, 1)]), Err(Error::UndefinedMetric(_))));
        assert!(auc(&[sp(f64::NAN, 1), sp(0.0, 0)]).is_err());
    }

    #[test]
    fn assignment_small() {
        let w = array![[1.0, 9.0, 0.0], [8.0, 1.0, 0.0], [0.0, 0.0, 5.0]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0, 2]);
    }

    #[test]
    fn similarity_invariances() {
        let truth = array![
            [0.7, 0.3, 0.0],
            [0.1, 0.1, 0.8],
            [0.0, 1.0, 0.0],
            [0.5, 0.25, 0.25]
        ];
        assert_abs_diff_eq!(
            community_similarity(&truth, &truth).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let permuted = truth.select(ndarray::Axis(1), &[2, 0, 1]);
        assert_abs_diff_eq!(
            community_similarity(&permuted, &truth).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let mut scaled = truth.clone();
        for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
            row *= 0.5 + i as f64;
        }
        assert_abs_diff_eq!(
            community_similarity(&scaled, &truth).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(
            community_similarity(&truth.slice(ndarray::s![.., ..2]).to_owned(), &truth).is_err()
        );
    }

    #[test]
    fn zero_rows_contribute_nothing() {
        let truth = array![[1.0, 0.0], [0.0, 1.0]];
        let inf = array![[0.0, 0.0], [0.0, 2.0]];
        assert_abs_diff_eq!(
            community_similarity(&inf, &truth).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn baseline_examples() {
        assert_abs_diff_eq!(
            random_baseline_from_degrees(20.0, 10.0, 500),
            10.0 / 490.0,
            epsilon = 1e-15
        );
        assert_eq!(random_baseline_from_degrees(12.0, 12.0, 500), 0.0);
        let a = random_baseline_from_degrees(20.0, 5.0, 500);
        let b = random_baseline_from_degrees(20.0, 10.0, 500);
        assert!(a > b);
    }
}
