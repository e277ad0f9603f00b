use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use expocd::em::{update_rho, Exposure, FitResult};
use expocd::eval::{auc, community_similarity, max_weight_assignment, precision_at_k, ScoredPair};
use expocd::graph::{all_pairs, make_cv_folds};
use expocd::model::{lambda_pair, poisson_log_pmf};
use expocd::synth::{generate, SynthConfig};
use expocd::{load_edge_list, LatentState, ObservedGraph, VariationalPosterior};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn graph(directed: bool) -> impl Strategy<Value = ObservedGraph> {
    (2usize..12).prop_flat_map(move |n| {
        prop::collection::vec((0..n, 0..n, 1u64..4), 0..30).prop_map(move |edges| {
            let edges = edges.into_iter().filter(|(i, j, _)| i != j);
            ObservedGraph::from_weighted_edges(n, directed, edges).unwrap()
        })
    })
}

fn state(n: usize, k: usize, directed: bool) -> impl Strategy<Value = LatentState> {
    (matrix(n, k), matrix(n, k), matrix(k, k)).prop_map(move |(u, v, w)| {
        let w = if directed { w } else { &w + &w.t() };
        LatentState {
            u,
            v: directed.then_some(v),
            w,
            mu: Array1::from_elem(n, 0.5),
            epsilon: 1e-5,
        }
    })
}

fn brute_force_auc(scored: &[ScoredPair]) -> f64 {
    let pos: Vec<f64> = scored
        .iter()
        .filter(|s| s.label > 0)
        .map(|s| s.score)
        .collect();
    let neg: Vec<f64> = scored
        .iter()
        .filter(|s| s.label == 0)
        .map(|s| s.score)
        .collect();
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn result_with(state: LatentState) -> FitResult {
    let n = state.n_nodes();
    FitResult {
        posterior: VariationalPosterior::filled(n, false, 1.0),
        state,
        exposure: Exposure::NoExp,
        final_bound: 0.0,
        bound_trace: Vec::new(),
        restart_index: 0,
        restart_bounds: vec![0.0],
    }
}

proptest! {
    #[test]
    fn edge_list_round_trip(g in graph(false), directed_g in graph(true)) {
        for g in [g, directed_g] {
            let mut buf = Vec::new();
            g.write_edge_list(&mut buf).unwrap();
            let back = load_edge_list(buf.as_slice(), g.is_directed()).unwrap();
            prop_assert_eq!(back.n_nodes(), g.n_nodes());
            prop_assert_eq!(back.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
        }
    }

    #[test]
    fn folds_partition_pairs(g in graph(false), n_folds in 2usize..6, seed: u64) {
        prop_assume!(g.n_pairs() >= n_folds);
        let folds = make_cv_folds(&g, n_folds, seed).unwrap();
        let again = make_cv_folds(&g, n_folds, seed).unwrap();
        prop_assert_eq!(&folds, &again);
        let mut seen = BTreeSet::new();
        for f in &folds {
            for p in f.held_pairs() {
                prop_assert!(seen.insert(p));
            }
        }
        prop_assert_eq!(seen.into_iter().collect::<Vec<_>>(), all_pairs(g.n_nodes(), false).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn lambda_symmetric_and_linear_in_w(s in state(6, 3, false), c in 0.1f64..10.0) {
        let mut scaled = s.clone();
        scaled.w *= c;
        for i in 0..6 {
            for j in 0..6 {
                let l = lambda_pair(&s, i, j);
                assert_abs_diff_eq!(l, lambda_pair(&s, j, i), epsilon = 1e-12);
                assert_abs_diff_eq!(lambda_pair(&scaled, i, j), c * l, epsilon = 1e-12 * (1.0 + c * l));
                let brute: f64 = (0..3)
                    .flat_map(|a| (0..3).map(move |b| (a, b)))
                    .map(|(a, b)| s.u[[i, a]] * s.u[[j, b]] * s.w[[a, b]])
                    .sum();
                assert_abs_diff_eq!(l, brute, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rho_normalised_and_scale_free(s in state(4, 3, true), c in 0.1f64..10.0) {
        prop_assume!(lambda_pair(&s, 0, 1) > 1e-9);
        let rho = update_rho(&s, 0, 1).unwrap();
        assert_abs_diff_eq!(rho.sum(), 1.0, epsilon = 1e-12);
        prop_assert!(rho.iter().all(|&r| r >= 0.0));
        let mut scaled = s.clone();
        scaled.u.row_mut(0).mapv_inplace(|x| x * c);
        let rho2 = update_rho(&scaled, 0, 1).unwrap();
        for (a, b) in rho.iter().zip(rho2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn auc_matches_brute_force(
        raw in prop::collection::vec((0u8..20, 0u64..3), 2..200)
    ) {
        let scored: Vec<ScoredPair> = raw
            .iter()
            .enumerate()
            .map(|(i, &(s, l))| ScoredPair { pair: (i, i + 1), score: f64::from(s) / 7.0, label: l })
            .collect();
        let has_both = scored.iter().any(|s| s.label > 0) && scored.iter().any(|s| s.label == 0);
        match auc(&scored) {
            Ok(a) => {
                prop_assert!(has_both);
                assert_abs_diff_eq!(a, brute_force_auc(&scored), epsilon = 1e-12);
            }
            Err(_) => prop_assert!(!has_both),
        }
    }

    #[test]
    fn poisson_pmf_sums_to_one(lam in 0.0f64..=10.0) {
        let total: f64 = (0..200u64).map(|x| poisson_log_pmf(x, lam).exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn assignment_is_optimal(k in 1usize..6, seed in matrix(5, 5)) {
        let w = seed.slice(ndarray::s![..k, ..k]).to_owned();
        let got = max_weight_assignment(&w);
        let score = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| w[[r, c]]).sum::<f64>();
        let best = permutations(k).iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max);
        let mut cols = got.clone();
        cols.sort_unstable();
        prop_assert_eq!(cols, (0..k).collect::<Vec<_>>());
        assert_abs_diff_eq!(score(&got), best, epsilon = 1e-12);
    }

    #[test]
    fn similarity_invariances(
        inferred in matrix(8, 3),
        truth in matrix(8, 3),
        scales in prop::collection::vec(0.1f64..10.0, 8),
        perm_index in 0usize..6,
    ) {
        let base = community_similarity(&inferred, &truth).unwrap();
        let perm = &permutations(3)[perm_index];
        let permute = |m: &Array2<f64>| Array2::from_shape_fn((8, 3), |(i, c)| m[[i, perm[c]]]);
        let both = community_similarity(&permute(&inferred), &permute(&truth)).unwrap();
        assert_abs_diff_eq!(base, both, epsilon = 1e-12);
        let rescale = |m: &Array2<f64>| Array2::from_shape_fn((8, 3), |(i, c)| scales[i] * m[[i, c]]);
        assert_abs_diff_eq!(base, community_similarity(&rescale(&inferred), &truth).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(base, community_similarity(&inferred, &rescale(&truth)).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(community_similarity(&truth, &truth).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(community_similarity(&permute(&truth), &truth).unwrap(), 1.0, epsilon = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn precision_ignores_monotone_rescaling(seed in 0u64..1000, c in 0.01f64..100.0) {
        let inst = generate(&SynthConfig { n_nodes: 40, k_communities: 2, w_scale: 0.5, seed, ..SynthConfig::default() }).unwrap();
        let fitted = inst.true_state.clone();
        let mut scaled = fitted.clone();
        scaled.w *= c;
        let a = precision_at_k(&result_with(fitted), &inst, 5).unwrap();
        let b = precision_at_k(&result_with(scaled), &inst, 5).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn exposure_mask_round_trip() {
    let inst = generate(&SynthConfig {
        n_nodes: 30,
        k_communities: 2,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    inst.mask.write_pairs(&mut buf).unwrap();
    let back = expocd::ExposureMask::read_pairs(buf.as_slice(), 30, false).unwrap();
    assert_eq!(back, inst.mask);
}
