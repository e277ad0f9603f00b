use expocd::eval::{
    held_out_auc, link_scores, recommend, run_cv_experiment, CvGrid, CvOptions, HeldExposure,
};
use expocd::graph::make_cv_folds;
use expocd::synth::target_scale;
use expocd::{
    fit, generate, Error, Exposure, FitConfig, LatentState, SynthConfig, SyntheticInstance,
};

fn instance(directed: bool, seed: u64) -> SyntheticInstance {
    let mut cfg = SynthConfig {
        n_nodes: 60,
        k_communities: 2,
        directed,
        seed,
        ..SynthConfig::default()
    };
    cfg.w_scale = target_scale(&cfg, 8.0).unwrap();
    generate(&cfg).unwrap()
}

fn quick(k: usize, directed: bool, exposure: Exposure) -> FitConfig {
    FitConfig {
        k_communities: k,
        directed,
        exposure,
        n_restarts: 2,
        max_iters: 100,
        seed: 11,
        ..FitConfig::default()
    }
}

#[test]
fn directed_fit_has_v_and_monotone_trace() {
    let inst = instance(true, 1);
    let res = fit(&inst.observed, &quick(2, true, Exposure::Exp), None).unwrap();
    assert!(res.state.v.is_some());
    assert!(res.bound_trace.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-8));
    let mut buf = Vec::new();
    res.state.write_text(&mut buf).unwrap();
    let back = LatentState::read_text(buf.as_slice()).unwrap();
    assert_eq!(back, res.state);
}

#[test]
fn held_pairs_do_not_enter_training() {
    let inst = instance(false, 2);
    let g = &inst.observed;
    let mask = make_cv_folds(g, 5, 3).unwrap().remove(0);
    let cfg = quick(2, false, Exposure::Exp);
    let with_mask = fit(g, &cfg, Some(&mask)).unwrap();

    // Deleting held edges from the graph leaves the masked fit unchanged.
    let kept = g
        .edges()
        .filter(|((i, j), _)| !mask.is_held(*i, *j))
        .map(|((i, j), w)| (i, j, w));
    let stripped = expocd::ObservedGraph::from_weighted_edges(g.n_nodes(), false, kept).unwrap();
    let again = fit(&stripped, &cfg, Some(&mask)).unwrap();
    assert_eq!(with_mask.state, again.state);
    assert_eq!(with_mask.bound_trace, again.bound_trace);

    let auc = held_out_auc(&with_mask, g, &mask, HeldExposure::Posterior).unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn link_scores_per_mode() {
    let inst = instance(false, 4);
    let g = &inst.observed;
    let mask = make_cv_folds(g, 5, 0).unwrap().remove(1);
    let noexp = fit(g, &quick(2, false, Exposure::NoExp), Some(&mask)).unwrap();
    let exp = fit(g, &quick(2, false, Exposure::Exp), Some(&mask)).unwrap();
    for held in [
        HeldExposure::Posterior,
        HeldExposure::Marginal,
        HeldExposure::AssumeAbsent,
    ] {
        for s in link_scores(&noexp, g, &mask, mask.held_pairs(), held).unwrap() {
            assert_eq!(s.score, noexp.lambda(s.pair.0, s.pair.1));
        }
        for s in link_scores(&exp, g, &mask, mask.held_pairs(), held).unwrap() {
            let lam = exp.lambda(s.pair.0, s.pair.1);
            assert!(s.score >= 0.0 && s.score <= lam);
            if lam == 0.0 {
                assert_eq!(s.score, 0.0);
            }
            assert_eq!(s.label, g.weight(s.pair.0, s.pair.1));
        }
    }
    let training = g.pairs().find(|&(i, j)| !mask.is_held(i, j)).unwrap();
    let r = link_scores(&exp, g, &mask, [training], HeldExposure::Posterior);
    assert!(matches!(r, Err(Error::Protocol(_))));
}

#[test]
fn cv_records_are_complete_and_reproducible() {
    let inst = instance(false, 5);
    let grid = CvGrid {
        k_values: vec![2, 3],
        seeds: vec![0, 1],
        n_folds: 5,
        folds_per_seed: Some(1),
    };
    let template = FitConfig {
        n_restarts: 1,
        max_iters: 60,
        ..FitConfig::default()
    };
    let run = || {
        run_cv_experiment(
            &inst.observed,
            &grid,
            &template,
            Some(&inst),
            &CvOptions::default(),
        )
        .unwrap()
    };
    let report = run();
    assert_eq!(report.trials.len(), 4);
    assert_eq!(report.records.len(), 8);
    assert_eq!(report.n_failed(), 0);
    for r in &report.records {
        assert!(r.auc_links.is_some() && r.p_at_k.is_some());
        assert_eq!(r.cosine_sim.is_some(), r.k == 2);
        assert_eq!(r.auc_mask.is_some(), r.method == Exposure::Exp);
    }
    assert_eq!(report.n_complete_trials(), 4);
    assert!(report.exp_wins() <= 4);
    assert!(report.summary().contains("of 4 paired trials"));

    let again = run();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    report.write_csv(&mut a).unwrap();
    again.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let mut j = Vec::new();
    report.write_jsonl(&mut j).unwrap();
    assert_eq!(String::from_utf8(j).unwrap().lines().count(), 8);
}

#[test]
fn recommendations_are_ranked_unobserved_pairs() {
    let inst = instance(false, 6);
    let g = &inst.observed;
    let res = fit(g, &quick(2, false, Exposure::Exp), None).unwrap();
    let recs = recommend(&res, g, 15).unwrap();
    assert_eq!(recs.rows.len(), 15);
    assert!(!recs.truncated);
    for w in recs.rows.windows(2) {
        assert!(w[0].lambda > w[1].lambda || (w[0].lambda == w[1].lambda && w[0].q <= w[1].q));
    }
    assert!(recs.rows.iter().all(|r| g.weight(r.i, r.j) == 0));

    let all = recommend(&res, g, usize::MAX).unwrap();
    assert!(all.truncated);
    assert_eq!(all.rows.len(), g.n_pairs() - g.n_edges());

    let mut out = Vec::new();
    recs.write_csv(g, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 16);

    let base = fit(g, &quick(2, false, Exposure::NoExp), None).unwrap();
    assert!(matches!(recommend(&base, g, 5), Err(Error::Protocol(_))));
}

#[test]
fn fit_outputs_serialise() {
    let inst = instance(false, 7);
    let g = &inst.observed;
    let res = fit(g, &quick(2, false, Exposure::Exp), None).unwrap();
    let mut trace = Vec::new();
    res.write_trace_csv(&mut trace).unwrap();
    let trace = String::from_utf8(trace).unwrap();
    assert_eq!(trace.lines().count(), res.bound_trace.len() + 1);
    let mut q = Vec::new();
    res.write_q(g, &mut q).unwrap();
    let q = String::from_utf8(q).unwrap();
    assert_eq!(q.lines().count(), g.n_pairs() - g.n_edges());
    assert_eq!(res.restart_bounds.len(), 2);
    assert_eq!(res.final_bound, res.restart_bounds[res.restart_index]);
}

#[test]
fn export_writes_instance_files() {
    let inst = instance(false, 8);
    let dir = tempfile::tempdir().unwrap();
    inst.export(dir.path()).unwrap();
    let read =
        |name: &str| std::io::BufReader::new(std::fs::File::open(dir.path().join(name)).unwrap());
    let observed = expocd::load_edge_list(read("observed.tsv"), false).unwrap();
    assert_eq!(
        observed.edges().collect::<Vec<_>>(),
        inst.observed.edges().collect::<Vec<_>>()
    );
    let mask = expocd::ExposureMask::read_pairs(read("mask.txt"), 60, false).unwrap();
    assert_eq!(mask, inst.mask);
    let state = LatentState::read_text(read("true_state.txt")).unwrap();
    assert_eq!(state.u, inst.true_state.u);
}
