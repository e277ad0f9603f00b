//! Metrics and experiment protocols.

mod metrics;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

pub use metrics::{
    auc, community_similarity, link_scores, mask_auc, max_weight_assignment, precision_at_k,
    random_baseline_from_degrees, random_baseline_p_at_k, HeldExposure, PrecisionAtK, ScoredPair,
};

use crate::em::{fit, Exposure, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::graph::{make_cv_folds, ObservedGraph, PairMask};
use crate::seeds::derive_seed;
use crate::synth::SyntheticInstance;

#[derive(Clone, Debug, PartialEq)]
pub struct CvGrid {
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    /// Run only the first `folds_per_seed` folds of each split (all when `None`).
    pub folds_per_seed: Option<usize>,
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Validation("grid needs K values and seeds".into()));
        }
        if self.k_values.contains(&0) || self.n_folds < 2 || self.folds_per_seed == Some(0) {
            return Err(Error::Validation("invalid grid sizes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct CvOptions {
    pub held_exposure: HeldExposure,
    /// Restrict the mask AUC to pairs without an observed edge.
    pub mask_auc_unobserved_only: bool,
    pub p_at_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvRecord {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub fold: usize,
    pub method: Exposure,
    pub auc_links: Option<f64>,
    pub auc_mask: Option<f64>,
    pub cosine_sim: Option<f64>,
    pub p_at_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedTrial {
    pub k: usize,
    pub seed: u64,
    pub fold: usize,
    pub exp_auc: Option<f64>,
    pub noexp_auc: Option<f64>,
}

impl PairedTrial {
    /// `Some(true)` when exposure strictly wins; `None` if either side failed.
    pub fn exp_wins(&self) -> Option<bool> {
        Some(self.exp_auc? > self.noexp_auc?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CvReport {
    pub records: Vec<CvRecord>,
    pub trials: Vec<PairedTrial>,
}

pub const CV_CSV_HEADER: &str = "K,seed,fold,method,auc_links,auc_mask,cosine_sim,p_at_k";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

impl CvReport {
    pub fn exp_wins(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.exp_wins() == Some(true))
            .count()
    }

    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn n_complete_trials(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.exp_wins().is_some())
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CV_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k,
                r.seed,
                r.fold,
                r.method,
                opt(r.auc_links),
                opt(r.auc_mask),
                opt(r.cosine_sim),
                opt(r.p_at_k)
            )?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            writeln!(out)?;
        }
        Ok(())
    }

    /// One-line summary of the paired comparison.
    pub fn summary(&self) -> String {
        format!(
            "EXP beats NoEXP on link AUC in {} of {} paired trials ({} failed records)",
            self.exp_wins(),
            self.trials.len(),
            self.n_failed()
        )
    }
}

/// Link AUC of a fit on the pairs hidden by `mask`.
pub fn held_out_auc(
    result: &FitResult,
    g: &ObservedGraph,
    mask: &PairMask,
    held_exposure: HeldExposure,
) -> Result<f64> {
    let scored = link_scores(result, g, mask, mask.held_pairs(), held_exposure)?;
    auc(&scored)
}

struct TrialSpec {
    k: usize,
    seed: u64,
    fold: usize,
    mask_index: usize,
}

/// Cross-validated comparison of the models with and without exposure.
/// Each `(K, seed, fold)` fits both on the same training pairs from the
/// same derived fit seed. Failing fits are recorded, not propagated.
pub fn run_cv_experiment(
    g: &ObservedGraph,
    grid: &CvGrid,
    template: &FitConfig,
    truth: Option<&SyntheticInstance>,
    options: &CvOptions,
) -> Result<CvReport> {
    grid.validate()?;
    template.validate()?;
    let per_seed = grid
        .folds_per_seed
        .unwrap_or(grid.n_folds)
        .min(grid.n_folds);
    let mut masks: Vec<PairMask> = Vec::new();
    let mut specs = Vec::new();
    for &seed in &grid.seeds {
        let folds = make_cv_folds(g, grid.n_folds, derive_seed(seed, "folds", &[]))?;
        let base = masks.len();
        masks.extend(folds.into_iter().take(per_seed));
        for &k in &grid.k_values {
            for fold in 0..per_seed {
                specs.push(TrialSpec {
                    k,
                    seed,
                    fold,
                    mask_index: base + fold,
                });
            }
        }
    }
    let p_at_k = if options.p_at_k == 0 {
        20
    } else {
        options.p_at_k
    };

    let outcomes: Vec<(CvRecord, CvRecord)> = specs
        .par_iter()
        .map(|spec| {
            let mask = &masks[spec.mask_index];
            let fit_seed = derive_seed(spec.seed, "fit", &[spec.k as u64, spec.fold as u64]);
            let run = |exposure: Exposure| -> CvRecord {
                let cfg = FitConfig {
                    k_communities: spec.k,
                    directed: g.is_directed(),
                    exposure,
                    seed: fit_seed,
                    ..template.clone()
                };
                let mut record = CvRecord {
                    k: spec.k,
                    seed: spec.seed,
                    fold: spec.fold,
                    method: exposure,
                    auc_links: None,
                    auc_mask: None,
                    cosine_sim: None,
                    p_at_k: None,
                    error: None,
                };
                let outcome = (|| -> Result<()> {
                    let res = fit(g, &cfg, Some(mask))?;
                    record.auc_links = Some(held_out_auc(&res, g, mask, options.held_exposure)?);
                    if let Some(inst) = truth {
                        if exposure == Exposure::Exp {
                            record.auc_mask = Some(mask_auc(
                                &res,
                                &inst.mask,
                                &inst.observed,
                                options.mask_auc_unobserved_only,
                            )?);
                        }
                        if res.state.k() == inst.true_state.k() {
                            record.cosine_sim =
                                Some(community_similarity(&res.state.u, &inst.true_state.u)?);
                        }
                        record.p_at_k = Some(precision_at_k(&res, inst, p_at_k)?.value);
                    }
                    Ok(())
                })();
                if let Err(e) = outcome {
                    log::warn!(
                        "trial K={} seed={} fold={} {exposure} failed: {e}",
                        spec.k,
                        spec.seed,
                        spec.fold
                    );
                    record.error = Some(e.to_string());
                }
                record
            };
            (run(Exposure::Exp), run(Exposure::NoExp))
        })
        .collect();

    let mut report = CvReport::default();
    for (exp, noexp) in outcomes {
        report.trials.push(PairedTrial {
            k: exp.k,
            seed: exp.seed,
            fold: exp.fold,
            exp_auc: exp.auc_links,
            noexp_auc: noexp.auc_links,
        });
        report.records.push(exp);
        report.records.push(noexp);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recommendations {
    pub rows: Vec<Recommendation>,
    /// Set when fewer candidates existed than were requested.
    pub truncated: bool,
}

impl Recommendations {
    /// `rank,node_i,node_j,lambda,Q`, external labels where the graph has them.
    pub fn write_csv<W: Write>(&self, g: &ObservedGraph, mut out: W) -> Result<()> {
        writeln!(out, "rank,node_i,node_j,lambda,Q")?;
        for (rank, r) in self.rows.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                rank + 1,
                g.label(r.i),
                g.label(r.j),
                r.lambda,
                r.q
            )?;
        }
        Ok(())
    }
}

/// Unobserved pairs ranked by affinity `λ` (descending), ties broken towards
/// low exposure `Q`, then by pair index.
pub fn recommend(result: &FitResult, g: &ObservedGraph, top_n: usize) -> Result<Recommendations> {
    if result.exposure != Exposure::Exp {
        return Err(Error::Protocol(
            "recommendations need an exposure fit; the baseline has no Q".into(),
        ));
    }
    let mut cands: Vec<Recommendation> = g
        .pairs()
        .filter(|&(i, j)| g.weight(i, j) == 0)
        .map(|(i, j)| Recommendation {
            i,
            j,
            lambda: result.lambda(i, j),
            q: result.posterior.get(i, j),
        })
        .collect();
    cands.sort_by(|a, b| {
        b.lambda
            .total_cmp(&a.lambda)
            .then(a.q.total_cmp(&b.q))
            .then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    let truncated = cands.len() < top_n;
    if truncated {
        log::warn!(
            "only {} candidate pairs for {top_n} recommendations",
            cands.len()
        );
    }
    cands.truncate(top_n);
    Ok(Recommendations {
        rows: cands,
        truncated,
    })
}
