//! Synthetic instances: memberships from a symmetric Dirichlet, an
//! assortative affinity matrix, Beta-distributed exposure propensities,
//! Poisson ground-truth counts and a Bernoulli exposure mask.
//!
//! Random streams come from `ChaCha8Rng` (rand_chacha 0.9) and the Gamma,
//! Beta and Poisson samplers of rand_distr 0.5; instances are reproducible
//! as long as those versions are pinned.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::graph::{all_pairs, ExposureMask, ObservedGraph};
use crate::model::{lambda_pair, LatentState};

/// Clamp applied to the propensities stored in the generating state.
const TRUE_STATE_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub k_communities: usize,
    pub dirichlet_alpha: f64,
    /// Off-diagonal over on-diagonal affinity.
    pub assortative_ratio: f64,
    /// On-diagonal affinity; sets the density.
    pub w_scale: f64,
    pub beta_a: f64,
    pub beta_b: f64,
    pub directed: bool,
    /// Forces `μ ≡ 1`, i.e. no dilution.
    pub full_exposure: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 500,
            k_communities: 3,
            dirichlet_alpha: 1.0,
            assortative_ratio: 0.001,
            w_scale: 1.0,
            beta_a: 2.0,
            beta_b: 1.0,
            directed: false,
            full_exposure: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 || self.k_communities == 0 {
            return Err(Error::Validation(
                "need at least 2 nodes and 1 community".into(),
            ));
        }
        let positive = [self.dirichlet_alpha, self.w_scale, self.beta_a, self.beta_b];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::Validation(
                "synthetic parameters must be positive".into(),
            ));
        }
        if !(self.assortative_ratio > 0.0 && self.assortative_ratio <= 1.0) {
            return Err(Error::Validation(
                "assortative ratio must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn affinity(&self, scale: f64) -> Array2<f64> {
        let k = self.k_communities;
        Array2::from_shape_fn((k, k), |(a, b)| {
            if a == b {
                scale
            } else {
                scale * self.assortative_ratio
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub ground_truth: ObservedGraph,
    pub mask: ExposureMask,
    pub observed: ObservedGraph,
    pub true_state: LatentState,
}

impl SyntheticInstance {
    /// Writes `observed.tsv`, `ground_truth.tsv`, `mask.txt` and
    /// `true_state.txt` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        self.observed.write_edge_list(open("observed.tsv")?)?;
        self.ground_truth
            .write_edge_list(open("ground_truth.tsv")?)?;
        self.mask.write_pairs(open("mask.txt")?)?;
        self.true_state.write_text(open("true_state.txt")?)?;
        Ok(())
    }
}

fn dirichlet_row<R: Rng + ?Sized>(k: usize, gamma: &Gamma<f64>, rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

struct Latents {
    u: Array2<f64>,
    v: Option<Array2<f64>>,
    mu: Array1<f64>,
}

/// Memberships and propensities; the first draws of the seeded stream.
fn sample_latents(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Latents> {
    let (n, k) = (cfg.n_nodes, cfg.k_communities);
    let gamma = Gamma::new(cfg.dirichlet_alpha, 1.0)
        .map_err(|e| Error::Validation(format!("dirichlet alpha: {e}")))?;
    let draw_memberships = |rng: &mut ChaCha8Rng| {
        let mut m = Array2::zeros((n, k));
        for i in 0..n {
            for (c, x) in dirichlet_row(k, &gamma, rng).into_iter().enumerate() {
                m[[i, c]] = x;
            }
        }
        m
    };
    let u = draw_memberships(rng);
    let v = cfg.directed.then(|| draw_memberships(rng));
    let beta = Beta::new(cfg.beta_a, cfg.beta_b)
        .map_err(|e| Error::Validation(format!("beta parameters: {e}")))?;
    let mu = Array1::from_shape_simple_fn(n, || beta.sample(rng));
    let mu = if cfg.full_exposure {
        Array1::ones(n)
    } else {
        mu
    };
    Ok(Latents { u, v, mu })
}

/// Draws one instance.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let Latents { u, v, mu } = sample_latents(cfg, &mut rng)?;
    let n = cfg.n_nodes;
    let mut true_state = LatentState {
        u,
        v,
        w: cfg.affinity(cfg.w_scale),
        mu: mu.clone(),
        epsilon: TRUE_STATE_EPSILON,
    };

    let pairs: Vec<(usize, usize)> = all_pairs(n, cfg.directed).collect();
    let mut truth = Vec::new();
    for &(i, j) in &pairs {
        let lam = lambda_pair(&true_state, i, j);
        if lam > 0.0 {
            let count = Poisson::new(lam)
                .map_err(|e| Error::Validation(format!("poisson rate {lam}: {e}")))?
                .sample(&mut rng) as u64;
            if count > 0 {
                truth.push((i, j, count));
            }
        }
    }
    let mut mask = ExposureMask::new(n, cfg.directed);
    for &(i, j) in &pairs {
        let p = mu[i] * mu[j];
        if rng.random::<f64>() < p {
            mask.set(i, j, true);
        }
    }
    let observed: Vec<(usize, usize, u64)> = truth
        .iter()
        .copied()
        .filter(|&(i, j, _)| mask.get(i, j) == 1)
        .collect();

    let (lo, hi) = (TRUE_STATE_EPSILON, 1.0 - TRUE_STATE_EPSILON);
    true_state.mu.mapv_inplace(|m| m.clamp(lo, hi));

    Ok(SyntheticInstance {
        ground_truth: ObservedGraph::from_weighted_edges(n, cfg.directed, truth)?,
        mask,
        observed: ObservedGraph::from_weighted_edges(n, cfg.directed, observed)?,
        true_state,
    })
}

/// Expected mean degree of the observed graph for `cfg` as it stands,
/// using `E[A_ij] = λ_ij μ_i μ_j` over the latents the seed would draw.
pub fn expected_mean_degree(cfg: &SynthConfig) -> Result<f64> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lat = sample_latents(cfg, &mut rng)?;
    Ok(expected_degree_at(cfg, &lat, cfg.w_scale))
}

fn expected_degree_at(cfg: &SynthConfig, lat: &Latents, scale: f64) -> f64 {
    let state = LatentState {
        u: lat.u.clone(),
        v: lat.v.clone(),
        w: cfg.affinity(scale),
        mu: lat.mu.clone(),
        epsilon: TRUE_STATE_EPSILON,
    };
    let total: f64 = all_pairs(cfg.n_nodes, cfg.directed)
        .map(|(i, j)| lambda_pair(&state, i, j) * lat.mu[i] * lat.mu[j])
        .sum();
    let per_pair = if cfg.directed { 1.0 } else { 2.0 };
    per_pair * total / cfg.n_nodes as f64
}

/// On-diagonal affinity giving an expected observed mean degree of
/// `target` for the latents `cfg.seed` draws. The expectation is linear in
/// the scale, so this is a single division.
pub fn target_scale(cfg: &SynthConfig, target_mean_degree: f64) -> Result<f64> {
    if !(target_mean_degree > 0.0 && target_mean_degree.is_finite()) {
        return Err(Error::Validation(
            "target mean degree must be positive".into(),
        ));
    }
    let probe = SynthConfig {
        w_scale: 1.0,
        ..cfg.clone()
    };
    probe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lat = sample_latents(&probe, &mut rng)?;
    let unit = expected_degree_at(&probe, &lat, 1.0);
    if !(unit > 0.0) {
        return Err(Error::Validation(
            "target unattainable: expected degree is zero at any positive scale".into(),
        ));
    }
    Ok(target_mean_degree / unit)
}
