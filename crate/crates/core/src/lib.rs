//! Overlapping community detection with explicit exposure.
//!
//! A zero in an observed network can mean two nodes have no affinity or
//! simply never met. The model pairs a Poisson mixed-membership generator
//! (`λ_ij = u_i · w · u_j`) with a Bernoulli exposure mask of prior
//! `μ_i μ_j`, and fits memberships, affinities, propensities and the
//! per-pair exposure posterior `Q_ij` by EM.

pub mod em;
pub mod error;
pub mod eval;
pub mod gml;
pub mod graph;
pub mod model;
pub mod seeds;
pub mod synth;

pub use em::{fit, Exposure, FitConfig, FitResult};
pub use error::{Error, Result};
pub use gml::load_gml_subset;
pub use graph::{load_edge_list, mean_degree, ExposureMask, ObservedGraph, PairMask};
pub use model::{LatentState, VariationalPosterior};
pub use synth::{generate, SynthConfig, SyntheticInstance};
