//! Importance sampling of dependent-site substitution likelihoods.
//!
//! A context-dependent CTMC on sequences is estimated by drawing
//! endpoint-conditioned paths from the matching independent-site process and
//! reweighting them. The crate also evaluates the sample-size bounds for the
//! estimator and ships brute-force oracles for small instances.

pub mod bounds;
pub mod config;
pub mod dsm;
pub mod error;
pub mod estimator;
pub mod ism;
pub mod oracle;
pub mod rng;
pub mod seq;
pub mod series;

pub use config::ModelConfig;
pub use dsm::{make_cpg_model, ContextModel, CpgParams, DsmModel};
pub use error::{Error, PathFault, Result};
pub use estimator::{estimate, EstimateReport, RunConfig, WeightSample};
pub use ism::{IsmModel, JointSampler, SiteGenerator, SiteKernel};
pub use seq::{Alphabet, Jump, Path, Sequence, SequencePair};
