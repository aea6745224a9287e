//! Training-data purification toolkit: perturb an untrusted dataset until its
//! feature distribution matches a trusted reference set (Wasserstein-distance
//! minimization through a gradient-penalized critic), plus the detectors,
//! data manipulations, probes, and exact-transport oracles needed to
//! evaluate the whole pipeline.
//!
//! Numeric kernels are generic over the scalar type (`f32`/`f64`) through
//! the [`real::Real`] trait; the pipeline aliases below fix `f64`.

pub mod critic;
pub mod data;
pub mod detect;
pub mod extractor;
pub mod io_util;
pub mod manip;
pub mod ot;
pub mod probe;
pub mod purify;
pub mod real;
pub mod rng;
pub mod special;

pub use real::Real;

/// Working scalar for the pipeline.
pub type F = f64;

pub type CriticF = critic::Critic<F>;
pub type ExtractorF = extractor::FeatureExtractor<F>;
pub type ProbeF = probe::LinearProbe<F>;
pub type MarkSetF = manip::MarkSet<F>;
pub type PurifyConfigF = purify::PurifyConfig<F>;
