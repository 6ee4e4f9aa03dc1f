//! Risk-based active learning for monitoring decision processes.
//!
//! The library pairs an expected-value-of-perfect-information (EVPI)
//! engine over a single-step maintenance influence diagram with streaming
//! classifiers: sparse multiclass relevance vector machines in two
//! sparsity schemes and a conjugate Gaussian-mixture baseline. A campaign
//! harness walks a monitoring stream, queries ground-truth labels when the
//! EVPI of a belief exceeds the inspection cost, retrains after every
//! query, and logs everything needed to reproduce decision-accuracy and
//! f1 curves, query histograms, and per-observation query frequencies
//! over repeated seeded runs.

pub mod active;
pub mod data;
pub mod decision;
pub mod gmm;
pub mod kernel;
pub mod metrics;
pub mod mrvm;
pub mod quadrature;
