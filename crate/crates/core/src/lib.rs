//! Counterfactually fair anomaly detection.
//!
//! The pipeline has two phases. Phase one learns a structural causal model
//! from observational data: a variable-wise graph autoencoder discovers a
//! weighted DAG under an acyclicity constraint, a refit decoder turns it into
//! a faithful generalized-linear SCM, and counterfactual samples are produced
//! by flipping the sensitive attribute and propagating the change through the
//! learned equations. Phase two trains an autoencoder anomaly detector on
//! normal samples, then fine-tunes it adversarially so a discriminator cannot
//! tell factual from counterfactual embeddings, making anomaly scores
//! insensitive to the sensitive attribute.
//!
//! Modules follow the pipeline order:
//! - [`numerics`]: matrices, autodiff, acyclicity penalty, rng, quantiles.
//! - [`scm`]: synthetic benchmarks with ground-truth counterfactuals.
//! - [`structure_learning`]: graph autoencoder and decoder refit.
//! - [`counterfactual`]: counterfactual generation from a learned SCM.
//! - [`detector`]: autoencoder detector and adversarial fine-tuning.
//! - [`eval`]: detection and fairness metrics, threshold sweeps.
//! - [`datasets`]: CSV ingestion, preprocessing, splits.

pub mod numerics;
pub mod scm;
pub mod counterfactual;
pub mod datasets;
pub mod detector;
pub mod eval;
pub mod structure_learning;
