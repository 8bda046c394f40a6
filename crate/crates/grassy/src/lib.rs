//! Molecular graph featurization and generation pipeline.
//!
//! The crate turns small molecular graphs into permutation-invariant
//! diffusion-wavelet scattering features, trains (variational) autoencoders
//! with an optional property-regression head on those features, trains a
//! latent-interpolation generator against a GCN discriminator, and scores
//! generated graphs with chemistry-motivated validity rules and latent-space
//! smoothness metrics.
//!
//! Module map:
//! - [`graph`]: molecular graph type, atom alphabet, lazy random-walk
//!   diffusion operator.
//! - [`smiles`]: restricted SMILES tokenizer and parser producing
//!   hydrogen-suppressed heavy-atom graphs.
//! - [`scattering`]: dyadic and learned diffusion-wavelet banks and
//!   scattering-moment features.
//! - [`autodiff`]: reverse-mode tape over dense f64 tensors.
//! - [`nn`]: dense layers, Adam, parameter blob serialization.
//! - [`latent`]: autoencoder / VAE with property-regression regularizer.
//! - [`gan`]: latent-interpolation generator and GCN discriminator.
//! - [`validity`]: adjacency thresholding, minimum cycle basis, validity
//!   rules.
//! - [`metrics`]: property error, kNN-graph Laplacian smoothness, latent
//!   export.
//! - [`pipeline`]: dataset records, run configuration, and the command
//!   entry points the CLI wraps.
//! - [`fixtures`]: small bundled molecule sets used by tests and demos.

pub mod autodiff;
pub mod fixtures;
pub mod gan;
pub mod graph;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scattering;
pub mod smiles;
pub mod validity;
