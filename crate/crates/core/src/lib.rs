//! Tumor-level content-based retrieval over 3D volumes.
//!
//! Image embeddings from a prompt-conditioned 3D encoder and radiomics
//! embeddings from a set encoder over handcrafted features are aligned in one
//! latent space with a multi-positive contrastive loss. A reference database of
//! image embeddings can then be queried with an image and a point prompt, with
//! any subset of the 72 radiomics features, with an anatomical position, or
//! with features and position together.

pub mod ape;
pub mod dataset;
pub mod eval;
pub mod index;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod radiomics;
pub mod train;
pub mod volume;
