//! Open relation extraction with an overlap-aware tagging scheme.
//!
//! The pipeline: bootstrap a training corpus by intersecting the outputs of
//! several extraction systems ([`corpus`]), encode each sentence with a
//! stack-structured recurrent encoder ([`onlstm`]) refined by argument-aware
//! attention and convolution ([`dualaware`]), and decode per-pair relation
//! tags with a linear-chain CRF ([`crf`]). [`numcore`] supplies the tensor
//! and reverse-mode autodiff machinery everything else trains on; [`model`]
//! ties the layers into a trainable tagger and [`eval`] scores extractions.

pub mod corpus;
pub mod crf;
pub mod dualaware;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod onlstm;
pub mod tagspace;
