//! Cross-domain cross-modal retrieval with source sample selection and
//! weighted adversarial adaptation.
//!
//! A source domain provides paired recipe/image data; the target domain has
//! recipes only. Training runs in two stages: a supervised cross-modal
//! embedding is pre-trained on the source pairs, then adapted with a
//! weighted triplet loss and a weighted domain-adversarial loss, where
//! per-sample weights come from recipe similarities under the frozen
//! pre-trained encoder. Evaluation reports MedR and R@K over repeated
//! retrieval pools.

pub mod ablation;
pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod kv;
pub mod losses;
pub mod matrix;
pub mod rng;
pub mod selection;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
