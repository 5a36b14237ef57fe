//! Joint contrastive representation learning and novel category discovery.
//!
//! A model is trained on a mix of labelled items from known classes and
//! unlabelled items from new classes. Contrastive learning with instance and
//! category discrimination shapes a shared representation; winner-take-all
//! hash codes of that representation provide pairwise pseudo-labels that
//! train a clustering head with binary cross-entropy. Clusters are scored
//! with Hungarian-matched accuracy.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pairing;
pub mod trainer;

pub use error::{NcdError, Result};
