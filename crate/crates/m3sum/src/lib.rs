//! Many-to-many multimodal summarization: a gated text-vision transformer
//! trained with mutual distillation between a monolingual teacher path and a
//! cross-lingual student path, plus a target-oriented contrastive objective.
//!
//! Everything runs on a small deterministic autodiff substrate; no external
//! tensor or ML dependencies.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
