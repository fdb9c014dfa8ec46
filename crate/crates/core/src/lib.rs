//! Tile datasets, prompts, objectives, training and evaluation for mitosis
//! classification with vision-language models.

pub mod config;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod objectives;
pub mod pipeline;
pub mod prompts;
pub mod splits;
pub mod synth;
pub mod tilegeom;
pub mod types;

pub use types::{Label, PixelBox, SlideMetadata};
