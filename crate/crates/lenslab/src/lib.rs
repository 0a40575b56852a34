//! A desk-scale text-to-image laboratory.
//!
//! The pipeline trains a small transformer text encoder and a conditional
//! denoising diffusion model over a synthetic colored-shapes world, then
//! generates images from *intermediate* encoder layers by routing each
//! layer's hidden state through the final layer norm into the sampler.
//! Programmatic annotation and rank statistics turn the resulting image
//! grids into per-layer emergence curves, precedence tables and a failure
//! taxonomy.

pub mod annotator;
pub mod imgio;
pub mod numerics;
pub mod provenance;
pub mod scenelang;
