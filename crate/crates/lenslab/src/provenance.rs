//! Identification of generated images across sweeps, annotation and analysis.

use serde::{Deserialize, Serialize};

/// Whether the conditioning went through the final layer norm (the standard
/// path) or bypassed it (the ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LensMode {
    WithLn,
    WithoutLn,
}

impl LensMode {
    pub fn name(&self) -> &'static str {
        match self {
            LensMode::WithLn => "with_ln",
            LensMode::WithoutLn => "without_ln",
        }
    }

    pub fn parse(s: &str) -> Option<LensMode> {
        match s {
            "with_ln" => Some(LensMode::WithLn),
            "without_ln" => Some(LensMode::WithoutLn),
            _ => None,
        }
    }
}

/// Complete provenance of one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_id: String,
    pub layer: usize,
    pub seed: u64,
    pub mode: LensMode,
}

impl Provenance {
    pub fn new(prompt_id: &str, layer: usize, seed: u64, mode: LensMode) -> Self {
        Provenance { prompt_id: prompt_id.to_string(), layer, seed, mode }
    }

    /// Archive-relative file stem, e.g. `L04_s0001_with_ln`.
    pub fn file_stem(&self) -> String {
        format!("L{:02}_s{:04}_{}", self.layer, self.seed, self.mode.name())
    }
}
