//! The message-passing potential-energy model: embedding, stacked
//! interaction blocks (Hadamard variant, plus the original bilinear
//! variant for benchmarking), output blocks, energy/force readout, and an
//! optional mean-variance head.

mod bench;
mod checkpoint;
mod forward;
mod params;

pub use bench::{time_combination, triplet_combination_flops, BenchReport};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    build_batch, build_forward, forward_energy, mve_forward, predict, predict_forces, GraphBatch,
    ModelGraph,
};
pub(crate) use forward::record_forward;
pub use params::{Param, ParameterStore};

use crate::basis::BasisConfig;
use crate::error::{Error, Result};

/// Which interaction block the model stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    /// Hadamard-product triplet combination with down/upprojection.
    Hadamard,
    /// Original bilinear-tensor combination; benchmark variant only.
    Bilinear,
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Message embedding width H.
    pub hidden_dim: usize,
    /// Atom embedding width in the output blocks.
    pub out_emb_dim: usize,
    /// Width of the downprojected per-triplet embeddings.
    pub triplet_dim: usize,
    /// Number of interaction blocks.
    pub num_blocks: usize,
    pub basis: BasisConfig,
    /// Elements with atomic number 1..=num_elements are supported.
    pub num_elements: usize,
    /// Add a second output head predicting a per-molecule sigma_E.
    pub mve_head: bool,
    pub interaction_kind: InteractionKind,
    /// Width of the angular-basis projection in the bilinear variant.
    pub num_bilinear: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            out_emb_dim: 256,
            triplet_dim: 64,
            num_blocks: 4,
            basis: BasisConfig::default(),
            num_elements: 8,
            mve_head: false,
            interaction_kind: InteractionKind::Hadamard,
            num_bilinear: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("out_emb_dim", self.out_emb_dim),
            ("triplet_dim", self.triplet_dim),
            ("num_blocks", self.num_blocks),
            ("num_elements", self.num_elements),
            ("num_bilinear", self.num_bilinear),
        ] {
            if v < 1 {
                return Err(Error::Input(format!("{name} must be >= 1")));
            }
        }
        if self.triplet_dim > self.hidden_dim {
            return Err(Error::Input(format!(
                "triplet_dim {} must not exceed hidden_dim {}",
                self.triplet_dim, self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Output heads per atom: energy, plus sigma when the MVE head is on.
    pub fn num_heads(&self) -> usize {
        if self.mve_head {
            2
        } else {
            1
        }
    }
}

/// Model output for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted energy, eV.
    pub energy: f64,
    /// Predicted forces, eV/Angstrom, when requested.
    pub forces: Option<Vec<[f64; 3]>>,
    /// Predicted energy uncertainty (standard deviation), eV.
    pub sigma_e: Option<f64>,
    /// Per-atom-component force uncertainties, eV/Angstrom. Only
    /// ensembles produce this; the mean-variance head cannot.
    pub sigma_f: Option<Vec<[f64; 3]>>,
}
