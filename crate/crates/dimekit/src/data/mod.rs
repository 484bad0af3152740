//! Dataset handling: extended-XYZ I/O, toy-potential generation, reference
//! energies, and dataset manifests.

pub mod elements;
pub mod extxyz;
pub mod reference;
pub mod toy;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use elements::{mass_of, symbol_to_z, z_to_symbol};
pub use extxyz::{parse_extxyz, read_extxyz_file, write_extxyz, write_extxyz_file};
pub use reference::{dataset_stats, fit_reference_energies, ResidualHistogram};
pub use toy::{
    build_collision_system, generate_collisions, labelled_config, relabel,
    toy_energy_forces, GenerationLog, MdState, PairParams, ToyPotentialConfig,
    EV_PER_AMU_A2_FS2,
};

use crate::error::{Error, Result};
use crate::geometry::AtomicConfiguration;

/// One split of a dataset: its name, backing file, and record count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    /// File name relative to the manifest's directory.
    pub file: String,
    pub records: usize,
}

/// One element present in the dataset, with its fitted reference energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementEntry {
    pub z: u32,
    pub symbol: String,
    /// Least-squares per-atom reference energy, eV.
    pub reference_energy: f64,
}

/// Manifest describing a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Graph cutoff the dataset is intended for, Angstrom.
    pub cutoff: f64,
    pub splits: Vec<SplitEntry>,
    pub elements: Vec<ElementEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff.is_finite() && self.cutoff > 0.0) {
            return Err(Error::Input(format!(
                "manifest cutoff must be positive and finite, got {}",
                self.cutoff
            )));
        }
        if self.splits.is_empty() {
            return Err(Error::Input("manifest needs at least one split".into()));
        }
        for (i, s) in self.splits.iter().enumerate() {
            if s.name.is_empty() || s.file.is_empty() {
                return Err(Error::Input("split names and files must be non-empty".into()));
            }
            for t in &self.splits[i + 1..] {
                if t.name == s.name {
                    return Err(Error::Input(format!("duplicate split name {:?}", s.name)));
                }
            }
        }
        for e in &self.elements {
            if z_to_symbol(e.z)? != e.symbol {
                return Err(Error::Input(format!(
                    "element entry Z={} does not match symbol {:?}",
                    e.z, e.symbol
                )));
            }
            if !e.reference_energy.is_finite() {
                return Err(Error::Input(format!(
                    "reference energy for {} is not finite",
                    e.symbol
                )));
            }
        }
        Ok(())
    }

    /// Reference energies keyed by atomic number.
    pub fn reference_energies(&self) -> BTreeMap<u32, f64> {
        self.elements.iter().map(|e| (e.z, e.reference_energy)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| Error::Input(format!("invalid manifest {}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Generate a dataset of collision snapshots, one extended-XYZ file per
/// split, plus a `manifest.toml` in `out_dir`.
///
/// `split_plan` lists `(name, trajectories)` per split. All splits share one
/// master seed but consume disjoint trajectory streams, and whole
/// trajectories are assigned to a single split so no split leaks into
/// another. Reference energies are fitted on the union of all records.
pub fn generate_dataset(
    cfg: &ToyPotentialConfig,
    seed: u64,
    split_plan: &[(String, usize)],
    cutoff: f64,
    out_dir: &Path,
) -> Result<(DatasetManifest, GenerationLog)> {
    if split_plan.is_empty() {
        return Err(Error::Input("at least one split is required".into()));
    }
    for (i, (name, n)) in split_plan.iter().enumerate() {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Input(format!(
                "split name {name:?} must be non-empty and use only [A-Za-z0-9_-]"
            )));
        }
        if *n == 0 {
            return Err(Error::Input(format!("split {name:?} needs at least one trajectory")));
        }
        for (other, _) in &split_plan[i + 1..] {
            if other == name {
                return Err(Error::Input(format!("duplicate split name {name:?}")));
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;

    let mut attempt = 0u64;
    let mut total_log = GenerationLog::default();
    let mut splits = Vec::new();
    let mut all_records: Vec<AtomicConfiguration> = Vec::new();
    for (name, n_traj) in split_plan {
        let (groups, log, next) = toy::generate_grouped(cfg, seed, *n_traj, attempt)?;
        attempt = next;
        total_log.trajectories += log.trajectories;
        total_log.discarded += log.discarded;
        total_log.snapshots += log.snapshots;
        let records: Vec<AtomicConfiguration> = groups.into_iter().flatten().collect();
        let file = format!("{name}.extxyz");
        write_extxyz_file(&out_dir.join(&file), &records)?;
        splits.push(SplitEntry { name: name.clone(), file, records: records.len() });
        all_records.extend(records);
    }

    let reference = fit_reference_energies(&all_records)?;
    let elements = reference
        .iter()
        .map(|(&z, &e)| {
            Ok(ElementEntry {
                z,
                symbol: z_to_symbol(z)?.to_string(),
                reference_energy: e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { cutoff, splits, elements };
    manifest.save(&out_dir.join("manifest.toml"))?;
    Ok((manifest, total_log))
}
