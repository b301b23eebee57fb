//! TOML configuration files.
//!
//! The file mirrors [`EnsembleSpec`] with the scalar ensemble settings
//! gathered under `[ensemble]`:
//!
//! ```toml
//! [ensemble]
//! n_particles = 1000
//! box_side = 10.0
//! scale_fast = 1.0
//! scale_heat = 1.0
//! rng_seed = 7
//!
//! [[species]]
//! type_id = 1
//! mass = 1.0
//! dof = 3
//! chem_energy = 0.0
//!
//! [rates]
//! unary = [[0.0, 1.0], [1.0, 0.0]]
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use kinchem_core::spec::{EnsembleSpec, InitialDistribution, RateTable, SpeciesSpec, ValidationReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config:\n{0}")]
    Invalid(ValidationReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleSection {
    n_particles: usize,
    box_side: f64,
    scale_fast: f64,
    scale_heat: f64,
    rng_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    ensemble: EnsembleSection,
    species: Vec<SpeciesSpec>,
    rates: RateTable,
    initial_distribution: InitialDistribution,
}

impl From<&EnsembleSpec> for ConfigFile {
    fn from(s: &EnsembleSpec) -> Self {
        Self {
            ensemble: EnsembleSection {
                n_particles: s.n_particles,
                box_side: s.box_side,
                scale_fast: s.scale_fast,
                scale_heat: s.scale_heat,
                rng_seed: s.rng_seed,
            },
            species: s.species.clone(),
            rates: s.rates.clone(),
            initial_distribution: s.initial_distribution.clone(),
        }
    }
}

impl From<ConfigFile> for EnsembleSpec {
    fn from(f: ConfigFile) -> Self {
        Self {
            n_particles: f.ensemble.n_particles,
            box_side: f.ensemble.box_side,
            species: f.species,
            rates: f.rates,
            scale_fast: f.ensemble.scale_fast,
            scale_heat: f.ensemble.scale_heat,
            rng_seed: f.ensemble.rng_seed,
            initial_distribution: f.initial_distribution,
        }
    }
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<EnsembleSpec, ConfigError> {
    let file: ConfigFile = toml::from_str(text)?;
    let spec = EnsembleSpec::from(file);
    let report = spec.validate();
    if !report.is_valid() {
        return Err(ConfigError::Invalid(report));
    }
    Ok(spec)
}

/// Serializes a spec. Seeds above `i64::MAX` cannot be written, since TOML
/// integers are signed 64-bit.
pub fn config_to_string(spec: &EnsembleSpec) -> Result<String, ConfigError> {
    Ok(toml::to_string(&ConfigFile::from(spec))?)
}

pub fn load_config(path: &Path) -> Result<EnsembleSpec, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text)
}

pub fn save_config(spec: &EnsembleSpec, path: &Path) -> Result<(), ConfigError> {
    let text = config_to_string(spec)?;
    fs::write(path, text).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
}
