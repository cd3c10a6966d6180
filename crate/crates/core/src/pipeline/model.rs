//! Trained multi-phase models and their on-disk format.
//!
//! Models are stored as pretty-printed JSON: a header with format name and
//! version, provenance, the autoencoder (row-major matrices) and one section
//! per phase with the library flags, threshold, term names and the dense
//! `p × l` coefficient matrix. Floats are written in shortest round-trip
//! form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{dataset_fingerprint, TrainingConfig};
use crate::autoencoder::AutoencoderParams;
use crate::data::{Dataset, Phase};
use crate::library::FunctionLibrarySpec;
use crate::serde_mat;
use crate::sindy::{PhaseModel, SparseCoefficients};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "symrom-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub robot: String,
    pub m: usize,
    pub dt: f64,
    pub jumps: usize,
    pub dataset_hash: String,
    pub seed: u64,
    pub config_hash: String,
    /// Hash of the model this one was fine-tuned from.
    #[serde(default)]
    pub parent_hash: Option<String>,
}

impl Provenance {
    pub fn new(dataset: &Dataset, config: &TrainingConfig, parent_hash: Option<String>) -> Self {
        Self {
            robot: dataset.metadata.robot.clone(),
            m: dataset.metadata.m,
            dt: dataset.metadata.dt,
            jumps: dataset.len(),
            dataset_hash: dataset_fingerprint(dataset),
            seed: config.seed,
            config_hash: config.hash(),
            parent_hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPhaseModel {
    pub autoencoder: AutoencoderParams,
    pub phases: Vec<PhaseModel>,
    pub provenance: Provenance,
}

impl MultiPhaseModel {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseModel> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    pub fn phase_labels(&self) -> Vec<Phase> {
        self.phases.iter().map(|p| p.phase).collect()
    }

    /// Active coefficients summed over phases.
    pub fn count_active(&self) -> usize {
        self.phases.iter().map(|p| p.coefficients.count_active()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.autoencoder.validate()?;
        let l = self.autoencoder.latent_dim();
        for (i, p) in self.phases.iter().enumerate() {
            if self.phases[..i].iter().any(|q| q.phase == p.phase) {
                return Err(Error::Config(format!("duplicate model for phase {}", p.phase)));
            }
            let c = &p.coefficients;
            let rows = c.library.term_count(l);
            if c.xi.shape() != (rows, l) {
                return Err(Error::shape(
                    "coefficient matrix",
                    format!("{rows}x{l}"),
                    format!("{}x{}", c.xi.nrows(), c.xi.ncols()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct AutoencoderSection {
    latent_dim: usize,
    full_dim: usize,
    #[serde(flatten)]
    params: AutoencoderParams,
}

#[derive(Serialize, Deserialize)]
struct PhaseSection {
    phase: Phase,
    library: FunctionLibrarySpec,
    threshold: f64,
    terms: Vec<String>,
    #[serde(with = "serde_mat::matrix")]
    xi: nalgebra::DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    provenance: Provenance,
    autoencoder: AutoencoderSection,
    phases: Vec<PhaseSection>,
}

fn to_file(model: &MultiPhaseModel) -> ModelFile {
    let l = model.autoencoder.latent_dim();
    ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        provenance: model.provenance.clone(),
        autoencoder: AutoencoderSection {
            latent_dim: l,
            full_dim: model.autoencoder.full_dim(),
            params: model.autoencoder.clone(),
        },
        phases: model
            .phases
            .iter()
            .map(|p| PhaseSection {
                phase: p.phase,
                library: p.coefficients.library.clone(),
                threshold: p.coefficients.threshold,
                terms: p.coefficients.library.term_names(l),
                xi: p.coefficients.xi.clone(),
            })
            .collect(),
    }
}

pub fn model_to_string(model: &MultiPhaseModel) -> String {
    let mut s = serde_json::to_string_pretty(&to_file(model)).expect("model serialises");
    s.push('\n');
    s
}

/// SHA-256 of the serialised model.
pub fn model_hash(model: &MultiPhaseModel) -> String {
    hex::encode(Sha256::digest(model_to_string(model).as_bytes()))
}

pub fn save_model(model: &MultiPhaseModel, path: &Path) -> Result<()> {
    model.validate()?;
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn parse_error(path: &Path, text: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn model_from_str(text: &str, path: &Path) -> Result<MultiPhaseModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(path, text, e))?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(MODEL_FORMAT) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("not a {MODEL_FORMAT} file"),
        });
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(MODEL_VERSION)) {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version.map_or_else(|| "none".to_string(), |v| v.to_string()),
            expected: u64::from(MODEL_VERSION),
        });
    }
    // parse from the text again so structural errors carry a position
    let file: ModelFile = serde_json::from_str(text).map_err(|e| parse_error(path, text, e))?;
    let ae = file.autoencoder;
    if ae.params.w_e.shape() != (ae.latent_dim, ae.full_dim) {
        return Err(Error::shape(
            "W_e",
            format!("{}x{}", ae.latent_dim, ae.full_dim),
            format!("{}x{}", ae.params.w_e.nrows(), ae.params.w_e.ncols()),
        ));
    }
    let l = ae.latent_dim;
    let mut phases = Vec::with_capacity(file.phases.len());
    for p in file.phases {
        let expected = p.library.term_names(l);
        if p.terms != expected {
            return Err(Error::Config(format!(
                "term list of phase {} does not match its library flags",
                p.phase
            )));
        }
        phases.push(PhaseModel {
            phase: p.phase,
            coefficients: SparseCoefficients {
                mask: p.xi.map(|v| v != 0.0),
                xi: p.xi,
                library: p.library,
                threshold: p.threshold,
            },
        });
    }
    let model = MultiPhaseModel {
        autoencoder: ae.params,
        phases,
        provenance: file.provenance,
    };
    model.validate()?;
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<MultiPhaseModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, path)
}
