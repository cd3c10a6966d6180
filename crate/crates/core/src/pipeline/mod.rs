//! Three-step sequential training: autoencoder on one phase, decoder on all
//! phases, then per-phase sparse dynamics with the autoencoder frozen.

mod model;
mod selection;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{
    anchor_latent, continue_training, finetune_decoder, train_autoencoder, AutoencoderConfig, AutoencoderParams,
    LatentReference, LossHistory,
};
use crate::data::{Dataset, Phase, Split};
use crate::library::FunctionLibrarySpec;
use crate::sindy::{fit_metrics, fit_phase_model, FitMetrics, LatentPhaseData, PhaseModel, SindyConfig};
use crate::{Error, Result};

pub use model::{load_model, model_from_str, model_hash, model_to_string, save_model, MultiPhaseModel, Provenance, MODEL_FORMAT, MODEL_VERSION};
pub use selection::{l_mod, model_selection_scan, scan_cell, SelectionAggregate, SelectionReport, SelectionRow, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub latent_dim: usize,
    pub seed: u64,
    pub autoencoder: AutoencoderConfig,
    pub sindy: SindyConfig,
    pub library: FunctionLibrarySpec,
    /// Phase whose configurations train the encoder in step 1.
    pub step1_phase: Phase,
    /// Phases to fit in step 3; all phases present in the training split
    /// when empty.
    pub phases: Vec<Phase>,
    /// Complexity weight of the selection score.
    pub selection_lambda: f64,
    /// Learning-rate multiplier applied when fine-tuning an existing model.
    pub finetune_lr_scale: f64,
    /// Fixes the latent coordinate frame after step 1 so that the encoder
    /// matches this affine map on the training data as closely as possible.
    pub latent_reference: Option<LatentReference>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            seed: 0,
            autoencoder: AutoencoderConfig::default(),
            sindy: SindyConfig::default(),
            library: FunctionLibrarySpec::default(),
            step1_phase: Phase::Contact,
            phases: Vec::new(),
            selection_lambda: DEFAULT_LAMBDA,
            finetune_lr_scale: 0.1,
            latent_reference: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, full_dim: usize) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim > full_dim {
            return Err(Error::Config(format!(
                "latent dimension {} outside 1..={full_dim}",
                self.latent_dim
            )));
        }
        let ae = &self.autoencoder;
        for (name, v) in [
            ("learning rate", ae.learning_rate),
            ("finetune learning-rate scale", self.finetune_lr_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&ae.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", ae.momentum)));
        }
        if !(ae.decoder_ridge >= 0.0 && ae.decoder_ridge.is_finite()) {
            return Err(Error::Config(format!("decoder ridge must be >= 0, got {}", ae.decoder_ridge)));
        }
        if !(self.selection_lambda >= 0.0 && self.selection_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "selection lambda must be >= 0, got {}",
                self.selection_lambda
            )));
        }
        self.sindy.validate()?;
        self.library.validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Per-step record of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineLog {
    pub step1_history: LossHistory,
    pub step1_params: AutoencoderParams,
    /// All-phase reconstruction loss on the training split before and after
    /// the decoder refit.
    pub step2_loss: (f64, f64),
    pub step2_params: AutoencoderParams,
    pub phase_metrics: Vec<(Phase, FitMetrics)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub model: MultiPhaseModel,
    pub log: PipelineLog,
}

fn step<T>(index: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::NoPhaseData(_) | Error::Config(_)) => e,
        e => Error::Step {
            step: index,
            source: Box::new(e),
        },
    })
}

fn fit_phases(
    dataset: &Dataset,
    config: &TrainingConfig,
    params: &AutoencoderParams,
    warm: Option<&MultiPhaseModel>,
) -> Result<(Vec<PhaseModel>, Vec<(Phase, FitMetrics)>)> {
    let train = dataset.indices(Split::Train);
    let phases = if config.phases.is_empty() {
        dataset.phases_in(Split::Train)
    } else {
        config.phases.clone()
    };
    let mut models = Vec::with_capacity(phases.len());
    let mut metrics = Vec::with_capacity(phases.len());
    for phase in phases {
        let data = LatentPhaseData::collect(dataset, &train, phase, params)?;
        let mask = warm
            .and_then(|m| m.phase(phase))
            .filter(|pm| pm.coefficients.library == config.library && pm.coefficients.latent_dim() == params.latent_dim())
            .map(|pm| &pm.coefficients.mask);
        let model = fit_phase_model(params, &config.library, phase, &data, &config.sindy, mask)?;
        metrics.push((phase, fit_metrics(&model, params, &data)?));
        log::info!("step 3 [{phase}]: {} samples, {} active terms", data.len(), metrics.last().unwrap().1.active);
        models.push(model);
    }
    Ok((models, metrics))
}

fn stack_phase(dataset: &Dataset, split: Split, phase: Phase) -> DMatrix<f64> {
    dataset.stack_configurations(split, Some(&[phase]))
}

/// Runs the three training steps on the training split of `dataset`.
pub fn run_pipeline(dataset: &Dataset, config: &TrainingConfig) -> Result<PipelineOutput> {
    config.validate(dataset.full_dim())?;

    let contact = stack_phase(dataset, Split::Train, config.step1_phase);
    if contact.nrows() == 0 {
        return Err(Error::NoPhaseData(config.step1_phase));
    }
    let validation = stack_phase(dataset, Split::Validation, config.step1_phase);
    let ae_cfg = AutoencoderConfig {
        seed: config.seed,
        ..config.autoencoder.clone()
    };
    let fit = step(1, train_autoencoder(&contact, Some(&validation), config.latent_dim, &ae_cfg))?;
    log::info!(
        "step 1: reconstruction loss {:.3e} -> {:.3e}",
        fit.history.train.first().copied().unwrap_or(0.0),
        fit.history.train.last().copied().unwrap_or(0.0)
    );
    let mut step1 = fit.params;
    if let Some(reference) = &config.latent_reference {
        step1 = step(1, anchor_latent(&step1, reference, &contact))?;
    }

    let all = dataset.stack_configurations(Split::Train, None);
    let before = step1.recon_loss(&all);
    let step2 = step(2, finetune_decoder(&step1, &all, config.autoencoder.decoder_ridge))?;
    let after = step2.recon_loss(&all);
    log::info!("step 2: all-phase reconstruction loss {before:.3e} -> {after:.3e}");

    let (phases, phase_metrics) = step(3, fit_phases(dataset, config, &step2, None))?;
    let model = MultiPhaseModel {
        autoencoder: step2.clone(),
        phases,
        provenance: Provenance::new(dataset, config, None),
    };
    Ok(PipelineOutput {
        model,
        log: PipelineLog {
            step1_history: fit.history,
            step1_params: step1,
            step2_loss: (before, after),
            step2_params: step2,
            phase_metrics,
        },
    })
}

/// Resumes all three steps from `model` on a new dataset: gradient descent
/// with a reduced learning rate, a decoder refit, and sparse regression
/// warm-started from the existing supports.
pub fn fine_tune(model: &MultiPhaseModel, dataset: &Dataset, config: &TrainingConfig) -> Result<PipelineOutput> {
    if dataset.full_dim() != model.autoencoder.full_dim() {
        return Err(Error::shape(
            "fine-tuning dataset dimension",
            model.autoencoder.full_dim(),
            dataset.full_dim(),
        ));
    }
    let config = TrainingConfig {
        latent_dim: model.autoencoder.latent_dim(),
        ..config.clone()
    };
    config.validate(dataset.full_dim())?;

    let contact = stack_phase(dataset, Split::Train, config.step1_phase);
    if contact.nrows() == 0 {
        return Err(Error::NoPhaseData(config.step1_phase));
    }
    let validation = stack_phase(dataset, Split::Validation, config.step1_phase);
    let ae_cfg = AutoencoderConfig {
        learning_rate: config.autoencoder.learning_rate * config.finetune_lr_scale,
        seed: config.seed,
        ..config.autoencoder.clone()
    };
    let fit = step(1, continue_training(&model.autoencoder, &contact, Some(&validation), &ae_cfg))?;
    let step1 = fit.params;

    let all = dataset.stack_configurations(Split::Train, None);
    let before = step1.recon_loss(&all);
    let step2 = step(2, finetune_decoder(&step1, &all, config.autoencoder.decoder_ridge))?;
    let after = step2.recon_loss(&all);

    let (phases, phase_metrics) = step(3, fit_phases(dataset, &config, &step2, Some(model)))?;
    let tuned = MultiPhaseModel {
        autoencoder: step2.clone(),
        phases,
        provenance: Provenance::new(dataset, &config, Some(model_hash(model))),
    };
    Ok(PipelineOutput {
        model: tuned,
        log: PipelineLog {
            step1_history: fit.history,
            step1_params: step1,
            step2_loss: (before, after),
            step2_params: step2,
            phase_metrics,
        },
    })
}

/// Mean squared configuration reconstruction error over the test split.
pub fn test_reconstruction_error(model: &MultiPhaseModel, dataset: &Dataset) -> Result<f64> {
    let test = dataset.stack_configurations(Split::Test, None);
    if test.nrows() == 0 {
        return Err(Error::Config("test split is empty".into()));
    }
    if test.ncols() != model.autoencoder.full_dim() {
        return Err(Error::shape("test configuration width", model.autoencoder.full_dim(), test.ncols()));
    }
    Ok(model.autoencoder.recon_loss(&test))
}

/// SHA-256 over the raw recordings and split assignment of a dataset.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for (jump, split) in dataset.jumps.iter().zip(&dataset.split) {
        h.update(split.name().as_bytes());
        let raw = &jump.raw;
        for m in [&raw.q, &raw.dq, &raw.tau] {
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for t in &raw.timestamps {
            h.update(t.to_le_bytes());
        }
        for c in &raw.contact {
            h.update(c.0.map(u8::from));
        }
    }
    hex::encode(h.finalize())
}
