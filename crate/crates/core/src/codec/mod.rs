//! Face VAEs and exemplar alignment.

pub mod bank;
pub mod vae;

pub use bank::{
    align_exemplar, align_exemplar_index, build_exemplar_bank, masked_target, perturb_bank_code, perturb_code,
    ExemplarBank,
};
pub use vae::{jittered_view, train_vae, LossPoint, VaeConfig, VaeModel, VaeTrainLog, VIEW_DIMS};
