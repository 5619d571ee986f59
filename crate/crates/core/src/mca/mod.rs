//! Modular codec avatars: encoders, synthesizers, blending and training.

pub mod apps;
pub mod blend;
pub mod check;
pub mod train;
pub mod model;
pub mod net;

pub use apps::{amplified_face, closed_eye_base, eye_amplify, eye_of_module, flexible_animation, flexible_windows, shuffled_order, ClosedEyeBase};
pub use blend::{modulate_blend, modulate_blend_backward, BlendBasis, BlendField, ModuleSpec};
pub use model::{Ablation, BlendMode, LossTerms, McaConfig, McaModel, Prediction, Supervision, Window};
pub use train::{train_codecs, train_model, Codecs, FrameSupervision, TrainLog, TrainSet};
pub use net::{ModulePath, PathShape};

#[cfg(test)]
mod tests;
