//! Synthetic face: template, expressions, rendering, headset capture and data.

mod avatar;
mod dataset;
mod expression;
mod headset;
mod pooling;
mod render;

pub use avatar::{
    texel_uv, Avatar, AvatarConfig, FaceLayout, FaceMesh, Landmarks, ModuleMask, TextureMap, UvAtlas, MODULES,
    MODULE_NAMES,
};
pub use dataset::{
    export_pngs, generate_dataset, read_dome, read_session, sample_compositional_params, sample_training_params,
    save_gray_png, save_rgb_png, trajectory, write_dome, write_session, Dataset, DatasetConfig, DatasetMeta, DomeFrame,
    HeadsetFrame, Session, SessionMeta, DATA_MAGIC, DATA_VERSION,
};
pub use expression::{synth_expression, ExpressionParams, Knob, KnobField, LID_CLOSE_GAIN, LID_OPEN_GAIN};
pub use headset::{
    apply_domain, clean_module_render, preprocess, simulate_headset_capture, AugmentConfig, Augmentation, DomainParams,
    GrayImage,
};
pub use pooling::{pool_texel_errors, vertex_pool_texture_error};
pub use render::{render, render_frontal, sample_texture, OrthoCamera, RenderedImage, ViewDirection};
