//! Masked video score distillation with space-time self-similarity
//! regularization, on a self-contained desk-scale diffusion stack.
//!
//! The crate provides dense tensors with reverse-mode differentiation, a
//! linear-beta diffusion substrate with classifier-free guidance and
//! ancestral sampling, an analytic Gaussian denoiser plus a tiny trainable
//! video denoiser with an attention-key feature tap, delta-score
//! distillation gradients with binary-mask filtering, spatial and temporal
//! self-similarity matching losses, the optimization engine (plain and
//! cascaded), and a synthetic moving-shape benchmark with metrics and
//! binary containers.

pub mod condition;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod distill;
pub mod engine;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod selfsim;
pub mod tensor;
pub mod video;

pub use condition::{CaptionVocab, Condition, CONDITION_DIM};
pub use config::RunConfig;
pub use data::{gen_synthetic, ColorClass, SceneSpec, ShapeKind};
pub use denoiser::{
    AnalyticDenoiser, Denoiser, GaussianWorld, KeyFeatures, PatchProjector, TinyDenoiser,
    TinyGeometry, TinyParams,
};
pub use engine::{EditConfig, EditState, TraceRow};
pub use error::CoreError;
pub use graph::{grad_check, Graph, Var};
pub use schedule::NoiseSchedule;
pub use tensor::Tensor;
pub use video::{MaskSequence, Video};
