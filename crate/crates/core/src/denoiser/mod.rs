//! The pluggable noise-predictor family.
//!
//! Two implementations live here: an exact analytic Gaussian denoiser used
//! as a test oracle, and a tiny trainable text-conditioned video denoiser
//! with an attention-key feature tap.

mod analytic;
mod params_io;
mod tiny;
mod train;

pub use analytic::{analytic_eps, analytic_keys, AnalyticDenoiser, GaussianWorld, PatchProjector};
pub use params_io::{load_params, save_params, ParamsIoError};
pub use tiny::{TinyDenoiser, TinyGeometry, TinyParams};
pub use train::{train_denoiser, TrainItem, TrainReport};

use crate::condition::Condition;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::video::Video;

/// Per-frame token features from the denoiser's attention-key tap, shaped
/// [frames, tokens, channels].
#[derive(Clone, Debug, PartialEq)]
pub struct KeyFeatures(Tensor);

impl KeyFeatures {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(CoreError::invalid(
                "KeyFeatures::new",
                format!("expected rank 3, got {:?}", t.shape()),
            ));
        }
        if t.shape()[1] < 2 {
            return Err(CoreError::invalid(
                "KeyFeatures::new",
                format!("need at least 2 tokens, got {}", t.shape()[1]),
            ));
        }
        Ok(KeyFeatures(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn frame_count(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn token_count(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }

    /// Tokens of frame `n` as a [tokens, channels] matrix.
    pub fn frame(&self, n: usize) -> Result<Tensor> {
        let t = self.0.slice_axis0(n, 1)?;
        t.reshape(&[self.token_count(), self.channels()])
    }
}

/// A conditional noise predictor with a key-feature side channel.
pub trait Denoiser {
    /// Predicted noise for a noisy video at timestep `t` under condition `y`.
    fn predict_eps(&self, x_t: &Video, t: usize, y: &Condition, sched: &NoiseSchedule) -> Result<Video>;

    /// Attention-key features of the designated layer, [frames, tokens, channels].
    fn extract_keys(&self, x_t: &Video, t: usize, y: &Condition, sched: &NoiseSchedule) -> Result<KeyFeatures>;

    /// Records key extraction on a graph so gradients can flow back to `x_t`.
    /// Implementations that cannot differentiate reject the request.
    fn extract_keys_var(
        &self,
        _g: &mut Graph,
        _x_t: Var,
        _t: usize,
        _y: &Condition,
        _sched: &NoiseSchedule,
    ) -> Result<Var> {
        Err(CoreError::NotDifferentiable)
    }

    /// Whether [`Denoiser::extract_keys_var`] is supported.
    fn differentiable(&self) -> bool {
        false
    }
}
