//! Epsilon-matching trainer for the tiny denoiser.

use rand::Rng;

use crate::condition::{CaptionVocab, Condition};
use crate::denoiser::tiny::{forward_vars, register_params, TinyGeometry, TinyParams};
use crate::diffusion::forward_noise;
use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::video::Video;

/// One training example: a video and its caption id.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub video: Video,
    pub caption: String,
}

/// Per-step loss trace of a training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<f32>,
    pub final_loss: f32,
}

impl TrainReport {
    /// Mean loss over the first `window` and last `window` steps.
    pub fn smoothed_ends(&self, window: usize) -> (f32, f32) {
        let w = window.min(self.losses.len()).max(1);
        let head: f32 = self.losses[..w].iter().sum::<f32>() / w as f32;
        let tail: f32 = self.losses[self.losses.len() - w..].iter().sum::<f32>() / w as f32;
        (head, tail)
    }
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
}

impl Adam {
    fn new(params: &TinyParams) -> Self {
        let shapes: Vec<_> = params.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        Adam {
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut TinyParams, grads: &[Tensor], lr: f32) {
        const B1: f32 = 0.9;
        const B2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - B1.powf(t);
        let bc2 = 1.0 - B2.powf(t);
        for (idx, (_, p)) in params.tensors_mut().into_iter().enumerate() {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = B1 * m.data()[i] + (1.0 - B1) * gi;
                let vi = B2 * v.data()[i] + (1.0 - B2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}

/// Minimizes the video epsilon-matching loss over the dataset with Adam.
/// 10% of steps replace the caption with the null condition so the trained
/// model supports classifier-free guidance. Seed-deterministic throughout.
#[allow(clippy::too_many_arguments)]
pub fn train_denoiser(
    dataset: &[TrainItem],
    vocab: &CaptionVocab,
    sched: &NoiseSchedule,
    geometry: TinyGeometry,
    steps: usize,
    lr: f32,
    seed: u64,
) -> Result<(TinyParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(CoreError::invalid("train_denoiser", "dataset is empty"));
    }
    for item in dataset {
        vocab.condition(&item.caption)?;
        if item.video.channels() != geometry.channels {
            return Err(CoreError::invalid(
                "train_denoiser",
                format!("item has {} channels, geometry wants {}", item.video.channels(), geometry.channels),
            ));
        }
    }

    let mut params = TinyParams::init(geometry, seed);
    let mut adam = Adam::new(&params);
    let mut pick_rng = rng::substream(seed, 1);
    let mut t_rng = rng::substream(seed, 2);
    let mut eps_rng = rng::substream(seed, 3);
    let mut drop_rng = rng::substream(seed, 4);

    let mut losses = Vec::with_capacity(steps);
    let mut initial_loss = f32::NAN;

    for step in 0..steps {
        let item = &dataset[pick_rng.gen_range(0..dataset.len())];
        let t = t_rng.gen_range(1..=sched.t_count());
        let eps = rng::normal_video(
            &mut eps_rng,
            item.video.frames(),
            item.video.channels(),
            item.video.height(),
            item.video.width(),
        );
        let y = if drop_rng.gen::<f32>() < 0.1 {
            Condition::null()
        } else {
            vocab.condition(&item.caption)?
        };
        let x_t = forward_noise(&item.video, t, &eps, sched)?;

        let mut g = Graph::new();
        let vars = register_params(&mut g, &params);
        let xv = g.constant(x_t.into_tensor());
        let (eps_pred, _keys) = forward_vars(&mut g, &vars, xv, t, &y, geometry)?;
        let target = g.constant(eps.into_tensor());
        let diff = g.sub(eps_pred, target)?;
        let sq = g.square(diff);
        let loss_var = g.mean(sq);
        let loss = g.value(loss_var).scalar_value()?;
        if !loss.is_finite() {
            return Err(CoreError::NonFinite(format!("training loss at step {}", step)));
        }
        if step == 0 {
            initial_loss = loss;
        } else if loss > 10.0 * initial_loss {
            return Err(CoreError::Diverged { step, loss, initial: initial_loss });
        }
        g.backward(loss_var)?;
        let grads: Vec<Tensor> = vars
            .in_order()
            .iter()
            .map(|v| {
                g.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(*v).shape()))
            })
            .collect();
        adam.update(&mut params, &grads, lr);
        losses.push(loss);
    }

    let final_loss = losses.last().copied().unwrap_or(f32::NAN);
    Ok((params, TrainReport { losses, final_loss }))
}
