//! Score-distillation gradients: SDS, DDS, their video extension, and
//! binary-mask gradient filtering.
//!
//! Following the usual score-distillation convention the denoiser Jacobian
//! is omitted: the pixel gradient is the raw guided-epsilon difference with
//! unit weighting. Both branches of the delta score are noised with the same
//! epsilon by default; an independent reference epsilon can be supplied.

use rand::Rng;

use crate::condition::Condition;
use crate::denoiser::Denoiser;
use crate::diffusion::{cfg_epsilon, forward_noise};
use crate::error::{CoreError, Result};
use crate::rng::{self, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::video::{MaskSequence, Video};

/// The (t, eps) pair shared by every loss term within one optimization step.
#[derive(Clone, Debug)]
pub struct DistillSample {
    pub t: usize,
    pub eps: Video,
}

/// Draws a timestep uniformly from the fractional range and a standard
/// normal noise video. t = round(u * T) clamped to [1, T].
#[allow(clippy::too_many_arguments)]
pub fn draw_sample(
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
    t_min_frac: f64,
    t_max_frac: f64,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<DistillSample> {
    if !(0.0..=1.0).contains(&t_min_frac) || !(0.0..=1.0).contains(&t_max_frac) || t_min_frac >= t_max_frac {
        return Err(CoreError::invalid(
            "draw_sample",
            format!("need 0 <= t_min_frac < t_max_frac <= 1, got {} and {}", t_min_frac, t_max_frac),
        ));
    }
    let u: f64 = t_min_frac + rng.gen::<f64>() * (t_max_frac - t_min_frac);
    let t = ((u * sched.t_count() as f64).round() as usize).clamp(1, sched.t_count());
    let eps = rng::normal_video(rng, frames, channels, height, width);
    Ok(DistillSample { t, eps })
}

/// SDS direction: guided epsilon minus the injected epsilon. No gradient
/// flows through the denoiser.
pub fn sds_grad(
    d: &dyn Denoiser,
    x: &Video,
    y: &Condition,
    w: f32,
    s: &DistillSample,
    sched: &NoiseSchedule,
) -> Result<Video> {
    if !x.all_finite() {
        return Err(CoreError::NonFinite("sds_grad input".into()));
    }
    let x_t = forward_noise(x, s.t, &s.eps, sched)?;
    let guided = cfg_epsilon(d, &x_t, s.t, y, w, sched)?;
    guided.sub(&s.eps)
}

/// DDS direction: the guided epsilon of the target branch minus that of the
/// matched reference branch. By default both branches share `s.eps`.
#[allow(clippy::too_many_arguments)]
pub fn dds_grad(
    d: &dyn Denoiser,
    x: &Video,
    y: &Condition,
    x_ref: &Video,
    y_ref: &Condition,
    w: f32,
    s: &DistillSample,
    sched: &NoiseSchedule,
) -> Result<Video> {
    dds_grad_split(d, x, y, x_ref, y_ref, w, s, &s.eps, sched)
}

/// DDS with an explicit reference-branch epsilon (same timestep).
#[allow(clippy::too_many_arguments)]
pub fn dds_grad_split(
    d: &dyn Denoiser,
    x: &Video,
    y: &Condition,
    x_ref: &Video,
    y_ref: &Condition,
    w: f32,
    s: &DistillSample,
    eps_ref: &Video,
    sched: &NoiseSchedule,
) -> Result<Video> {
    if !x.same_geometry(x_ref) {
        return Err(CoreError::shapes("dds_grad", x.tensor().shape(), x_ref.tensor().shape()));
    }
    let x_t = forward_noise(x, s.t, &s.eps, sched)?;
    let xr_t = forward_noise(x_ref, s.t, eps_ref, sched)?;
    let g_target = cfg_epsilon(d, &x_t, s.t, y, w, sched)?;
    let g_ref = cfg_epsilon(d, &xr_t, s.t, y_ref, w, sched)?;
    g_target.sub(&g_ref)
}

/// DDS over whole video sequences: the denoiser consumes all frames jointly,
/// which is how every [`Denoiser`] here already works.
#[allow(clippy::too_many_arguments)]
pub fn vdds_grad(
    d: &dyn Denoiser,
    x: &Video,
    y: &Condition,
    x_ref: &Video,
    y_ref: &Condition,
    w: f32,
    s: &DistillSample,
    sched: &NoiseSchedule,
) -> Result<Video> {
    dds_grad(d, x, y, x_ref, y_ref, w, s, sched)
}

/// Zeroes the gradient outside the mask, broadcasting over channels. Kept
/// pixels pass through verbatim; dropped pixels become exact +0.0.
pub fn mask_filter(grad: &Video, m: &MaskSequence) -> Result<Video> {
    if !m.matches_video(grad) {
        return Err(CoreError::invalid(
            "mask_filter",
            format!(
                "mask {}x{}x{} vs video {}x{}x{}x{}",
                m.frames(),
                m.height(),
                m.width(),
                grad.frames(),
                grad.channels(),
                grad.height(),
                grad.width()
            ),
        ));
    }
    let mut out = grad.clone();
    let (n, c, h, w) = (grad.frames(), grad.channels(), grad.height(), grad.width());
    for fi in 0..n {
        for i in 0..h {
            for j in 0..w {
                if m.get(fi, i, j) == 0 {
                    for ci in 0..c {
                        out.set(fi, ci, i, j, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}
