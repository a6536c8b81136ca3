//! Forward noising, classifier-free guidance, and ancestral sampling.

use crate::condition::Condition;
use crate::denoiser::Denoiser;
use crate::error::{CoreError, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::video::Video;

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
pub fn forward_noise(x0: &Video, t: usize, eps: &Video, sched: &NoiseSchedule) -> Result<Video> {
    if !x0.same_geometry(eps) {
        return Err(CoreError::shapes("forward_noise", x0.tensor().shape(), eps.tensor().shape()));
    }
    let ab = sched.alpha_bar(t)?;
    if t == 0 {
        return Err(CoreError::invalid("forward_noise", "t must be >= 1"));
    }
    let a = ab.sqrt();
    let b = (1.0 - ab).sqrt();
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| (a * x) + (b * e))
        .collect();
    Video::new(x0.frames(), x0.channels(), x0.height(), x0.width(), data)
}

/// Guided prediction (1+w) eps(x_t, t, y) - w eps(x_t, t, null). With w = 0
/// the unconditional branch is skipped entirely.
pub fn cfg_epsilon(
    d: &dyn Denoiser,
    x_t: &Video,
    t: usize,
    y: &Condition,
    w: f32,
    sched: &NoiseSchedule,
) -> Result<Video> {
    if y.is_null() {
        return Err(CoreError::invalid(
            "cfg_epsilon",
            "null condition; call predict_eps directly or use w = 0 with a real caption",
        ));
    }
    let cond = d.predict_eps(x_t, t, y, sched)?;
    if w == 0.0 {
        return Ok(cond);
    }
    let uncond = d.predict_eps(x_t, t, &Condition::null(), sched)?;
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(c, u)| (1.0 + w) * c - w * u)
        .collect();
    Video::new(x_t.frames(), x_t.channels(), x_t.height(), x_t.width(), data)
}

/// One reverse step:
/// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) eps_pred) / sqrt(alpha_t)
///           + beta_tilde_t * noise.
pub fn ancestral_step(
    x_t: &Video,
    eps_pred: &Video,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Video,
) -> Result<Video> {
    if !x_t.same_geometry(eps_pred) {
        return Err(CoreError::shapes("ancestral_step", x_t.tensor().shape(), eps_pred.tensor().shape()));
    }
    if !x_t.same_geometry(noise) {
        return Err(CoreError::shapes("ancestral_step", x_t.tensor().shape(), noise.tensor().shape()));
    }
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let bt = sched.beta_tilde(t)?;
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_pred.data())
        .zip(noise.data())
        .map(|((x, e), z)| (x - coef * e) * inv_sqrt_alpha + bt * z)
        .collect();
    Video::new(x_t.frames(), x_t.channels(), x_t.height(), x_t.width(), data)
}

/// Full reverse chain from seeded Gaussian noise. With w != 0 the condition
/// must be non-null; with w = 0 the raw (possibly unconditional) prediction
/// is used.
#[allow(clippy::too_many_arguments)]
pub fn sample(
    d: &dyn Denoiser,
    y: &Condition,
    w: f32,
    sched: &NoiseSchedule,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Video> {
    let mut r = rng::seeded(seed);
    let mut x = rng::normal_video(&mut r, frames, channels, height, width);
    for t in (1..=sched.t_count()).rev() {
        let eps_pred = if w == 0.0 {
            d.predict_eps(&x, t, y, sched)?
        } else {
            cfg_epsilon(d, &x, t, y, w, sched)?
        };
        let noise = rng::normal_video(&mut r, frames, channels, height, width);
        x = ancestral_step(&x, &eps_pred, t, sched, &noise)?;
    }
    if !x.all_finite() {
        return Err(CoreError::NonFinite("sample output".into()));
    }
    Ok(x)
}
