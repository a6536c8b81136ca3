//! The optimization loop: masked video delta-score updates regularized by
//! spatial and temporal self-similarity matching, plus the cascaded variant
//! that edits keyframes and re-expands them with deterministic resamplers.

use crate::condition::Condition;
use crate::denoiser::Denoiser;
use crate::distill::{dds_grad_split, draw_sample, mask_filter};
use crate::error::{CoreError, Result};
use crate::rng::{self, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::selfsim::ssm_grads;
use crate::video::{MaskSequence, Video};

/// Optimization hyperparameters. Defaults: 200 SGD steps at lr 0.4 with
/// guidance scale 9, unit self-similarity weights, timestep fractions
/// (0.05, 0.95), masked delta-score gradients, shared branch noise.
#[derive(Clone, Debug)]
pub struct EditConfig {
    pub steps: usize,
    pub lr: f32,
    pub w: f32,
    pub lambda_s: f32,
    pub lambda_t: f32,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub seed: u64,
    pub mask_vdds: bool,
    pub share_eps: bool,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            steps: 200,
            lr: 0.4,
            w: 9.0,
            lambda_s: 1.0,
            lambda_t: 1.0,
            t_min_frac: 0.05,
            t_max_frac: 0.95,
            seed: 0,
            mask_vdds: true,
            share_eps: true,
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(CoreError::invalid("EditConfig", "lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.t_min_frac)
            || !(0.0..=1.0).contains(&self.t_max_frac)
            || self.t_min_frac >= self.t_max_frac
        {
            return Err(CoreError::invalid("EditConfig", "invalid timestep fraction range"));
        }
        Ok(())
    }
}

/// One row of the optimization trace.
#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub step: usize,
    pub t: usize,
    pub grad_norm_vdds: f32,
    pub loss_sssm: f32,
    pub loss_tssm: f32,
}

/// Evolving edit: the optimization variable, the frozen reference, and the
/// per-step trace.
#[derive(Clone, Debug)]
pub struct EditState {
    pub x: Video,
    pub x_ref: Video,
    pub step: usize,
    pub trace: Vec<TraceRow>,
}

impl EditState {
    pub fn init(video: Video) -> Self {
        EditState { x: video.clone(), x_ref: video, step: 0, trace: Vec::new() }
    }
}

/// One optimization step: draw a shared (t, eps), apply the mask-filtered
/// delta-score direction plus the self-similarity gradient, descend.
#[allow(clippy::too_many_arguments)]
pub fn edit_step(
    mut state: EditState,
    d: &dyn Denoiser,
    y: &Condition,
    y_ref: &Condition,
    m: &MaskSequence,
    cfg: &EditConfig,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<EditState> {
    let (n, c, h, w) = (state.x.frames(), state.x.channels(), state.x.height(), state.x.width());
    let s = draw_sample(sched, rng, cfg.t_min_frac, cfg.t_max_frac, n, c, h, w)?;
    let eps_ref = if cfg.share_eps { None } else { Some(rng::normal_video(rng, n, c, h, w)) };
    let eps_ref_view = eps_ref.as_ref().unwrap_or(&s.eps);

    let g_raw = dds_grad_split(d, &state.x, y, &state.x_ref, y_ref, cfg.w, &s, eps_ref_view, sched)?;
    let g_vdds = if cfg.mask_vdds { mask_filter(&g_raw, m)? } else { g_raw };

    let (g_total, loss_sssm, loss_tssm) = if cfg.lambda_s != 0.0 || cfg.lambda_t != 0.0 {
        let ssm = ssm_grads(&state.x, &state.x_ref, &s, d, y, y_ref, sched, cfg.lambda_s, cfg.lambda_t)?;
        (g_vdds.axpy(1.0, &ssm.grad)?, ssm.spatial_loss, ssm.temporal_loss)
    } else {
        (g_vdds.clone(), 0.0, 0.0)
    };

    if !g_total.all_finite() {
        dump_trace(&state.trace);
        return Err(CoreError::NonFinite(format!("edit gradient at step {}", state.step)));
    }

    let row = TraceRow {
        step: state.step,
        t: s.t,
        grad_norm_vdds: g_vdds.l2_norm(),
        loss_sssm,
        loss_tssm,
    };
    state.x = state.x.axpy(-cfg.lr, &g_total)?;
    state.step += 1;
    state.trace.push(row);
    Ok(state)
}

fn dump_trace(trace: &[TraceRow]) {
    for row in trace {
        log::warn!(
            "trace step={} t={} grad_norm_vdds={} loss_sssm={} loss_tssm={}",
            row.step,
            row.t,
            row.grad_norm_vdds,
            row.loss_sssm,
            row.loss_tssm
        );
    }
}

/// Runs the full loop from `video`, returning the edited video and trace.
/// Deterministic given the config seed.
#[allow(clippy::too_many_arguments)]
pub fn edit(
    video: &Video,
    y_ref: &Condition,
    y: &Condition,
    m: &MaskSequence,
    cfg: &EditConfig,
    d: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<(Video, Vec<TraceRow>)> {
    cfg.validate()?;
    if !m.matches_video(video) {
        return Err(CoreError::invalid(
            "edit",
            format!(
                "mask {}x{}x{} does not match video {}x{}x{}",
                m.frames(),
                m.height(),
                m.width(),
                video.frames(),
                video.height(),
                video.width()
            ),
        ));
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut state = EditState::init(video.clone());
    for _ in 0..cfg.steps {
        state = edit_step(state, d, y, y_ref, m, cfg, sched, &mut rng)?;
    }
    Ok((state.x, state.trace))
}

/// Inserts `factor - 1` linear blends between consecutive frames. Original
/// frames appear verbatim at stride `factor`; output has (N-1)*factor + 1
/// frames.
pub fn temporal_interpolate(video: &Video, factor: usize) -> Result<Video> {
    if factor < 1 {
        return Err(CoreError::invalid("temporal_interpolate", "factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(video.clone());
    }
    let (n, c, h, w) = (video.frames(), video.channels(), video.height(), video.width());
    if n == 0 {
        return Err(CoreError::invalid("temporal_interpolate", "empty video"));
    }
    let out_frames = (n - 1) * factor + 1;
    let frame_len = c * h * w;
    let mut data = Vec::with_capacity(out_frames * frame_len);
    for k in 0..out_frames {
        let q = k / factor;
        let r = k % factor;
        let a = &video.data()[q * frame_len..(q + 1) * frame_len];
        if r == 0 {
            data.extend_from_slice(a);
        } else {
            let b = &video.data()[(q + 1) * frame_len..(q + 2) * frame_len];
            let wa = (factor - r) as f32 / factor as f32;
            let wb = r as f32 / factor as f32;
            data.extend(a.iter().zip(b).map(|(x, y)| x * wa + y * wb));
        }
    }
    Video::new(out_frames, c, h, w, data)
}

/// Bilinear upsampling with half-pixel centers; constant frames stay
/// constant and factor 1 is the identity.
pub fn spatial_upsample(video: &Video, factor: usize) -> Result<Video> {
    if factor < 1 {
        return Err(CoreError::invalid("spatial_upsample", "factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(video.clone());
    }
    let (n, c, h, w) = (video.frames(), video.channels(), video.height(), video.width());
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Video::zeros(n, c, oh, ow);
    let f = factor as f32;
    for fi in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                let sy = ((i as f32 + 0.5) / f - 0.5).clamp(0.0, (h - 1) as f32);
                let y0 = sy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let fy = sy - y0 as f32;
                for j in 0..ow {
                    let sx = ((j as f32 + 0.5) / f - 0.5).clamp(0.0, (w - 1) as f32);
                    let x0 = sx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let fx = sx - x0 as f32;
                    let v00 = video.at(fi, ci, y0, x0);
                    let v01 = video.at(fi, ci, y0, x1);
                    let v10 = video.at(fi, ci, y1, x0);
                    let v11 = video.at(fi, ci, y1, x1);
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    out.set(fi, ci, i, j, top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Box-filter downsampling by an integer factor.
pub fn spatial_downsample(video: &Video, factor: usize) -> Result<Video> {
    if factor < 1 {
        return Err(CoreError::invalid("spatial_downsample", "factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(video.clone());
    }
    let (n, c, h, w) = (video.frames(), video.channels(), video.height(), video.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(CoreError::invalid(
            "spatial_downsample",
            format!("factor {} does not divide {}x{}", factor, h, w),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f32;
    let mut out = Video::zeros(n, c, oh, ow);
    for fi in 0..n {
        for ci in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0f32;
                    for di in 0..factor {
                        for dj in 0..factor {
                            acc += video.at(fi, ci, i * factor + di, j * factor + dj);
                        }
                    }
                    out.set(fi, ci, i, j, acc * inv);
                }
            }
        }
    }
    Ok(out)
}

/// Keeps frames at stride `factor`; requires (N-1) divisible by the factor.
pub fn temporal_subsample(video: &Video, factor: usize) -> Result<Video> {
    if factor < 1 {
        return Err(CoreError::invalid("temporal_subsample", "factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(video.clone());
    }
    let n = video.frames();
    if n < 2 || (n - 1) % factor != 0 {
        return Err(CoreError::invalid(
            "temporal_subsample",
            format!("cannot subsample {} frames by {}", n, factor),
        ));
    }
    let (c, h, w) = (video.channels(), video.height(), video.width());
    let frame_len = c * h * w;
    let out_frames = (n - 1) / factor + 1;
    let mut data = Vec::with_capacity(out_frames * frame_len);
    for k in 0..out_frames {
        let src = k * factor;
        data.extend_from_slice(&video.data()[src * frame_len..(src + 1) * frame_len]);
    }
    Video::new(out_frames, c, h, w, data)
}

/// Keyframe-scale masks: frames at stride `temporal_factor`, spatially
/// max-pooled so coverage never shrinks.
pub fn mask_downsample(m: &MaskSequence, spatial_factor: usize, temporal_factor: usize) -> Result<MaskSequence> {
    if spatial_factor < 1 || temporal_factor < 1 {
        return Err(CoreError::invalid("mask_downsample", "factors must be >= 1"));
    }
    let n = m.frames();
    if temporal_factor > 1 && (n < 2 || (n - 1) % temporal_factor != 0) {
        return Err(CoreError::invalid(
            "mask_downsample",
            format!("cannot subsample {} mask frames by {}", n, temporal_factor),
        ));
    }
    if m.height() % spatial_factor != 0 || m.width() % spatial_factor != 0 {
        return Err(CoreError::invalid(
            "mask_downsample",
            format!("factor {} does not divide {}x{}", spatial_factor, m.height(), m.width()),
        ));
    }
    let out_frames = if temporal_factor == 1 { n } else { (n - 1) / temporal_factor + 1 };
    let (oh, ow) = (m.height() / spatial_factor, m.width() / spatial_factor);
    let mut out = MaskSequence::zeros(out_frames, oh, ow);
    for k in 0..out_frames {
        let src = k * temporal_factor;
        for i in 0..oh {
            for j in 0..ow {
                let mut any = 0u8;
                'pool: for di in 0..spatial_factor {
                    for dj in 0..spatial_factor {
                        if m.get(src, i * spatial_factor + di, j * spatial_factor + dj) == 1 {
                            any = 1;
                            break 'pool;
                        }
                    }
                }
                out.set(k, i, j, any);
            }
        }
    }
    Ok(out)
}

/// Cascaded pipeline: edit at keyframe scale, then expand back with the
/// deterministic temporal blend and bilinear upsampler.
#[allow(clippy::too_many_arguments)]
pub fn cascade_edit(
    video_hi: &Video,
    y_ref: &Condition,
    y: &Condition,
    m_hi: &MaskSequence,
    cfg: &EditConfig,
    d: &dyn Denoiser,
    sched: &NoiseSchedule,
    spatial_factor: usize,
    temporal_factor: usize,
) -> Result<(Video, Vec<TraceRow>)> {
    let key_video = spatial_downsample(&temporal_subsample(video_hi, temporal_factor)?, spatial_factor)?;
    let key_mask = mask_downsample(m_hi, spatial_factor, temporal_factor)?;
    let (edited_key, trace) = edit(&key_video, y_ref, y, &key_mask, cfg, d, sched)?;
    let out = spatial_upsample(&temporal_interpolate(&edited_key, temporal_factor)?, spatial_factor)?;
    Ok((out, trace))
}
