//! Evaluation metrics for edited videos against ground-truth motion.

use crate::condition::Condition;
use crate::denoiser::Denoiser;
use crate::diffusion::forward_noise;
use crate::error::{CoreError, Result};
use crate::schedule::NoiseSchedule;
use crate::selfsim::spatial_marginal_mean;
use crate::video::{MaskSequence, Video};

/// Mask centroid as (mean row index, mean col index).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub row: f32,
    pub col: f32,
}

impl Centroid {
    pub fn distance(&self, other: &Centroid) -> f32 {
        let dr = self.row - other.row;
        let dc = self.col - other.col;
        (dr * dr + dc * dc).sqrt()
    }
}

/// Per-frame mask centroids. Errors on an empty mask frame.
pub fn centroid_trajectory(m: &MaskSequence) -> Result<Vec<Centroid>> {
    let mut out = Vec::with_capacity(m.frames());
    for n in 0..m.frames() {
        let mut count = 0usize;
        let mut row_sum = 0.0f64;
        let mut col_sum = 0.0f64;
        for i in 0..m.height() {
            for j in 0..m.width() {
                if m.get(n, i, j) == 1 {
                    count += 1;
                    row_sum += i as f64;
                    col_sum += j as f64;
                }
            }
        }
        if count == 0 {
            return Err(CoreError::invalid(
                "centroid_trajectory",
                format!("mask frame {} is empty", n),
            ));
        }
        out.push(Centroid {
            row: (row_sum / count as f64) as f32,
            col: (col_sum / count as f64) as f32,
        });
    }
    Ok(out)
}

/// Summary metrics for one edit.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    /// Largest per-frame centroid deviation of the re-segmented object from
    /// the ground-truth trajectory, in pixels. Infinite if the object is
    /// lost in any frame.
    pub motion_max_dev: f32,
    pub motion_mean_dev: f32,
    /// L2 distance between in-mask mean colors of the edited and original
    /// videos.
    pub in_mask_color_shift: f32,
    /// Mean squared difference outside the mask.
    pub out_mask_mse: f32,
    /// Mean adjacent-frame cosine of key-feature marginal means.
    pub frame_consistency: f32,
}

/// Mean color over in-mask pixels, one entry per channel.
pub fn in_mask_mean_color(video: &Video, m: &MaskSequence) -> Result<Vec<f32>> {
    if !m.matches_video(video) {
        return Err(CoreError::invalid("in_mask_mean_color", "mask geometry mismatch"));
    }
    let mut sums = vec![0.0f64; video.channels()];
    let mut count = 0usize;
    for n in 0..video.frames() {
        for i in 0..video.height() {
            for j in 0..video.width() {
                if m.get(n, i, j) == 1 {
                    count += 1;
                    for c in 0..video.channels() {
                        sums[c] += video.at(n, c, i, j) as f64;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(CoreError::invalid("in_mask_mean_color", "mask is empty"));
    }
    Ok(sums.iter().map(|s| (*s / count as f64) as f32).collect())
}

/// Mean color over out-of-mask pixels.
pub fn out_mask_mean_color(video: &Video, m: &MaskSequence) -> Result<Vec<f32>> {
    let mut sums = vec![0.0f64; video.channels()];
    let mut count = 0usize;
    for n in 0..video.frames() {
        for i in 0..video.height() {
            for j in 0..video.width() {
                if m.get(n, i, j) == 0 {
                    count += 1;
                    for c in 0..video.channels() {
                        sums[c] += video.at(n, c, i, j) as f64;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(CoreError::invalid("out_mask_mean_color", "mask covers everything"));
    }
    Ok(sums.iter().map(|s| (*s / count as f64) as f32).collect())
}

pub fn color_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            (d * d) as f64
        })
        .sum::<f64>()
        .sqrt() as f32
}

/// Segments pixels strictly closer to the target color than to the
/// background color.
pub fn segment_by_color(video: &Video, target: &[f32], background: &[f32]) -> MaskSequence {
    let mut m = MaskSequence::zeros(video.frames(), video.height(), video.width());
    for n in 0..video.frames() {
        for i in 0..video.height() {
            for j in 0..video.width() {
                let mut dt = 0.0f32;
                let mut db = 0.0f32;
                for c in 0..video.channels() {
                    let v = video.at(n, c, i, j);
                    let a = v - target[c];
                    let b = v - background[c];
                    dt += a * a;
                    db += b * b;
                }
                if dt < db {
                    m.set(n, i, j, 1);
                }
            }
        }
    }
    m
}

/// Mean squared error over out-of-mask pixel-channels.
pub fn out_mask_mse(a: &Video, b: &Video, m: &MaskSequence) -> Result<f32> {
    if !a.same_geometry(b) {
        return Err(CoreError::shapes("out_mask_mse", a.tensor().shape(), b.tensor().shape()));
    }
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for n in 0..a.frames() {
        for i in 0..a.height() {
            for j in 0..a.width() {
                if m.get(n, i, j) == 0 {
                    for c in 0..a.channels() {
                        let d = (a.at(n, c, i, j) - b.at(n, c, i, j)) as f64;
                        acc += d * d;
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((acc / count as f64) as f32)
}

/// Mean adjacent-frame cosine of key marginal means, extracted from the
/// near-clean video at t = 1 with zero injected noise. Keys here do not
/// depend on the caption, so the null condition is passed.
pub fn frame_consistency(video: &Video, d: &dyn Denoiser, sched: &NoiseSchedule) -> Result<f32> {
    if video.frames() < 2 {
        return Ok(1.0);
    }
    let zero = Video::zeros(video.frames(), video.channels(), video.height(), video.width());
    let x1 = forward_noise(video, 1, &zero, sched)?;
    let keys = d.extract_keys(&x1, 1, &Condition::null(), sched)?;
    let m = spatial_marginal_mean(&keys)?;
    let c = m.shape()[1];
    let mut acc = 0.0f64;
    let pairs = video.frames() - 1;
    for n in 0..pairs {
        let a = &m.data()[n * c..(n + 1) * c];
        let b = &m.data()[(n + 1) * c..(n + 2) * c];
        let dot: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        let na: f64 = a.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        acc += dot / ((na + 1e-8) * (nb + 1e-8));
    }
    Ok((acc / pairs as f64) as f32)
}

/// Full evaluation of an edit. Motion fidelity re-segments the edited object
/// by color distance (target vs. estimated background) and compares its
/// centroid track against the ground-truth mask centroids; a lost object
/// reports infinite deviation rather than an error.
pub fn evaluate(
    original: &Video,
    edited: &Video,
    m: &MaskSequence,
    target_mean: &[f32],
    d: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<MetricReport> {
    if !original.same_geometry(edited) {
        return Err(CoreError::shapes("evaluate", original.tensor().shape(), edited.tensor().shape()));
    }
    if !m.matches_video(original) {
        return Err(CoreError::invalid("evaluate", "mask geometry mismatch"));
    }
    let gt = centroid_trajectory(m)?;
    let background = out_mask_mean_color(original, m)?;
    let seg = segment_by_color(edited, target_mean, &background);

    let mut max_dev = 0.0f32;
    let mut sum_dev = 0.0f64;
    for (n, gt_c) in gt.iter().enumerate() {
        if seg.frame_count(n) == 0 {
            max_dev = f32::INFINITY;
            sum_dev = f64::INFINITY;
            break;
        }
        let frame_mask = MaskSequence::new(
            1,
            seg.height(),
            seg.width(),
            seg.values()[n * seg.height() * seg.width()..(n + 1) * seg.height() * seg.width()].to_vec(),
        )?;
        let c = centroid_trajectory(&frame_mask)?[0];
        let dev = c.distance(gt_c);
        if dev > max_dev {
            max_dev = dev;
        }
        sum_dev += dev as f64;
    }
    let mean_dev = if sum_dev.is_finite() { (sum_dev / gt.len() as f64) as f32 } else { f32::INFINITY };

    let shift = color_distance(
        &in_mask_mean_color(edited, m)?,
        &in_mask_mean_color(original, m)?,
    );
    let mse = out_mask_mse(edited, original, m)?;
    let fc = frame_consistency(edited, d, sched)?;

    Ok(MetricReport {
        motion_max_dev: max_dev,
        motion_mean_dev: mean_dev,
        in_mask_color_shift: shift,
        out_mask_mse: mse,
        frame_consistency: fc,
    })
}
