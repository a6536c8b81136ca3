//! Spatial and temporal self-similarity descriptors and matching losses.
//!
//! The spatial map of a frame is the pairwise cosine between its key tokens;
//! the temporal matrix is the pairwise cosine between per-frame marginal
//! means of the keys. Matching either descriptor against the reference video
//! is scale invariant, so the losses track relative structure rather than
//! absolute appearance.

use crate::condition::Condition;
use crate::denoiser::{Denoiser, KeyFeatures};
use crate::diffusion::forward_noise;
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::schedule::NoiseSchedule;
use crate::tensor::{self_cosine, Tensor};
use crate::video::Video;

use crate::distill::DistillSample;

/// Per-frame token-pair cosine maps, stacked as [frames, tokens, tokens].
pub fn spatial_selfsim(k: &KeyFeatures) -> Result<Tensor> {
    let (n, tokens) = (k.frame_count(), k.token_count());
    let mut out = Tensor::zeros(&[n, tokens, tokens]);
    for fi in 0..n {
        let frame = k.frame(fi)?;
        let ss = self_cosine(&frame)?;
        out.data_mut()[fi * tokens * tokens..(fi + 1) * tokens * tokens].copy_from_slice(ss.data());
    }
    Ok(out)
}

/// Mean squared difference between spatial maps, averaged over frames:
/// (1/N) sum_n ||SS_n(x) - SS_n(ref)||_F^2.
pub fn spatial_ssm_loss(k_x: &KeyFeatures, k_ref: &KeyFeatures) -> Result<f32> {
    if k_x.tensor().shape() != k_ref.tensor().shape() {
        return Err(CoreError::shapes(
            "spatial_ssm_loss",
            k_x.tensor().shape(),
            k_ref.tensor().shape(),
        ));
    }
    let n = k_x.frame_count();
    let ss_x = spatial_selfsim(k_x)?;
    let ss_r = spatial_selfsim(k_ref)?;
    let mut acc = 0.0f64;
    for (a, b) in ss_x.data().iter().zip(ss_r.data()) {
        let d = (a - b) as f64;
        acc += d * d;
    }
    Ok((acc / n as f64) as f32)
}

/// Per-frame channel mean over tokens: [frames, channels].
pub fn spatial_marginal_mean(k: &KeyFeatures) -> Result<Tensor> {
    k.tensor().mean_axis(1)
}

/// Frame-pair cosine of marginal means: [frames, frames].
pub fn temporal_selfsim(k: &KeyFeatures) -> Result<Tensor> {
    if k.frame_count() < 2 {
        return Err(CoreError::invalid(
            "temporal_selfsim",
            format!("need at least 2 frames, got {}", k.frame_count()),
        ));
    }
    let m = spatial_marginal_mean(k)?;
    self_cosine(&m)
}

/// ||TS(x) - TS(ref)||_F^2.
pub fn temporal_ssm_loss(k_x: &KeyFeatures, k_ref: &KeyFeatures) -> Result<f32> {
    if k_x.tensor().shape() != k_ref.tensor().shape() {
        return Err(CoreError::shapes(
            "temporal_ssm_loss",
            k_x.tensor().shape(),
            k_ref.tensor().shape(),
        ));
    }
    let ts_x = temporal_selfsim(k_x)?;
    let ts_r = temporal_selfsim(k_ref)?;
    let mut acc = 0.0f64;
    for (a, b) in ts_x.data().iter().zip(ts_r.data()) {
        let d = (a - b) as f64;
        acc += d * d;
    }
    Ok(acc as f32)
}

/// Gradient of the combined self-similarity objective with the losses that
/// produced it.
#[derive(Clone, Debug)]
pub struct SsmEval {
    pub grad: Video,
    pub spatial_loss: f32,
    pub temporal_loss: f32,
}

/// Noises both videos with the shared (eps, t), extracts keys from each
/// branch under its own caption, and differentiates
/// lambda_s * L_spatial + lambda_t * L_temporal with respect to `x`.
/// The reference branch is constant.
#[allow(clippy::too_many_arguments)]
pub fn ssm_grads(
    x: &Video,
    x_ref: &Video,
    s: &DistillSample,
    d: &dyn Denoiser,
    y: &Condition,
    y_ref: &Condition,
    sched: &NoiseSchedule,
    lambda_s: f32,
    lambda_t: f32,
) -> Result<SsmEval> {
    if !d.differentiable() {
        return Err(CoreError::NotDifferentiable);
    }
    if !x.same_geometry(x_ref) {
        return Err(CoreError::shapes("ssm_grads", x.tensor().shape(), x_ref.tensor().shape()));
    }

    // reference branch, no gradients
    let xr_t = forward_noise(x_ref, s.t, &s.eps, sched)?;
    let k_ref = d.extract_keys(&xr_t, s.t, y_ref, sched)?;
    let ss_ref = spatial_selfsim(&k_ref)?;
    let ts_ref = temporal_selfsim(&k_ref)?;

    // target branch on the tape; the noising is the same affine map as
    // forward_noise so identical inputs produce identical keys
    let ab = sched.alpha_bar(s.t)?;
    let mut g = Graph::new();
    let xv = g.leaf(x.tensor().clone());
    let scaled = g.scale(xv, ab.sqrt());
    let noise_term = g.constant(s.eps.tensor().scale((1.0 - ab).sqrt()));
    let xt_v = g.add(scaled, noise_term)?;
    let keys_v = d.extract_keys_var(&mut g, xt_v, s.t, y, sched)?;

    let kshape = g.value(keys_v).shape().to_vec();
    let (n, tokens, channels) = (kshape[0], kshape[1], kshape[2]);

    // spatial term, frame by frame
    let mut spatial_acc: Option<Var> = None;
    for fi in 0..n {
        let frame = g.slice_axis0(keys_v, fi, 1)?;
        let frame = g.reshape(frame, &[tokens, channels])?;
        let ss = g.self_cosine(frame)?;
        let ss_ref_frame = Tensor::new(
            vec![tokens, tokens],
            ss_ref.data()[fi * tokens * tokens..(fi + 1) * tokens * tokens].to_vec(),
        )?;
        let refc = g.constant(ss_ref_frame);
        let diff = g.sub(ss, refc)?;
        let sq = g.square(diff);
        let fsum = g.sum(sq);
        spatial_acc = Some(match spatial_acc {
            Some(acc) => g.add(acc, fsum)?,
            None => fsum,
        });
    }
    let spatial_var = g.scale(spatial_acc.expect("at least one frame"), 1.0 / n as f32);

    // temporal term
    let marginal = g.mean_axis(keys_v, 1)?;
    let ts = g.self_cosine(marginal)?;
    let ts_refc = g.constant(ts_ref);
    let tdiff = g.sub(ts, ts_refc)?;
    let tsq = g.square(tdiff);
    let temporal_var = g.sum(tsq);

    let ws = g.scale(spatial_var, lambda_s);
    let wt = g.scale(temporal_var, lambda_t);
    let total = g.add(ws, wt)?;
    g.backward(total)?;

    let spatial_loss = g.value(spatial_var).scalar_value()?;
    let temporal_loss = g.value(temporal_var).scalar_value()?;
    let grad_t = g
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.tensor().shape()));
    Ok(SsmEval {
        grad: Video::from_tensor(grad_t)?,
        spatial_loss,
        temporal_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn keys_from(t: Tensor) -> KeyFeatures {
        KeyFeatures::new(t).unwrap()
    }

    #[test]
    fn all_identical_tokens_give_all_ones() {
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&[0.5, -1.0, 2.0]);
        }
        let k = keys_from(Tensor::new(vec![1, 4, 3], data).unwrap());
        let ss = spatial_selfsim(&k).unwrap();
        for v in ss.data() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_tokens_give_identity() {
        let k = keys_from(Tensor::new(vec![1, 2, 2], vec![3.0, 0.0, 0.0, 7.0]).unwrap());
        let ss = spatial_selfsim(&k).unwrap();
        assert_eq!(ss.data()[0], 1.0);
        assert_eq!(ss.data()[3], 1.0);
        assert!(ss.data()[1].abs() < 1e-7 && ss.data()[2].abs() < 1e-7);
    }

    #[test]
    fn spatial_map_matches_brute_force() {
        let mut r = rng::seeded(11);
        let k = keys_from(rng::normal_tensor(&mut r, &[1, 6, 4]));
        let ss = spatial_selfsim(&k).unwrap();
        let frame = k.frame(0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j {
                    1.0
                } else {
                    let a = &frame.data()[i * 4..(i + 1) * 4];
                    let b = &frame.data()[j * 4..(j + 1) * 4];
                    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
                    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
                    dot / ((na + 1e-8) * (nb + 1e-8))
                };
                assert!(
                    (ss.data()[i * 6 + j] - expect).abs() < 1e-6,
                    "({i},{j}): {} vs {expect}",
                    ss.data()[i * 6 + j]
                );
            }
        }
    }

    #[test]
    fn loss_zero_at_equal_and_scaled_keys() {
        let mut r = rng::seeded(12);
        let k = keys_from(rng::normal_tensor(&mut r, &[2, 5, 3]));
        assert_eq!(spatial_ssm_loss(&k, &k).unwrap(), 0.0);
        let k2 = keys_from(k.tensor().scale(2.0));
        let loss = spatial_ssm_loss(&k2, &k).unwrap();
        assert!(loss < 1e-10, "cosine scale invariance violated: {loss}");
    }

    #[test]
    fn marginal_mean_example() {
        // two tokens [1,3] and [3,5] -> mean [2,4]
        let k = keys_from(Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap());
        let m = spatial_marginal_mean(&k).unwrap();
        assert_eq!(m.data(), &[2.0, 4.0]);
    }

    #[test]
    fn temporal_identity_for_orthogonal_frame_means() {
        let k = keys_from(Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 2.0]).unwrap());
        let ts = temporal_selfsim(&k).unwrap();
        assert_eq!(ts.data()[0], 1.0);
        assert_eq!(ts.data()[3], 1.0);
        assert!(ts.data()[1].abs() < 1e-7);
    }

    #[test]
    fn temporal_matches_brute_force() {
        let mut r = rng::seeded(13);
        let k = keys_from(rng::normal_tensor(&mut r, &[4, 5, 3]));
        let ts = temporal_selfsim(&k).unwrap();
        let m = spatial_marginal_mean(&k).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j {
                    1.0
                } else {
                    let a = &m.data()[i * 3..(i + 1) * 3];
                    let b = &m.data()[j * 3..(j + 1) * 3];
                    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
                    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
                    dot / ((na + 1e-8) * (nb + 1e-8))
                };
                assert!((ts.data()[i * 4 + j] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn losses_are_symmetric() {
        let mut r = rng::seeded(14);
        let a = keys_from(rng::normal_tensor(&mut r, &[3, 4, 3]));
        let b = keys_from(rng::normal_tensor(&mut r, &[3, 4, 3]));
        assert_eq!(spatial_ssm_loss(&a, &b).unwrap(), spatial_ssm_loss(&b, &a).unwrap());
        assert_eq!(temporal_ssm_loss(&a, &b).unwrap(), temporal_ssm_loss(&b, &a).unwrap());
    }
}
