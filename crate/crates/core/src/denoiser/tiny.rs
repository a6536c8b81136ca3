//! A tiny trainable text-conditioned video denoiser.
//!
//! Architecture: patchify -> linear token embedding -> add sinusoidal
//! timestep embedding -> one spatial self-attention block per frame -> one
//! temporal attention block across frames -> linear head back to per-pixel
//! noise. The key tap is the spatial attention's key projection.
//!
//! The caption code enters through the spatial attention's value path, after
//! the key projection, so extracted keys depend only on (x_t, t). Matching
//! caption-conditioned branches therefore produce identical keys on
//! identical inputs, which the self-similarity losses rely on.

use crate::condition::{Condition, CONDITION_DIM};
use crate::denoiser::{Denoiser, KeyFeatures};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{patchify, unpatchify, Tensor};
use crate::video::Video;

/// Static shape choices for the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TinyGeometry {
    pub patch: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl Default for TinyGeometry {
    fn default() -> Self {
        TinyGeometry { patch: 4, channels: 3, embed_dim: 16 }
    }
}

impl TinyGeometry {
    pub fn token_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// Named weight tensors, in a fixed order shared by the optimizer and the
/// parameter container.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyParams {
    pub geometry: TinyGeometry,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub cond_w: Tensor,
    pub sattn_wq: Tensor,
    pub sattn_wk: Tensor,
    pub sattn_wv: Tensor,
    pub sattn_wo: Tensor,
    pub tattn_wq: Tensor,
    pub tattn_wk: Tensor,
    pub tattn_wv: Tensor,
    pub tattn_wo: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
    /// Multiplicative output modulation from the timestep code; zero weights
    /// leave the head untouched. Lets the network express the noise-level
    /// dependent amplitude of the target epsilon.
    pub head_gain: Tensor,
}

pub(crate) const PARAM_NAMES: [&str; 14] = [
    "embed.w", "embed.b", "cond.w", "sattn.wq", "sattn.wk", "sattn.wv", "sattn.wo",
    "tattn.wq", "tattn.wk", "tattn.wv", "tattn.wo", "head.w", "head.b", "head.gain",
];

impl TinyParams {
    /// Seeded initialization: fan-in scaled normals, zero biases.
    pub fn init(geometry: TinyGeometry, seed: u64) -> Self {
        let d = geometry.embed_dim;
        let td = geometry.token_dim();
        let mut r = rng::seeded(seed);
        let mut mk = |rows: usize, cols: usize| {
            rng::normal_tensor(&mut r, &[rows, cols]).scale(1.0 / (rows as f32).sqrt())
        };
        TinyParams {
            geometry,
            embed_w: mk(td, d),
            embed_b: Tensor::zeros(&[d]),
            cond_w: mk(CONDITION_DIM, d),
            sattn_wq: mk(d, d),
            sattn_wk: mk(d, d),
            sattn_wv: mk(d, d),
            sattn_wo: mk(d, d),
            tattn_wq: mk(d, d),
            tattn_wk: mk(d, d),
            tattn_wv: mk(d, d),
            tattn_wo: mk(d, d),
            head_w: mk(d, td),
            head_b: Tensor::zeros(&[td]),
            head_gain: Tensor::zeros(&[d, td]),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            (PARAM_NAMES[0], &self.embed_w),
            (PARAM_NAMES[1], &self.embed_b),
            (PARAM_NAMES[2], &self.cond_w),
            (PARAM_NAMES[3], &self.sattn_wq),
            (PARAM_NAMES[4], &self.sattn_wk),
            (PARAM_NAMES[5], &self.sattn_wv),
            (PARAM_NAMES[6], &self.sattn_wo),
            (PARAM_NAMES[7], &self.tattn_wq),
            (PARAM_NAMES[8], &self.tattn_wk),
            (PARAM_NAMES[9], &self.tattn_wv),
            (PARAM_NAMES[10], &self.tattn_wo),
            (PARAM_NAMES[11], &self.head_w),
            (PARAM_NAMES[12], &self.head_b),
            (PARAM_NAMES[13], &self.head_gain),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            (PARAM_NAMES[0], &mut self.embed_w),
            (PARAM_NAMES[1], &mut self.embed_b),
            (PARAM_NAMES[2], &mut self.cond_w),
            (PARAM_NAMES[3], &mut self.sattn_wq),
            (PARAM_NAMES[4], &mut self.sattn_wk),
            (PARAM_NAMES[5], &mut self.sattn_wv),
            (PARAM_NAMES[6], &mut self.sattn_wo),
            (PARAM_NAMES[7], &mut self.tattn_wq),
            (PARAM_NAMES[8], &mut self.tattn_wk),
            (PARAM_NAMES[9], &mut self.tattn_wv),
            (PARAM_NAMES[10], &mut self.tattn_wo),
            (PARAM_NAMES[11], &mut self.head_w),
            (PARAM_NAMES[12], &mut self.head_b),
            (PARAM_NAMES[13], &mut self.head_gain),
        ]
    }
}

/// Sinusoidal timestep code of width `dim`.
pub fn time_embedding(t: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0f32; dim];
    let half = dim / 2;
    for i in 0..half {
        let freq = (10_000.0f32).powf(-(2.0 * i as f32) / dim as f32);
        let arg = t as f32 * freq;
        data[2 * i] = arg.sin();
        data[2 * i + 1] = arg.cos();
    }
    Tensor::new(vec![dim], data).expect("len matches dim")
}

/// Graph handles to every parameter.
pub struct TinyVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub cond_w: Var,
    pub sattn_wq: Var,
    pub sattn_wk: Var,
    pub sattn_wv: Var,
    pub sattn_wo: Var,
    pub tattn_wq: Var,
    pub tattn_wk: Var,
    pub tattn_wv: Var,
    pub tattn_wo: Var,
    pub head_w: Var,
    pub head_b: Var,
    pub head_gain: Var,
}

pub fn register_params(g: &mut Graph, p: &TinyParams) -> TinyVars {
    TinyVars {
        embed_w: g.leaf(p.embed_w.clone()),
        embed_b: g.leaf(p.embed_b.clone()),
        cond_w: g.leaf(p.cond_w.clone()),
        sattn_wq: g.leaf(p.sattn_wq.clone()),
        sattn_wk: g.leaf(p.sattn_wk.clone()),
        sattn_wv: g.leaf(p.sattn_wv.clone()),
        sattn_wo: g.leaf(p.sattn_wo.clone()),
        tattn_wq: g.leaf(p.tattn_wq.clone()),
        tattn_wk: g.leaf(p.tattn_wk.clone()),
        tattn_wv: g.leaf(p.tattn_wv.clone()),
        tattn_wo: g.leaf(p.tattn_wo.clone()),
        head_w: g.leaf(p.head_w.clone()),
        head_b: g.leaf(p.head_b.clone()),
        head_gain: g.leaf(p.head_gain.clone()),
    }
}

impl TinyVars {
    pub fn in_order(&self) -> [Var; 14] {
        [
            self.embed_w, self.embed_b, self.cond_w, self.sattn_wq, self.sattn_wk,
            self.sattn_wv, self.sattn_wo, self.tattn_wq, self.tattn_wk, self.tattn_wv,
            self.tattn_wo, self.head_w, self.head_b, self.head_gain,
        ]
    }
}

/// Embedded tokens with the timestep code added: everything upstream of the
/// key tap. Returns [frames, tokens, embed_dim].
fn embed_tokens_vars(
    g: &mut Graph,
    vars: &TinyVars,
    x_t: Var,
    t: usize,
    geom: TinyGeometry,
) -> Result<Var> {
    let shape = g.value(x_t).shape().to_vec();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let tokens_per_frame = (h / geom.patch) * (w / geom.patch);
    let d = geom.embed_dim;

    let tokens = g.patchify(x_t, geom.patch)?;
    let h0 = g.linear(tokens, vars.embed_w)?;
    let b = g.repeat_rows(vars.embed_b, n * tokens_per_frame)?;
    let b = g.reshape(b, &[n, tokens_per_frame, d])?;
    let h0 = g.add(h0, b)?;
    let temb = g.constant(time_embedding(t, d));
    let temb = g.repeat_rows(temb, n * tokens_per_frame)?;
    let temb = g.reshape(temb, &[n, tokens_per_frame, d])?;
    g.add(h0, temb)
}

/// Spatial-attention key projection: the designated feature tap.
pub fn keys_vars(g: &mut Graph, vars: &TinyVars, x_t: Var, t: usize, geom: TinyGeometry) -> Result<Var> {
    let h = embed_tokens_vars(g, vars, x_t, t, geom)?;
    g.linear(h, vars.sattn_wk)
}

fn attention_vars(
    g: &mut Graph,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    v_input: Var,
    d: usize,
) -> Result<Var> {
    let q = g.linear(x, wq)?;
    let k = g.linear(x, wk)?;
    let v = g.linear(v_input, wv)?;
    let scores = g.bmm_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (d as f32).sqrt());
    let attn = g.softmax_last(scores)?;
    let mixed = g.bmm(attn, v)?;
    let out = g.linear(mixed, wo)?;
    g.add(x, out)
}

/// Full forward pass on a graph. Returns (eps, keys).
pub fn forward_vars(
    g: &mut Graph,
    vars: &TinyVars,
    x_t: Var,
    t: usize,
    y: &Condition,
    geom: TinyGeometry,
) -> Result<(Var, Var)> {
    let shape = g.value(x_t).shape().to_vec();
    let (n, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
    let tokens_per_frame = (hh / geom.patch) * (ww / geom.patch);
    let d = geom.embed_dim;

    let h = embed_tokens_vars(g, vars, x_t, t, geom)?;
    let keys = g.linear(h, vars.sattn_wk)?;

    // caption code enters the value path only
    let yvec = g.constant(Tensor::new(vec![1, CONDITION_DIM], y.embedding().to_vec())?);
    let ycode = g.matmul(yvec, vars.cond_w)?;
    let ycode = g.repeat_rows(ycode, n * tokens_per_frame)?;
    let ycode = g.reshape(ycode, &[n, tokens_per_frame, d])?;
    let hv = g.add(h, ycode)?;

    // spatial attention, reusing the tapped keys
    let q = g.linear(h, vars.sattn_wq)?;
    let v = g.linear(hv, vars.sattn_wv)?;
    let scores = g.bmm_nt(q, keys)?;
    let scores = g.scale(scores, 1.0 / (d as f32).sqrt());
    let attn = g.softmax_last(scores)?;
    let mixed = g.bmm(attn, v)?;
    let sa = g.linear(mixed, vars.sattn_wo)?;
    let h1 = g.add(h, sa)?;

    // temporal attention across frames at each token position
    let ht = g.transpose01(h1)?;
    let h2t = attention_vars(g, ht, vars.tattn_wq, vars.tattn_wk, vars.tattn_wv, vars.tattn_wo, ht, d)?;
    let h2 = g.transpose01(h2t)?;

    let head = g.linear(h2, vars.head_w)?;
    let hb = g.repeat_rows(vars.head_b, n * tokens_per_frame)?;
    let hb = g.reshape(hb, &[n, tokens_per_frame, geom.token_dim()])?;
    let eps_tokens = g.add(head, hb)?;
    // timestep-conditioned multiplicative gain: 1 + temb . head_gain
    let temb_row = g.constant(time_embedding(t, d).reshape(&[1, d])?);
    let gain_row = g.matmul(temb_row, vars.head_gain)?;
    let ones = g.constant(Tensor::full(&[1, geom.token_dim()], 1.0));
    let gain_row = g.add(gain_row, ones)?;
    let gain = g.repeat_rows(gain_row, n * tokens_per_frame)?;
    let gain = g.reshape(gain, &[n, tokens_per_frame, geom.token_dim()])?;
    let eps_tokens = g.mul(eps_tokens, gain)?;
    let eps = g.unpatchify(eps_tokens, geom.patch, c, hh, ww)?;
    Ok((eps, keys))
}

/// The denoiser proper: immutable parameters plus geometry.
#[derive(Clone, Debug)]
pub struct TinyDenoiser {
    params: TinyParams,
}

impl TinyDenoiser {
    pub fn new(params: TinyParams) -> Self {
        TinyDenoiser { params }
    }

    pub fn params(&self) -> &TinyParams {
        &self.params
    }

    pub fn geometry(&self) -> TinyGeometry {
        self.params.geometry
    }

    fn check_input(&self, x_t: &Video, op: &'static str) -> Result<()> {
        let geom = self.params.geometry;
        if x_t.channels() != geom.channels {
            return Err(CoreError::invalid(
                op,
                format!("expected {} channels, got {}", geom.channels, x_t.channels()),
            ));
        }
        if x_t.height() % geom.patch != 0 || x_t.width() % geom.patch != 0 {
            return Err(CoreError::invalid(
                op,
                format!("patch {} does not divide {}x{}", geom.patch, x_t.height(), x_t.width()),
            ));
        }
        Ok(())
    }

    /// Plain forward pass mirroring `forward_vars` op for op, so taped and
    /// untaped values agree bitwise.
    pub fn forward(&self, x_t: &Video, t: usize, y: &Condition) -> Result<(Video, KeyFeatures)> {
        self.check_input(x_t, "tiny_denoiser")?;
        let p = &self.params;
        let geom = p.geometry;
        let (n, c, hh, ww) = (x_t.frames(), x_t.channels(), x_t.height(), x_t.width());
        let tokens_per_frame = (hh / geom.patch) * (ww / geom.patch);
        let d = geom.embed_dim;

        let tokens = patchify(x_t.tensor(), geom.patch)?;
        let h0 = tokens.linear(&p.embed_w)?;
        let b = p.embed_b.repeat_rows(n * tokens_per_frame)?.reshape(&[n, tokens_per_frame, d])?;
        let h0 = h0.add(&b)?;
        let temb = time_embedding(t, d)
            .repeat_rows(n * tokens_per_frame)?
            .reshape(&[n, tokens_per_frame, d])?;
        let h = h0.add(&temb)?;
        if !h.all_finite() {
            return Err(CoreError::NonFinite("tiny_denoiser: token embedding".into()));
        }

        let keys = h.linear(&p.sattn_wk)?;

        let yvec = Tensor::new(vec![1, CONDITION_DIM], y.embedding().to_vec())?;
        let ycode = yvec
            .matmul(&p.cond_w)?
            .repeat_rows(n * tokens_per_frame)?
            .reshape(&[n, tokens_per_frame, d])?;
        let hv = h.add(&ycode)?;

        let q = h.linear(&p.sattn_wq)?;
        let v = hv.linear(&p.sattn_wv)?;
        let attn = q.bmm_nt(&keys)?.scale(1.0 / (d as f32).sqrt()).softmax_last()?;
        let sa = attn.bmm(&v)?.linear(&p.sattn_wo)?;
        let h1 = h.add(&sa)?;
        if !h1.all_finite() {
            return Err(CoreError::NonFinite("tiny_denoiser: spatial attention".into()));
        }

        let ht = h1.transpose01()?;
        let q2 = ht.linear(&p.tattn_wq)?;
        let k2 = ht.linear(&p.tattn_wk)?;
        let v2 = ht.linear(&p.tattn_wv)?;
        let attn2 = q2.bmm_nt(&k2)?.scale(1.0 / (d as f32).sqrt()).softmax_last()?;
        let ta = attn2.bmm(&v2)?.linear(&p.tattn_wo)?;
        let h2t = ht.add(&ta)?;
        let h2 = h2t.transpose01()?;
        if !h2.all_finite() {
            return Err(CoreError::NonFinite("tiny_denoiser: temporal attention".into()));
        }

        let head = h2.linear(&p.head_w)?;
        let hb = p.head_b.repeat_rows(n * tokens_per_frame)?.reshape(&[n, tokens_per_frame, geom.token_dim()])?;
        let eps_tokens = head.add(&hb)?;
        let gain_row = time_embedding(t, d).reshape(&[1, d])?.matmul(&p.head_gain)?;
        let gain_row = gain_row.add(&Tensor::full(&[1, geom.token_dim()], 1.0))?;
        let gain = gain_row
            .repeat_rows(n * tokens_per_frame)?
            .reshape(&[n, tokens_per_frame, geom.token_dim()])?;
        let eps_tokens = eps_tokens.mul(&gain)?;
        let eps = unpatchify(&eps_tokens, geom.patch, c, hh, ww)?;
        if !eps.all_finite() {
            return Err(CoreError::NonFinite("tiny_denoiser: head".into()));
        }
        Ok((Video::from_tensor(eps)?, KeyFeatures::new(keys)?))
    }
}

impl Denoiser for TinyDenoiser {
    fn predict_eps(&self, x_t: &Video, t: usize, y: &Condition, _sched: &NoiseSchedule) -> Result<Video> {
        Ok(self.forward(x_t, t, y)?.0)
    }

    fn extract_keys(&self, x_t: &Video, t: usize, _y: &Condition, _sched: &NoiseSchedule) -> Result<KeyFeatures> {
        self.check_input(x_t, "extract_keys")?;
        let p = &self.params;
        let geom = p.geometry;
        let (n, hh, ww) = (x_t.frames(), x_t.height(), x_t.width());
        let tokens_per_frame = (hh / geom.patch) * (ww / geom.patch);
        let d = geom.embed_dim;
        let tokens = patchify(x_t.tensor(), geom.patch)?;
        let h0 = tokens.linear(&p.embed_w)?;
        let b = p.embed_b.repeat_rows(n * tokens_per_frame)?.reshape(&[n, tokens_per_frame, d])?;
        let h0 = h0.add(&b)?;
        let temb = time_embedding(t, d)
            .repeat_rows(n * tokens_per_frame)?
            .reshape(&[n, tokens_per_frame, d])?;
        let h = h0.add(&temb)?;
        KeyFeatures::new(h.linear(&p.sattn_wk)?)
    }

    fn extract_keys_var(
        &self,
        g: &mut Graph,
        x_t: Var,
        t: usize,
        _y: &Condition,
        _sched: &NoiseSchedule,
    ) -> Result<Var> {
        let geom = self.params.geometry;
        let vars = TinyVars {
            embed_w: g.constant(self.params.embed_w.clone()),
            embed_b: g.constant(self.params.embed_b.clone()),
            cond_w: g.constant(self.params.cond_w.clone()),
            sattn_wq: g.constant(self.params.sattn_wq.clone()),
            sattn_wk: g.constant(self.params.sattn_wk.clone()),
            sattn_wv: g.constant(self.params.sattn_wv.clone()),
            sattn_wo: g.constant(self.params.sattn_wo.clone()),
            tattn_wq: g.constant(self.params.tattn_wq.clone()),
            tattn_wk: g.constant(self.params.tattn_wk.clone()),
            tattn_wv: g.constant(self.params.tattn_wv.clone()),
            tattn_wo: g.constant(self.params.tattn_wo.clone()),
            head_w: g.constant(self.params.head_w.clone()),
            head_b: g.constant(self.params.head_b.clone()),
            head_gain: g.constant(self.params.head_gain.clone()),
        };
        keys_vars(g, &vars, x_t, t, geom)
    }

    fn differentiable(&self) -> bool {
        true
    }
}
