//! Synthetic moving-shape videos with ground-truth masks and captions.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng;
use crate::video::{MaskSequence, Video};

/// Color classes shared by scenes and captions, in [-1, 1] RGB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorClass {
    Red,
    Green,
    Blue,
}

impl ColorClass {
    pub fn mean(&self) -> [f32; 3] {
        match self {
            ColorClass::Red => [0.8, -0.8, -0.8],
            ColorClass::Green => [-0.8, 0.8, -0.8],
            ColorClass::Blue => [-0.8, -0.8, 0.8],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ColorClass::Red => "red",
            ColorClass::Green => "green",
            ColorClass::Blue => "blue",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(ColorClass::Red),
            "green" => Ok(ColorClass::Green),
            "blue" => Ok(ColorClass::Blue),
            _ => Err(CoreError::invalid("ColorClass::parse", format!("unknown color '{}'", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
}

impl ShapeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(ShapeKind::Square),
            "circle" => Ok(ShapeKind::Circle),
            _ => Err(CoreError::invalid("ShapeKind::parse", format!("unknown shape '{}'", s))),
        }
    }
}

/// A single moving shape over a flat (optionally textured) background.
/// Trajectory entries are (row, col) centers, one per frame.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub kind: ShapeKind,
    pub size: f32,
    pub color: ColorClass,
    pub background: [f32; 3],
    pub trajectory: Vec<(f32, f32)>,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of seeded background texture; 0 means clean.
    pub texture_std: f32,
}

impl SceneSpec {
    /// Straight-line motion: center starts at (row, col) and moves by
    /// (vel_row, vel_col) per frame.
    #[allow(clippy::too_many_arguments)]
    pub fn linear(
        kind: ShapeKind,
        size: f32,
        color: ColorClass,
        frames: usize,
        height: usize,
        width: usize,
        start: (f32, f32),
        vel: (f32, f32),
    ) -> Self {
        let trajectory = (0..frames)
            .map(|k| (start.0 + vel.0 * k as f32, start.1 + vel.1 * k as f32))
            .collect();
        SceneSpec {
            kind,
            size,
            color,
            background: [0.0, 0.0, 0.0],
            trajectory,
            height,
            width,
            texture_std: 0.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }

    pub fn caption(&self) -> String {
        format!("{}_{}", self.color.name(), self.kind.name())
    }
}

fn support(spec: &SceneSpec, center: (f32, f32), i: usize, j: usize) -> bool {
    let (cr, cc) = center;
    let half = spec.size / 2.0;
    match spec.kind {
        ShapeKind::Square => {
            let r = i as f32;
            let c = j as f32;
            r >= cr - half && r < cr + half && c >= cc - half && c < cc + half
        }
        ShapeKind::Circle => {
            let dr = i as f32 - cr;
            let dc = j as f32 - cc;
            dr * dr + dc * dc <= half * half
        }
    }
}

/// Rasterizes the scene. The mask is the exact shape support per frame; the
/// seed only affects the optional background texture, which is a single
/// static field shared by all frames.
pub fn gen_synthetic(spec: &SceneSpec, seed: u64) -> Result<(Video, MaskSequence, String)> {
    let (n, h, w) = (spec.frames(), spec.height, spec.width);
    if n == 0 {
        return Err(CoreError::invalid("gen_synthetic", "empty trajectory"));
    }
    if spec.size <= 0.0 {
        return Err(CoreError::invalid("gen_synthetic", "size must be positive"));
    }

    let mut texture = vec![0.0f32; 3 * h * w];
    if spec.texture_std > 0.0 {
        let mut r = rng::seeded(seed);
        for v in texture.iter_mut() {
            *v = spec.texture_std * r.sample::<f32, _>(rand_distr::StandardNormal);
        }
    }

    let color = spec.color.mean();
    let mut video = Video::zeros(n, 3, h, w);
    let mut mask = MaskSequence::zeros(n, h, w);
    for (fi, center) in spec.trajectory.iter().enumerate() {
        let mut any = false;
        for i in 0..h {
            for j in 0..w {
                let inside = support(spec, *center, i, j);
                if inside {
                    any = true;
                    mask.set(fi, i, j, 1);
                }
                for c in 0..3 {
                    let v = if inside {
                        color[c]
                    } else {
                        spec.background[c] + texture[(c * h + i) * w + j]
                    };
                    video.set(fi, c, i, j, v);
                }
            }
        }
        if !any {
            return Err(CoreError::invalid(
                "gen_synthetic",
                format!("frame {}: shape support is empty", fi),
            ));
        }
        // reject shapes that leave the frame
        let half = spec.size / 2.0;
        let (cr, cc) = *center;
        if cr - half < -0.5 || cc - half < -0.5 || cr + half > h as f32 - 0.5 || cc + half > w as f32 - 0.5 {
            return Err(CoreError::invalid(
                "gen_synthetic",
                format!("frame {}: shape leaves the {}x{} frame", fi, h, w),
            ));
        }
    }
    Ok((video, mask, spec.caption()))
}

/// A seeded mixture of red and blue moving squares for denoiser training.
pub fn training_scenes(frames: usize, height: usize, width: usize, count: usize, seed: u64) -> Vec<SceneSpec> {
    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(count);
    let sizes = [8.0f32, 10.0, 12.0];
    let vels = [(0.0f32, 1.0f32), (0.0, 2.0), (0.0, -1.0), (0.0, -2.0), (1.0, 0.0), (-1.0, 0.0), (1.0, 1.0), (0.0, 0.0)];
    for idx in 0..count {
        let color = if idx % 2 == 0 { ColorClass::Red } else { ColorClass::Blue };
        let size = sizes[r.gen_range(0..sizes.len())];
        let vel = vels[r.gen_range(0..vels.len())];
        let span_r = vel.0 * (frames - 1) as f32;
        let span_c = vel.1 * (frames - 1) as f32;
        let half = size / 2.0;
        let lo_r = half + span_r.max(0.0) - span_r.min(0.0) * 0.0;
        let lo_c = half + span_c.max(0.0) - span_c.min(0.0) * 0.0;
        let min_r = half - span_r.min(0.0);
        let max_r = height as f32 - 1.0 - half - span_r.max(0.0);
        let min_c = half - span_c.min(0.0);
        let max_c = width as f32 - 1.0 - half - span_c.max(0.0);
        let _ = (lo_r, lo_c);
        let start_r = if max_r > min_r { min_r + r.gen::<f32>() * (max_r - min_r) } else { height as f32 / 2.0 };
        let start_c = if max_c > min_c { min_c + r.gen::<f32>() * (max_c - min_c) } else { width as f32 / 2.0 };
        out.push(SceneSpec::linear(
            ShapeKind::Square,
            size,
            color,
            frames,
            height,
            width,
            (start_r.round(), start_c.round()),
            vel,
        ));
    }
    out
}
