//! Flat `key = value` run configuration: one assignment per line, `#`
//! comments, unknown or repeated keys rejected.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::engine::EditConfig;
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub t_count: usize,
    pub beta_min: f32,
    pub beta_max: f32,

    pub steps: usize,
    pub lr: f32,
    pub w: f32,
    pub lambda_s: f32,
    pub lambda_t: f32,
    pub t_min_frac: f64,
    pub t_max_frac: f64,
    pub mask_vdds: bool,
    pub share_eps: bool,

    pub source_caption: String,
    pub target_caption: String,
    pub sample_caption: String,

    pub params_in: Option<PathBuf>,
    pub params_out: Option<PathBuf>,
    pub video_in: Option<PathBuf>,
    pub mask_in: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub scene_kind: String,
    pub scene_color: String,
    pub scene_size: f32,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub start_row: f32,
    pub start_col: f32,
    pub vel_row: f32,
    pub vel_col: f32,
    pub texture_std: f32,
    pub mask_margin: usize,

    pub train_steps: usize,
    pub train_lr: f32,
    pub train_videos: usize,

    pub spatial_factor: usize,
    pub temporal_factor: usize,
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            t_count: 100,
            beta_min: 1e-3,
            beta_max: 0.2,
            steps: 200,
            lr: 0.4,
            w: 9.0,
            lambda_s: 1.0,
            lambda_t: 1.0,
            t_min_frac: 0.05,
            t_max_frac: 0.95,
            mask_vdds: true,
            share_eps: true,
            source_caption: "red_square".to_string(),
            target_caption: "blue_square".to_string(),
            sample_caption: "red_square".to_string(),
            params_in: None,
            params_out: None,
            video_in: None,
            mask_in: None,
            out_dir: PathBuf::from("out"),
            scene_kind: "square".to_string(),
            scene_color: "red".to_string(),
            scene_size: 10.0,
            frames: 8,
            height: 32,
            width: 32,
            start_row: 16.0,
            start_col: 8.0,
            vel_row: 0.0,
            vel_col: 2.0,
            texture_std: 0.0,
            mask_margin: 3,
            train_steps: 2000,
            train_lr: 3e-3,
            train_videos: 24,
            spatial_factor: 2,
            temporal_factor: 2,
            snapshot_every: 0,
        }
    }
}

fn parse_err(line_no: usize, msg: impl Into<String>) -> CoreError {
    CoreError::invalid("RunConfig::parse", format!("line {}: {}", line_no, msg.into()))
}

macro_rules! assign {
    ($cfg:ident, $key:ident, $raw:ident, $line:ident, {
        $($name:literal => $field:ident : $kind:tt),+ $(,)?
    }) => {
        match $key {
            $($name => assign!(@set $cfg, $field, $raw, $line, $kind),)+
            other => {
                return Err(parse_err($line, format!("unknown key '{}'", other)));
            }
        }
    };
    (@set $cfg:ident, $field:ident, $raw:ident, $line:ident, num) => {
        $cfg.$field = $raw
            .parse()
            .map_err(|_| parse_err($line, format!("cannot parse '{}'", $raw)))?
    };
    (@set $cfg:ident, $field:ident, $raw:ident, $line:ident, boolean) => {
        $cfg.$field = match $raw {
            "true" => true,
            "false" => false,
            _ => return Err(parse_err($line, format!("expected true/false, got '{}'", $raw))),
        }
    };
    (@set $cfg:ident, $field:ident, $raw:ident, $line:ident, string) => {
        $cfg.$field = $raw.to_string()
    };
    (@set $cfg:ident, $field:ident, $raw:ident, $line:ident, path) => {
        $cfg.$field = PathBuf::from($raw)
    };
    (@set $cfg:ident, $field:ident, $raw:ident, $line:ident, opt_path) => {
        $cfg.$field = if $raw.is_empty() { None } else { Some(PathBuf::from($raw)) }
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, format!("expected 'key = value', got '{}'", line)))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(parse_err(line_no, format!("duplicate key '{}'", key)));
            }
            assign!(cfg, key, value, line_no, {
                "seed" => seed: num,
                "t_count" => t_count: num,
                "beta_min" => beta_min: num,
                "beta_max" => beta_max: num,
                "steps" => steps: num,
                "lr" => lr: num,
                "w" => w: num,
                "lambda_s" => lambda_s: num,
                "lambda_t" => lambda_t: num,
                "t_min_frac" => t_min_frac: num,
                "t_max_frac" => t_max_frac: num,
                "mask_vdds" => mask_vdds: boolean,
                "share_eps" => share_eps: boolean,
                "source_caption" => source_caption: string,
                "target_caption" => target_caption: string,
                "sample_caption" => sample_caption: string,
                "params_in" => params_in: opt_path,
                "params_out" => params_out: opt_path,
                "video_in" => video_in: opt_path,
                "mask_in" => mask_in: opt_path,
                "out_dir" => out_dir: path,
                "scene_kind" => scene_kind: string,
                "scene_color" => scene_color: string,
                "scene_size" => scene_size: num,
                "frames" => frames: num,
                "height" => height: num,
                "width" => width: num,
                "start_row" => start_row: num,
                "start_col" => start_col: num,
                "vel_row" => vel_row: num,
                "vel_col" => vel_col: num,
                "texture_std" => texture_std: num,
                "mask_margin" => mask_margin: num,
                "train_steps" => train_steps: num,
                "train_lr" => train_lr: num,
                "train_videos" => train_videos: num,
                "spatial_factor" => spatial_factor: num,
                "temporal_factor" => temporal_factor: num,
                "snapshot_every" => snapshot_every: num,
            });
        }
        Ok(cfg)
    }

    /// The effective configuration as config-file text.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        format!(
            "seed = {}\nt_count = {}\nbeta_min = {}\nbeta_max = {}\nsteps = {}\nlr = {}\nw = {}\n\
             lambda_s = {}\nlambda_t = {}\nt_min_frac = {}\nt_max_frac = {}\nmask_vdds = {}\n\
             share_eps = {}\nsource_caption = {}\ntarget_caption = {}\nsample_caption = {}\n\
             params_in = {}\nparams_out = {}\nvideo_in = {}\nmask_in = {}\nout_dir = {}\n\
             scene_kind = {}\nscene_color = {}\nscene_size = {}\nframes = {}\nheight = {}\n\
             width = {}\nstart_row = {}\nstart_col = {}\nvel_row = {}\nvel_col = {}\n\
             texture_std = {}\nmask_margin = {}\ntrain_steps = {}\ntrain_lr = {}\n\
             train_videos = {}\nspatial_factor = {}\ntemporal_factor = {}\nsnapshot_every = {}\n",
            self.seed,
            self.t_count,
            self.beta_min,
            self.beta_max,
            self.steps,
            self.lr,
            self.w,
            self.lambda_s,
            self.lambda_t,
            self.t_min_frac,
            self.t_max_frac,
            self.mask_vdds,
            self.share_eps,
            self.source_caption,
            self.target_caption,
            self.sample_caption,
            opt(&self.params_in),
            opt(&self.params_out),
            opt(&self.video_in),
            opt(&self.mask_in),
            self.out_dir.display(),
            self.scene_kind,
            self.scene_color,
            self.scene_size,
            self.frames,
            self.height,
            self.width,
            self.start_row,
            self.start_col,
            self.vel_row,
            self.vel_col,
            self.texture_std,
            self.mask_margin,
            self.train_steps,
            self.train_lr,
            self.train_videos,
            self.spatial_factor,
            self.temporal_factor,
            self.snapshot_every,
        )
    }

    pub fn edit_config(&self) -> EditConfig {
        EditConfig {
            steps: self.steps,
            lr: self.lr,
            w: self.w,
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t,
            t_min_frac: self.t_min_frac,
            t_max_frac: self.t_max_frac,
            seed: self.seed,
            mask_vdds: self.mask_vdds,
            share_eps: self.share_eps,
        }
    }
}
