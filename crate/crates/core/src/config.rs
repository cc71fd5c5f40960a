//! Run configuration and its `key = value` text form.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::geometry::{Vec3, VoxelGridSpec};
use crate::hoa::{HoaConfig, OpacitySource};
use crate::render::{Footprint, LossWeights};
use crate::scene::{Background, SceneConfig, RAW_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fields {
    #[default]
    Hybrid,
    Gaussian,
    Nerf,
}

impl Fields {
    pub fn gaussian(self) -> bool {
        matches!(self, Fields::Hybrid | Fields::Gaussian)
    }

    pub fn nerf(self) -> bool {
        matches!(self, Fields::Hybrid | Fields::Nerf)
    }
}

/// Which loss mask is used over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Goal {
    /// All-ones mask throughout.
    Scene,
    /// Object mask throughout.
    Object,
    /// All-ones for the first `warmup` steps, then the object mask.
    #[default]
    SceneObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewSelect {
    #[default]
    Random,
    Index(usize),
}

macro_rules! text_enum {
    ($ty:ty { $($variant:expr => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(Error::InvalidConfig(format!(
                        "unknown value {s:?}, expected one of: {}",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Fields { Fields::Hybrid => "hybrid", Fields::Gaussian => "gs", Fields::Nerf => "nerf" });
text_enum!(Goal { Goal::Scene => "scene", Goal::Object => "object", Goal::SceneObject => "scene+object" });
text_enum!(OpacitySource { OpacitySource::Fused => "fused", OpacitySource::Gaussian => "gs", OpacitySource::Nerf => "nerf" });
text_enum!(Footprint { Footprint::Point => "point", Footprint::Disk => "disk" });

impl fmt::Display for ViewSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewSelect::Random => f.write_str("random"),
            ViewSelect::Index(i) => write!(f, "{i}"),
        }
    }
}

impl FromStr for ViewSelect {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(ViewSelect::Random);
        }
        s.parse()
            .map(ViewSelect::Index)
            .map_err(|_| Error::InvalidConfig(format!("view must be `random` or an index, got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Parameter initialization and view sampling.
    pub seed: u64,
    /// Base seed of the scene pools.
    pub scene_seed: u64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub scene: SceneConfig,
    pub c_v: usize,
    pub hidden: usize,
    pub k: usize,
    pub channels: usize,
    pub loss: LossWeights,
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup: u64,
    pub steps: u64,
    pub fields: Fields,
    pub goal: Goal,
    pub hoa: bool,
    pub hsa: bool,
    pub multiscale: bool,
    pub opacity_source: OpacitySource,
    pub depth_render: bool,
    pub footprint: Footprint,
    pub view: ViewSelect,
    pub metrics_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_seed: 1,
            train_scenes: 8,
            eval_scenes: 4,
            scene: SceneConfig::default(),
            c_v: 16,
            hidden: 32,
            k: 4,
            channels: 16,
            loss: LossWeights::default(),
            lambda_bce: 10.0,
            lambda_dice: 10.0,
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup: 200,
            steps: 2000,
            fields: Fields::Hybrid,
            goal: Goal::SceneObject,
            hoa: true,
            hsa: true,
            multiscale: true,
            opacity_source: OpacitySource::Fused,
            depth_render: true,
            footprint: Footprint::Point,
            view: ViewSelect::Random,
            metrics_every: 10,
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn parse_triple<T: FromStr + Copy + Default>(key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!("{key}: expected three comma-separated values, got {v:?}")));
    }
    let mut out = [T::default(); 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_num(key, p)?;
    }
    Ok(out)
}

fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected on or off, got {v:?}"))),
    }
}

fn switch(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn fmt_background(b: &Background) -> String {
    match b {
        Background::Flat(c) => format!("flat {}", fmt_vec(c)),
        Background::Checker { .. } if *b == Background::default() => "checker".into(),
        Background::Checker { .. } => unreachable!("only the default checkerboard is configurable"),
    }
}

fn parse_background(v: &str) -> Result<Background> {
    if v == "checker" {
        return Ok(Background::default());
    }
    if let Some(rest) = v.strip_prefix("flat ") {
        return Ok(Background::Flat(parse_triple("background", rest.trim())?));
    }
    Err(Error::InvalidConfig(format!("background: expected `checker` or `flat r,g,b`, got {v:?}")))
}

impl RunConfig {
    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            c_raw: RAW_CHANNELS,
            c_v: self.c_v,
            hidden: self.hidden,
            views: self.scene.views,
        }
    }

    pub fn hoa_config(&self) -> HoaConfig {
        HoaConfig {
            dims: self.scene.grid.dims,
            k: self.k,
            c_v: self.c_v,
            channels: self.channels,
            hsa: self.hsa,
            multiscale: self.multiscale,
            source: self.opacity_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.scene.validate()?;
        self.hoa_config().validate()?;
        if self.warmup > self.steps {
            return bad(format!("warmup {} exceeds steps {}", self.warmup, self.steps));
        }
        if self.train_scenes == 0 {
            return bad("train_scenes must be at least 1".into());
        }
        if self.c_v == 0 || self.hidden == 0 || self.channels == 0 {
            return bad("feature widths must be positive".into());
        }
        if self.scene.width < 11 || self.scene.height < 11 {
            return bad("images must be at least 11x11 for SSIM".into());
        }
        if let ViewSelect::Index(i) = self.view {
            if i >= self.scene.views {
                return bad(format!("view index {i} out of range for {} views", self.scene.views));
            }
        }
        if self.hoa {
            let missing = match self.opacity_source {
                OpacitySource::Gaussian => !self.fields.gaussian(),
                OpacitySource::Nerf => !self.fields.nerf(),
                OpacitySource::Fused => false,
            };
            if missing {
                return bad(format!("opacity source {} needs that field enabled", self.opacity_source));
            }
        }
        if self.metrics_every == 0 {
            return bad("metrics_every must be positive".into());
        }
        let weights = [
            self.loss.mse,
            self.loss.ssim,
            self.loss.l1,
            self.lambda_bce,
            self.lambda_dice,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be nonnegative".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("optimizer settings out of range".into());
        }
        Ok(())
    }

    /// Canonical text form; every key, one per line, fixed order.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let lines = [
            ("seed", self.seed.to_string()),
            ("scene_seed", self.scene_seed.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("eval_scenes", self.eval_scenes.to_string()),
            ("boxes_min", s.box_count.0.to_string()),
            ("boxes_max", s.box_count.1.to_string()),
            ("size_min", fmt_vec(&s.size_min)),
            ("size_max", fmt_vec(&s.size_max)),
            ("position_range", format!("{:?}", s.position_range)),
            ("views", s.views.to_string()),
            ("width", s.width.to_string()),
            ("height", s.height.to_string()),
            ("focal", format!("{:?}", s.focal)),
            ("ring_radius", format!("{:?}", s.ring_radius)),
            ("ring_height", format!("{:?}", s.ring_height)),
            ("target", fmt_vec(s.target.as_slice())),
            ("background", fmt_background(&s.background)),
            ("noise_level", format!("{:?}", s.noise_level)),
            ("grid_dims", s.grid.dims.map(|d| d.to_string()).join(",")),
            ("voxel_size", format!("{:?}", s.grid.voxel_size)),
            ("grid_origin", fmt_vec(s.grid.origin.as_slice())),
            ("c_v", self.c_v.to_string()),
            ("hidden", self.hidden.to_string()),
            ("k", self.k.to_string()),
            ("channels", self.channels.to_string()),
            ("lambda_mse", format!("{:?}", self.loss.mse)),
            ("lambda_ssim", format!("{:?}", self.loss.ssim)),
            ("lambda_l1", format!("{:?}", self.loss.l1)),
            ("lambda_bce", format!("{:?}", self.lambda_bce)),
            ("lambda_dice", format!("{:?}", self.lambda_dice)),
            ("lr", format!("{:?}", self.lr)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("adam_eps", format!("{:?}", self.adam_eps)),
            ("warmup", self.warmup.to_string()),
            ("steps", self.steps.to_string()),
            ("fields", self.fields.to_string()),
            ("goal", self.goal.to_string()),
            ("hoa", switch(self.hoa).into()),
            ("hsa", switch(self.hsa).into()),
            ("multiscale", switch(self.multiscale).into()),
            ("opacity_source", self.opacity_source.to_string()),
            ("depth_render", switch(self.depth_render).into()),
            ("footprint", self.footprint.to_string()),
            ("view", self.view.to_string()),
            ("metrics_every", self.metrics_every.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "scene_seed" => self.scene_seed = parse_num(key, v)?,
            "train_scenes" => self.train_scenes = parse_num(key, v)?,
            "eval_scenes" => self.eval_scenes = parse_num(key, v)?,
            "boxes_min" => s.box_count.0 = parse_num(key, v)?,
            "boxes_max" => s.box_count.1 = parse_num(key, v)?,
            "size_min" => s.size_min = parse_triple(key, v)?,
            "size_max" => s.size_max = parse_triple(key, v)?,
            "position_range" => s.position_range = parse_num(key, v)?,
            "views" => s.views = parse_num(key, v)?,
            "width" => s.width = parse_num(key, v)?,
            "height" => s.height = parse_num(key, v)?,
            "focal" => s.focal = parse_num(key, v)?,
            "ring_radius" => s.ring_radius = parse_num(key, v)?,
            "ring_height" => s.ring_height = parse_num(key, v)?,
            "target" => s.target = Vec3::from(parse_triple::<f64>(key, v)?),
            "background" => s.background = parse_background(v)?,
            "noise_level" => s.noise_level = parse_num(key, v)?,
            "grid_dims" => s.grid = VoxelGridSpec::new(s.grid.origin, s.grid.voxel_size, parse_triple(key, v)?)?,
            "voxel_size" => s.grid = VoxelGridSpec::new(s.grid.origin, parse_num(key, v)?, s.grid.dims)?,
            "grid_origin" => {
                s.grid = VoxelGridSpec::new(Vec3::from(parse_triple::<f64>(key, v)?), s.grid.voxel_size, s.grid.dims)?
            }
            "c_v" => self.c_v = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "channels" => self.channels = parse_num(key, v)?,
            "lambda_mse" => self.loss.mse = parse_num(key, v)?,
            "lambda_ssim" => self.loss.ssim = parse_num(key, v)?,
            "lambda_l1" => self.loss.l1 = parse_num(key, v)?,
            "lambda_bce" => self.lambda_bce = parse_num(key, v)?,
            "lambda_dice" => self.lambda_dice = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "warmup" => self.warmup = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "fields" => self.fields = v.parse()?,
            "goal" => self.goal = v.parse()?,
            "hoa" => self.hoa = parse_switch(key, v)?,
            "hsa" => self.hsa = parse_switch(key, v)?,
            "multiscale" => self.multiscale = parse_switch(key, v)?,
            "opacity_source" => self.opacity_source = v.parse()?,
            "depth_render" => self.depth_render = parse_switch(key, v)?,
            "footprint" => self.footprint = v.parse()?,
            "view" => self.view = v.parse()?,
            "metrics_every" => self.metrics_every = parse_num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text over the defaults. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Hash of every setting except the step budget, so a run can be
    /// resumed with a longer budget.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("steps ="))
            .map(|l| format!("{l}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Scene settings for the `i`-th pool scene.
    pub fn scene_for(&self, seed: u64) -> SceneConfig {
        SceneConfig {
            seed,
            ..self.scene.clone()
        }
    }

    pub fn train_seeds(&self) -> Vec<u64> {
        (0..self.train_scenes as u64).map(|i| self.scene_seed + i).collect()
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval_scenes as u64).map(|i| self.scene_seed + HELD_OUT_OFFSET + i).collect()
    }
}

/// Held-out scene seeds start this far above the training seeds.
pub const HELD_OUT_OFFSET: u64 = 1_000_000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.fields = Fields::Nerf;
        cfg.goal = Goal::Object;
        cfg.hoa = false;
        cfg.view = ViewSelect::Index(2);
        cfg.scene.background = Background::Flat([0.1, 0.2, 0.3]);
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn comments_and_unknown_keys() {
        let cfg = RunConfig::parse("# header\nsteps = 30 # trailing\n\nwarmup = 5\n").unwrap();
        assert_eq!((cfg.steps, cfg.warmup), (30, 5));
        assert!(RunConfig::parse("stepz = 3").is_err());
        assert!(RunConfig::parse("steps").is_err());
        assert!(RunConfig::parse("hoa = maybe").is_err());
    }

    #[test]
    fn warmup_bounded_by_steps() {
        let cfg = RunConfig {
            steps: 10,
            warmup: 20,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
