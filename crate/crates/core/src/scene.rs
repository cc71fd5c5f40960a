//! Procedural box scenes and the analytic ray-cast reference renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{boxes_to_mask2d, boxes_to_maskbev, Box3D, Camera, Mask2D, MaskBEV, Vec3, VoxelGridSpec};

/// Raw grid channels: occupancy, RGB, then noise.
pub const RAW_CHANNELS: usize = 8;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Stream id for the noise channels, kept apart from placement draws so the
/// noise level cannot change the geometry.
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Flat([f64; 3]),
    /// Checkerboard on the ground plane `z = 0`; rays that miss the ground see `sky`.
    Checker {
        cell: f64,
        dark: [f64; 3],
        light: [f64; 3],
        sky: [f64; 3],
    },
}

impl Background {
    pub fn color(&self, origin: &Vec3, dir: &Vec3) -> [f64; 3] {
        match self {
            Background::Flat(c) => *c,
            Background::Checker { cell, dark, light, sky } => {
                if dir.z >= -1e-12 {
                    return *sky;
                }
                let t = -origin.z / dir.z;
                let p = origin + dir * t;
                let parity = ((p.x / cell).floor() as i64 + (p.y / cell).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    *dark
                } else {
                    *light
                }
            }
        }
    }
}

impl Default for Background {
    fn default() -> Self {
        Background::Checker {
            cell: 2.0,
            dark: [0.25, 0.25, 0.3],
            light: [0.6, 0.6, 0.55],
            sky: [0.45, 0.55, 0.7],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub box_count: (usize, usize),
    /// Per-axis lower and upper size bounds (length, width, height).
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
    /// Box centers are drawn from `[-r, r]²` in the ground plane.
    pub position_range: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub target: Vec3,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub grid: VoxelGridSpec,
    pub background: Background,
    pub noise_level: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            box_count: (2, 4),
            size_min: [1.5, 1.5, 1.0],
            size_max: [3.0, 3.0, 2.5],
            position_range: 4.0,
            ring_radius: 12.0,
            ring_height: 5.0,
            target: Vec3::new(0.0, 0.0, 1.0),
            views: 6,
            width: 64,
            height: 64,
            focal: 64.0,
            grid: VoxelGridSpec::new(Vec3::new(-8.0, -8.0, 0.0), 0.5, [32, 32, 16]).expect("default grid"),
            background: Background::default(),
            noise_level: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.box_count.0 > self.box_count.1 {
            return bad(format!("box count range {:?} is inverted", self.box_count));
        }
        for a in 0..3 {
            if !(self.size_min[a] > 0.0 && self.size_min[a] <= self.size_max[a]) {
                return bad(format!("size range {:?}..{:?} invalid", self.size_min, self.size_max));
            }
        }
        let lo = self.grid.origin;
        let hi = self.grid.max_corner();
        let reach = self.position_range + 0.5 * self.size_max[0].hypot(self.size_max[1]);
        if self.position_range < 0.0 || -reach < lo.x || -reach < lo.y || reach > hi.x || reach > hi.y {
            return bad(format!("box placement reach {reach} exceeds the perception range"));
        }
        if lo.z > 0.0 || self.size_max[2] > hi.z {
            return bad("box heights must fit inside the grid above z = 0".into());
        }
        if self.views == 0 || self.width == 0 || self.height == 0 {
            return bad("views and image extent must be positive".into());
        }
        if !(self.focal > 0.0) || !(self.ring_radius > 0.0) {
            return bad("focal length and ring radius must be positive".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad(format!("noise level must be nonnegative, got {}", self.noise_level));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        (0..self.views)
            .map(|v| {
                let phi = std::f64::consts::TAU * v as f64 / self.views as f64;
                let eye = Vec3::new(self.ring_radius * phi.cos(), self.ring_radius * phi.sin(), self.ring_height);
                Camera::look_at(eye, self.target, self.focal, self.width, self.height)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub boxes: Vec<Box3D>,
    pub background: Background,
    pub cameras: Vec<Camera>,
    pub grid: VoxelGridSpec,
    /// Per view, row-major `H × W × 3`.
    pub gt_rgb: Vec<Vec<f64>>,
    /// Per view, row-major `H × W`, 0 on background.
    pub gt_depth: Vec<Vec<f64>>,
    pub masks2d: Vec<Mask2D>,
    pub mask_bev: MaskBEV,
    /// `(C_raw, X, Y, Z)`, channel-major.
    pub raw_grid: Vec<f64>,
}

impl SyntheticScene {
    pub fn width(&self) -> usize {
        self.cameras[0].width
    }

    pub fn height(&self) -> usize {
        self.cameras[0].height
    }

    /// Raw grid transposed to voxel-major `(N, C_raw)`.
    pub fn raw_voxel_major(&self) -> Vec<f64> {
        let n = self.grid.count();
        let mut out = vec![0.0; n * RAW_CHANNELS];
        for c in 0..RAW_CHANNELS {
            for v in 0..n {
                out[v * RAW_CHANNELS + c] = self.raw_grid[c * n + v];
            }
        }
        out
    }
}

fn sample_boxes(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Box3D>> {
    let count = rng.gen_range(cfg.box_count.0..=cfg.box_count.1);
    let mut boxes: Vec<Box3D> = Vec::with_capacity(count);
    let mut attempts = 0;
    while boxes.len() < count {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::SceneGeneration {
                seed: cfg.seed,
                attempts,
            });
        }
        attempts += 1;
        let mut size = [0.0; 3];
        for a in 0..3 {
            size[a] = if cfg.size_min[a] == cfg.size_max[a] {
                cfg.size_min[a]
            } else {
                rng.gen_range(cfg.size_min[a]..cfg.size_max[a])
            };
        }
        let r = cfg.position_range;
        let (x, y) = if r > 0.0 {
            (rng.gen_range(-r..r), rng.gen_range(-r..r))
        } else {
            (0.0, 0.0)
        };
        let yaw = rng.gen_range(0.0..std::f64::consts::PI);
        let color = [rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95)];
        let candidate = Box3D::new(Vec3::new(x, y, size[2] / 2.0), size, yaw, color)?;
        let clear = boxes.iter().all(|b| {
            let d = (b.center.xy() - candidate.center.xy()).norm();
            d > b.footprint_radius() + candidate.footprint_radius()
        });
        if clear {
            boxes.push(candidate);
        }
    }
    Ok(boxes)
}

/// Builds the raw voxel grid: occupancy and color from `boxes`, noise from `seed`.
pub fn build_raw_grid(boxes: &[Box3D], grid: &VoxelGridSpec, seed: u64, noise_level: f64) -> Vec<f64> {
    let n = grid.count();
    let mut raw = vec![0.0; RAW_CHANNELS * n];
    for v in 0..n {
        let p = grid.center_of(v);
        if let Some(b) = boxes.iter().find(|b| b.contains(&p)) {
            raw[v] = 1.0;
            for c in 0..3 {
                raw[(1 + c) * n + v] = b.color[c];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    for x in raw[4 * n..].iter_mut() {
        *x = noise_level * rng.gen_range(-1.0..=1.0);
    }
    raw
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let boxes = sample_boxes(cfg, &mut rng)?;
    let cameras = cfg.cameras()?;
    let mut gt_rgb = Vec::with_capacity(cameras.len());
    let mut gt_depth = Vec::with_capacity(cameras.len());
    let mut masks2d = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        let (rgb, depth) = raycast_reference(&boxes, &cfg.background, cam);
        gt_rgb.push(rgb);
        gt_depth.push(depth);
        masks2d.push(boxes_to_mask2d(&boxes, cam));
    }
    Ok(SyntheticScene {
        seed: cfg.seed,
        mask_bev: boxes_to_maskbev(&boxes, &cfg.grid),
        raw_grid: build_raw_grid(&boxes, &cfg.grid, cfg.seed, cfg.noise_level),
        boxes,
        background: cfg.background.clone(),
        cameras,
        grid: cfg.grid.clone(),
        gt_rgb,
        gt_depth,
        masks2d,
    })
}

/// Analytic render: for each pixel-center ray the nearest box hit gives the
/// color and the Euclidean hit distance; misses show the background at depth 0.
pub fn raycast_reference(boxes: &[Box3D], background: &Background, cam: &Camera) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            for x in 0..w {
                let (o, d) = cam.pixel_ray(x, y);
                let mut best: Option<(f64, &Box3D)> = None;
                for b in boxes {
                    if let Some(t) = b.intersect(&o, &d) {
                        if best.map_or(true, |(bt, _)| t < bt) {
                            best = Some((t, b));
                        }
                    }
                }
                match best {
                    Some((t, b)) => {
                        rgb.extend_from_slice(&b.color);
                        depth.push(t);
                    }
                    None => {
                        rgb.extend_from_slice(&background.color(&o, &d));
                        depth.push(0.0);
                    }
                }
            }
            (rgb, depth)
        })
        .collect();
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (r, d) in rows {
        rgb.extend(r);
        depth.extend(d);
    }
    (rgb, depth)
}
