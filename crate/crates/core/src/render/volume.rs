//! Degenerate volume rendering: one sample per ray, taken at the traversed
//! voxel of highest opacity, colored by blending source-view samples.

use ocrf_diff::{Graph, Var};

use super::{split_output, RenderOutput};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3, VoxelGridSpec};

/// Rays whose best voxel has lower opacity than this show the background.
pub const OPACITY_FLOOR: f64 = 1e-3;
pub const FALLBACK_GRAY: f64 = 0.5;

/// Voxels traversed by every pixel ray of one camera, in ray order.
#[derive(Debug, Clone)]
pub struct RayTable {
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    voxels: Vec<usize>,
    /// Camera-to-voxel-center distance per entry.
    dists: Vec<f64>,
}

impl RayTable {
    /// Marches each pixel ray through the grid bounds in steps of half a voxel.
    pub fn build(cam: &Camera, spec: &VoxelGridSpec) -> Self {
        let step = spec.voxel_size / 2.0;
        let center = cam.center();
        let mut offsets = vec![0];
        let mut voxels = Vec::new();
        let mut dists = Vec::new();
        for y in 0..cam.height {
            for x in 0..cam.width {
                let (o, d) = cam.pixel_ray(x, y);
                if let Some((t0, t1)) = spec.ray_interval(&o, &d) {
                    let mut t = t0 + 0.5 * step;
                    let mut last = usize::MAX;
                    while t < t1 {
                        if let Some(v) = spec.locate(&(o + d * t)) {
                            if v != last {
                                voxels.push(v);
                                dists.push((spec.center_of(v) - center).norm());
                                last = v;
                            }
                        }
                        t += step;
                    }
                }
                offsets.push(voxels.len());
            }
        }
        Self {
            width: cam.width,
            height: cam.height,
            offsets,
            voxels,
            dists,
        }
    }

    pub fn pixel(&self, p: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[p]..self.offsets[p + 1];
        (&self.voxels[r.clone()], &self.dists[r])
    }
}

/// Colors of every voxel center sampled from each source view.
#[derive(Debug, Clone)]
pub struct SourceViews {
    pub views: usize,
    /// `N × V × 3`.
    samples: Vec<f64>,
    /// `N × V`: the center projects in front of the view and inside its image.
    valid: Vec<bool>,
}

/// Bilinear lookup at continuous image coordinates, pixel centers at half-integers,
/// clamped at the borders.
pub fn bilinear(image: &[f64], width: usize, height: usize, u: f64, v: f64) -> [f64; 3] {
    let fx = (u - 0.5).clamp(0.0, (width - 1) as f64);
    let fy = (v - 0.5).clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let px = |x: usize, y: usize, c: usize| image[(y * width + x) * 3 + c];
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = px(x0, y0, c) * (1.0 - ax) + px(x1, y0, c) * ax;
        let bottom = px(x0, y1, c) * (1.0 - ax) + px(x1, y1, c) * ax;
        *o = top * (1.0 - ay) + bottom * ay;
    }
    out
}

impl SourceViews {
    pub fn build(images: &[Vec<f64>], cameras: &[Camera], centers: &[Vec3]) -> Result<Self> {
        if images.len() != cameras.len() {
            return Err(Error::Shape(format!("{} images for {} cameras", images.len(), cameras.len())));
        }
        let views = cameras.len();
        let mut samples = vec![0.0; centers.len() * views * 3];
        let mut valid = vec![false; centers.len() * views];
        for (v, (img, cam)) in images.iter().zip(cameras).enumerate() {
            if img.len() != cam.num_pixels() * 3 {
                return Err(Error::Shape(format!("view {v}: {} values for a {}x{} image", img.len(), cam.width, cam.height)));
            }
            for (i, p) in centers.iter().enumerate() {
                let proj = cam.project(p);
                if proj.behind || cam.pixel_of(proj.u, proj.v).is_none() {
                    continue;
                }
                valid[i * views + v] = true;
                let c = bilinear(img, cam.width, cam.height, proj.u, proj.v);
                samples[(i * views + v) * 3..(i * views + v) * 3 + 3].copy_from_slice(&c);
            }
        }
        Ok(Self { views, samples, valid })
    }

    pub fn voxels(&self) -> usize {
        self.valid.len() / self.views.max(1)
    }

    pub fn sample(&self, voxel: usize, view: usize) -> Option<[f64; 3]> {
        let k = voxel * self.views + view;
        self.valid[k].then(|| [self.samples[3 * k], self.samples[3 * k + 1], self.samples[3 * k + 2]])
    }
}

/// Counters describing how pixels were resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VolumeStats {
    pub background_pixels: usize,
    /// Pixels whose sample was visible in no source view.
    pub fallback_pixels: usize,
}

struct Selection {
    voxel: usize,
    dist: f64,
    /// `(view, softmax weight, sampled color)` over usable views.
    blend: Vec<(usize, f64, [f64; 3])>,
    color: [f64; 3],
}

fn blend(logits: &[f64], voxel: usize, sources: &SourceViews, exclude: Option<usize>) -> (Vec<(usize, f64, [f64; 3])>, [f64; 3]) {
    let v = sources.views;
    let usable: Vec<(usize, [f64; 3])> = (0..v)
        .filter(|&k| Some(k) != exclude)
        .filter_map(|k| sources.sample(voxel, k).map(|c| (k, c)))
        .collect();
    if usable.is_empty() {
        return (Vec::new(), [FALLBACK_GRAY; 3]);
    }
    let row = &logits[voxel * v..voxel * v + v];
    let peak = usable.iter().map(|(k, _)| row[*k]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = usable.iter().map(|(k, _)| (row[*k] - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut color = [0.0; 3];
    let weights: Vec<(usize, f64, [f64; 3])> = usable
        .iter()
        .zip(exps)
        .map(|((k, c), e)| {
            let p = e / total;
            for ch in 0..3 {
                color[ch] += p * c[ch];
            }
            (*k, p, *c)
        })
        .collect();
    (weights, color)
}

/// Renders NeRF attributes for the camera behind `table`. `opacity` has `N`
/// values and `logits` is `(N, V)`; `exclude_view` removes one source view
/// (the target) from the color blend.
pub fn volume_render(
    g: &mut Graph,
    opacity: Var,
    logits: Var,
    table: &RayTable,
    sources: &SourceViews,
    exclude_view: Option<usize>,
    background: [f64; 3],
    stats: &mut VolumeStats,
) -> Result<RenderOutput> {
    let n = sources.voxels();
    if g.value(opacity).len() != n || g.shape(logits) != [n, sources.views] {
        return Err(Error::Shape(format!(
            "volume render: {} opacities and logits {:?} for {n} voxels x {} views",
            g.value(opacity).len(),
            g.shape(logits),
            sources.views
        )));
    }
    let (w, h) = (table.width, table.height);
    let (ov, lv) = (g.value(opacity), g.value(logits));
    let mut out = vec![0.0; w * h * 4];
    let mut picks: Vec<Option<Selection>> = Vec::with_capacity(w * h);
    for p in 0..w * h {
        let (voxels, dists) = table.pixel(p);
        let mut best: Option<(usize, f64)> = None;
        for (&v, &d) in voxels.iter().zip(dists) {
            if best.map_or(true, |(b, _)| ov[v] > ov[b]) {
                best = Some((v, d));
            }
        }
        let px = &mut out[p * 4..p * 4 + 4];
        match best {
            Some((voxel, dist)) if ov[voxel] >= OPACITY_FLOOR => {
                let (weights, color) = blend(lv, voxel, sources, exclude_view);
                if weights.is_empty() {
                    stats.fallback_pixels += 1;
                }
                let o = ov[voxel];
                for c in 0..3 {
                    px[c] = o * color[c] + (1.0 - o) * background[c];
                }
                px[3] = o * dist;
                picks.push(Some(Selection {
                    voxel,
                    dist,
                    blend: weights,
                    color,
                }));
            }
            _ => {
                stats.background_pixels += 1;
                px[..3].copy_from_slice(&background);
                picks.push(None);
            }
        }
    }
    let views = sources.views;
    let raw = g.push("volume", &[opacity, logits], &[h, w, 4], out, move |ctx| {
        let (ov, go) = (ctx.inputs[0], ctx.grad_out);
        let mut d_o = vec![0.0; ov.len()];
        let mut d_l = vec![0.0; ctx.inputs[1].len()];
        for (p, pick) in picks.iter().enumerate() {
            let Some(s) = pick else { continue };
            let gp = &go[p * 4..p * 4 + 4];
            let o = ov[s.voxel];
            d_o[s.voxel] += (0..3).map(|c| gp[c] * (s.color[c] - background[c])).sum::<f64>() + gp[3] * s.dist;
            let g_dot_mix: f64 = (0..3).map(|c| gp[c] * s.color[c]).sum();
            for &(k, prob, col) in &s.blend {
                let g_dot: f64 = (0..3).map(|c| gp[c] * col[c]).sum();
                d_l[s.voxel * views + k] += o * prob * (g_dot - g_dot_mix);
            }
        }
        vec![ctx.needs(0).then_some(d_o), ctx.needs(1).then_some(d_l)]
    })?;
    split_output(g, raw, h, w)
}
