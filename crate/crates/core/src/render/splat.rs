//! Degenerate splatting: each Gaussian is a point (or a flat disk) composited
//! front to back per pixel.

use ocrf_diff::{Graph, Var};

use super::{split_output, RenderOutput};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Footprint {
    /// The single pixel containing the projected center.
    #[default]
    Point,
    /// A disk of radius `fx · mean(scale) / distance` pixels with a one-pixel linear edge.
    Disk,
}

/// Disk radii are capped so a degenerate scale cannot cover the whole image.
pub const MAX_DISK_RADIUS: f64 = 16.0;

#[derive(Debug, Clone, Copy)]
struct Entry {
    gauss: usize,
    dist: f64,
    weight: f64,
    /// d(weight)/d(mean scale); zero outside the linear edge.
    dweight_dscale: f64,
}

/// Per-pixel contributor lists, sorted by distance then index.
struct Layout {
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

fn build_layout(positions: &[Vec3], scale: Option<&[f64]>, cam: &Camera) -> Layout {
    let (w, h) = (cam.width, cam.height);
    let mut per_pixel: Vec<Vec<Entry>> = vec![Vec::new(); w * h];
    let center = cam.center();
    for (i, p) in positions.iter().enumerate() {
        let proj = cam.project(p);
        if proj.behind {
            continue;
        }
        let dist = (p - center).norm();
        match scale {
            None => {
                if let Some((x, y)) = cam.pixel_of(proj.u, proj.v) {
                    per_pixel[y * w + x].push(Entry {
                        gauss: i,
                        dist,
                        weight: 1.0,
                        dweight_dscale: 0.0,
                    });
                }
            }
            Some(s) => {
                let mean = (s[3 * i] + s[3 * i + 1] + s[3 * i + 2]) / 3.0;
                let raw = cam.fx * mean / dist;
                let (r, dr) = if raw > MAX_DISK_RADIUS {
                    (MAX_DISK_RADIUS, 0.0)
                } else {
                    (raw, cam.fx / dist)
                };
                let reach = r + 0.5;
                let x0 = (proj.u - 0.5 - reach).floor().max(0.0) as i64;
                let x1 = ((proj.u - 0.5 + reach).ceil() as i64).min(w as i64 - 1);
                let y0 = (proj.v - 0.5 - reach).floor().max(0.0) as i64;
                let y1 = ((proj.v - 0.5 + reach).ceil() as i64).min(h as i64 - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let d = (x as f64 + 0.5 - proj.u).hypot(y as f64 + 0.5 - proj.v);
                        let edge = r - d + 0.5;
                        if edge <= 0.0 {
                            continue;
                        }
                        let (weight, slope) = if edge >= 1.0 { (1.0, 0.0) } else { (edge, dr) };
                        per_pixel[y as usize * w + x as usize].push(Entry {
                            gauss: i,
                            dist,
                            weight,
                            dweight_dscale: slope,
                        });
                    }
                }
            }
        }
    }
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    for mut list in per_pixel {
        list.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.gauss.cmp(&b.gauss)));
        entries.extend(list);
        offsets.push(entries.len());
    }
    Layout { offsets, entries }
}

/// Composites Gaussians at fixed `positions` with per-Gaussian opacity
/// (`N` values) and color (`N × 3`). `scale` (`N × 3`) is required in disk mode.
pub fn splat_composite(
    g: &mut Graph,
    positions: &[Vec3],
    opacity: Var,
    color: Var,
    scale: Option<Var>,
    cam: &Camera,
    footprint: Footprint,
    background: [f64; 3],
) -> Result<RenderOutput> {
    let n = positions.len();
    if g.value(opacity).len() != n || g.value(color).len() != 3 * n {
        return Err(Error::Shape(format!(
            "splat: {n} positions, {} opacities, {} color values",
            g.value(opacity).len(),
            g.value(color).len()
        )));
    }
    let scale = match footprint {
        Footprint::Point => None,
        Footprint::Disk => {
            let s = scale.ok_or_else(|| Error::Shape("disk footprint needs scales".into()))?;
            if g.value(s).len() != 3 * n {
                return Err(Error::Shape(format!("splat: {} scale values for {n} Gaussians", g.value(s).len())));
            }
            Some(s)
        }
    };
    let layout = build_layout(positions, scale.map(|s| g.value(s)), cam);
    let (w, h) = (cam.width, cam.height);
    let (ov, cv) = (g.value(opacity), g.value(color));
    let mut out = vec![0.0; w * h * 4];
    for p in 0..w * h {
        let mut t = 1.0;
        let px = &mut out[p * 4..p * 4 + 4];
        for e in &layout.entries[layout.offsets[p]..layout.offsets[p + 1]] {
            let a = e.weight * ov[e.gauss];
            for c in 0..3 {
                px[c] += t * a * cv[3 * e.gauss + c];
            }
            px[3] += t * a * e.dist;
            t *= 1.0 - a;
        }
        for c in 0..3 {
            px[c] += t * background[c];
        }
    }
    let mut inputs = vec![opacity, color];
    inputs.extend(scale);
    let raw = g.push("splat", &inputs, &[h, w, 4], out, move |ctx| {
        let (ov, cv, go) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
        let mut d_o = vec![0.0; ov.len()];
        let mut d_c = vec![0.0; cv.len()];
        let mut d_s = if ctx.inputs.len() > 2 { vec![0.0; ctx.inputs[2].len()] } else { Vec::new() };
        let mut trans = Vec::new();
        for p in 0..w * h {
            let entries = &layout.entries[layout.offsets[p]..layout.offsets[p + 1]];
            if entries.is_empty() {
                continue;
            }
            let gp = &go[p * 4..p * 4 + 4];
            trans.clear();
            let mut t = 1.0;
            for e in entries {
                trans.push(t);
                t *= 1.0 - e.weight * ov[e.gauss];
            }
            // Suffix value R_{i+1}: what the ray receives behind entry i, per unit transmittance.
            let mut rest = (0..3).map(|c| gp[c] * background[c]).sum::<f64>();
            for (e, &t) in entries.iter().zip(&trans).rev() {
                let a = e.weight * ov[e.gauss];
                let col = &cv[3 * e.gauss..3 * e.gauss + 3];
                let v = (0..3).map(|c| gp[c] * col[c]).sum::<f64>() + gp[3] * e.dist;
                let da = t * (v - rest);
                d_o[e.gauss] += da * e.weight;
                for c in 0..3 {
                    d_c[3 * e.gauss + c] += t * a * gp[c];
                }
                if !d_s.is_empty() && e.dweight_dscale != 0.0 {
                    let ds = da * ov[e.gauss] * e.dweight_dscale / 3.0;
                    for k in 0..3 {
                        d_s[3 * e.gauss + k] += ds;
                    }
                }
                rest = a * v + (1.0 - a) * rest;
            }
        }
        let mut grads = vec![ctx.needs(0).then_some(d_o), ctx.needs(1).then_some(d_c)];
        if ctx.inputs.len() > 2 {
            grads.push(ctx.needs(2).then_some(d_s));
        }
        grads
    })?;
    split_output(g, raw, h, w)
}
