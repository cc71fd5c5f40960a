//! Finite-difference checks over every differentiable operation in the
//! pipeline, from tape primitives up to the mask loss.

use ocrf_diff::{gradcheck, Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{decode_gaussians, decode_nerf, init_decoder, voxel_features, DecoderConfig, GaussianAttributes};
use crate::error::Result;
use crate::geometry::{voxel_centers, Camera, Vec3, VoxelGridSpec};
use crate::hoa::{
    apply_attention, bev_from_voxels, bev_mask_head, init_bev_head, init_hoa, mask_loss, multiscale_hsa, opacity_fusion,
    HoaConfig,
};
use crate::params::{Binder, ParamStore};
use crate::render::loss::{masked_l1_depth, masked_mse, masked_ssim_loss};
use crate::render::{fuse, splat_composite, splat_render, volume_render, Footprint, RayTable, RenderOutput, SourceViews, VolumeStats};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Scalar `Σ r ⊙ y` with fixed weights of magnitude [0.5, 1.5) and random
/// sign, which keeps the sum and its rounding noise small.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = (0..g.value(y).len())
        .map(|_| {
            let m = rng.gen_range(0.5..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let r = g.constant(&shape, weights)?;
    let p = g.mul(y, r)?;
    Ok(g.sum(p)?)
}

fn constant(g: &mut Graph, rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Var> {
    let n = shape.iter().product();
    Ok(g.constant(shape, uniform(rng, n, lo, hi))?)
}

struct Suite {
    checks: Vec<Check>,
    counter: u64,
    step: f64,
}

impl Suite {
    /// Checks `op` at one probe in `[lo, hi)`. The op gets a fresh rng with
    /// the same seed on every evaluation so its fixtures never change.
    fn check<F>(&mut self, name: &str, shape: &[usize], lo: f64, hi: f64, op: F) -> Result<()>
    where
        F: Fn(&mut Graph, Var, &mut ChaCha8Rng) -> Result<Var>,
    {
        self.counter += 1;
        let seed = self.counter;
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let probe = uniform(&mut rng, shape.iter().product(), lo, hi);
        let error = gradcheck(
            |g, x| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let y = op(g, x, &mut r)?;
                project(g, y, seed)
            },
            shape,
            &probe,
            self.step,
        )?;
        self.checks.push(Check {
            name: name.to_string(),
            error,
        });
        Ok(())
    }

    /// Checks `op` with the probe standing in for parameter `param` of `store`.
    fn check_param<F>(&mut self, name: &str, store: &ParamStore, param: &str, op: F) -> Result<()>
    where
        F: Fn(&mut Graph, &mut Binder, &mut ChaCha8Rng) -> Result<Var>,
    {
        let t = store.get(param)?;
        let (lo, hi) = bounds(&t.data);
        self.check(&format!("{name} [{param}]"), &t.shape.clone(), lo, hi, |g, x, r| {
            let mut b = Binder::new(store);
            b.bind(param, x);
            op(g, &mut b, r)
        })
    }
}

/// Probe range matching the scale of an initialized tensor.
fn bounds(data: &[f64]) -> (f64, f64) {
    let m = data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        (-0.5, 0.5)
    } else if data.iter().all(|v| *v > 0.0) {
        (0.5 * m, 1.5 * m)
    } else {
        (-m, m)
    }
}

fn primitives(s: &mut Suite) -> Result<()> {
    s.check("add", &[3, 4], -2.0, 2.0, |g, x, r| {
        let b = constant(g, r, &[3, 4], -1.0, 1.0)?;
        Ok(g.add(x, b)?)
    })?;
    s.check("sub", &[3, 4], -2.0, 2.0, |g, x, r| {
        let b = constant(g, r, &[3, 4], -1.0, 1.0)?;
        Ok(g.sub(b, x)?)
    })?;
    s.check("mul", &[3, 4], -2.0, 2.0, |g, x, r| {
        let b = constant(g, r, &[3, 4], -1.0, 1.0)?;
        Ok(g.mul(x, b)?)
    })?;
    s.check("div", &[5], 0.5, 2.0, |g, x, r| {
        let a = constant(g, r, &[5], -1.0, 1.0)?;
        let q = g.div(a, x)?;
        Ok(g.div(q, x)?)
    })?;
    s.check("scale", &[6], -1.0, 1.0, |g, x, _| Ok(g.scale(x, -2.5)?))?;
    s.check("add_scalar", &[6], -1.0, 1.0, |g, x, _| Ok(g.add_scalar(x, 0.3)?))?;
    s.check("mul_scalar_var", &[1], -1.0, 1.0, |g, x, r| {
        let t = constant(g, r, &[6], -1.0, 1.0)?;
        Ok(g.mul_scalar_var(t, x)?)
    })?;
    s.check("add_scalar_var", &[1], -1.0, 1.0, |g, x, r| {
        let t = constant(g, r, &[2, 3], -1.0, 1.0)?;
        let y = g.add_scalar_var(t, x)?;
        Ok(g.square(y)?)
    })?;
    s.check("matmul", &[4, 3], -1.0, 1.0, |g, x, r| {
        let b = constant(g, r, &[3, 5], -1.0, 1.0)?;
        let y = g.matmul(x, b)?;
        let xt = g.transpose(x)?;
        let z = g.matmul(xt, y)?;
        Ok(z)
    })?;
    s.check("affine", &[3, 2], -1.0, 1.0, |g, w, r| {
        let x = constant(g, r, &[6, 3], -1.0, 1.0)?;
        let b = constant(g, r, &[2], -1.0, 1.0)?;
        Ok(g.affine(x, w, b)?)
    })?;
    s.check("affine input", &[6, 3], -1.0, 1.0, |g, x, r| {
        let w = constant(g, r, &[3, 2], -1.0, 1.0)?;
        let b = constant(g, r, &[2], -1.0, 1.0)?;
        Ok(g.affine(x, w, b)?)
    })?;
    for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 2, 1)] {
        let tag = format!("conv2d {k}x{k} stride {stride}");
        s.check(&format!("{tag} input"), &[2, 6, 6], -1.0, 1.0, |g, x, r| {
            let w = constant(g, r, &[3, 2, k, k], -1.0, 1.0)?;
            let b = constant(g, r, &[3], -1.0, 1.0)?;
            Ok(g.conv2d(x, w, b, stride, pad)?)
        })?;
        s.check(&format!("{tag} weight"), &[3, 2, k, k], -1.0, 1.0, |g, w, r| {
            let x = constant(g, r, &[2, 6, 6], -1.0, 1.0)?;
            let b = constant(g, r, &[3], -1.0, 1.0)?;
            Ok(g.conv2d(x, w, b, stride, pad)?)
        })?;
    }
    s.check("conv_transpose2d input", &[2, 3, 3], -1.0, 1.0, |g, x, r| {
        let w = constant(g, r, &[2, 3, 3, 3], -1.0, 1.0)?;
        let b = constant(g, r, &[3], -1.0, 1.0)?;
        Ok(g.conv_transpose2d(x, w, b, 2, 1, 1)?)
    })?;
    s.check("conv_transpose2d weight", &[2, 3, 3, 3], -1.0, 1.0, |g, w, r| {
        let x = constant(g, r, &[2, 3, 3], -1.0, 1.0)?;
        let b = constant(g, r, &[3], -1.0, 1.0)?;
        Ok(g.conv_transpose2d(x, w, b, 2, 1, 1)?)
    })?;
    s.check("separable_filter_valid", &[7, 6, 2], -1.0, 1.0, |g, x, _| {
        Ok(g.separable_filter_valid(x, &[0.2, 0.5, 0.3])?)
    })?;
    s.check("sum", &[3, 2], -1.0, 1.0, |g, x, _| {
        let q = g.square(x)?;
        let t = g.sum(q)?;
        Ok(g.square(t)?)
    })?;
    s.check("mean", &[3, 2], -1.0, 1.0, |g, x, _| {
        let m = g.mean(x)?;
        Ok(g.square(m)?)
    })?;
    for axis in 0..3 {
        s.check(&format!("sum_axis {axis}"), &[2, 3, 4], -1.0, 1.0, |g, x, _| Ok(g.sum_axis(x, axis)?))?;
        s.check(&format!("max_axis {axis}"), &[2, 3, 4], -1.0, 1.0, |g, x, _| Ok(g.max_axis(x, axis)?))?;
        s.check(&format!("softmax {axis}"), &[2, 3, 4], -2.0, 2.0, |g, x, _| Ok(g.softmax(x, axis)?))?;
        s.check(&format!("l2_normalize {axis}"), &[2, 3, 4], -2.0, 2.0, |g, x, _| {
            Ok(g.l2_normalize(x, axis, 1e-12)?)
        })?;
    }
    s.check("reshape", &[2, 6], -1.0, 1.0, |g, x, _| {
        let y = g.reshape(x, &[3, 4])?;
        Ok(g.square(y)?)
    })?;
    s.check("transpose", &[2, 5], -1.0, 1.0, |g, x, r| {
        let t = g.transpose(x)?;
        let b = constant(g, r, &[2, 3], -1.0, 1.0)?;
        Ok(g.matmul(t, b)?)
    })?;
    s.check("concat", &[2, 3], -1.0, 1.0, |g, x, r| {
        let b = constant(g, r, &[2, 2], -1.0, 1.0)?;
        let c = g.concat(&[b, x, x], 1)?;
        Ok(g.square(c)?)
    })?;
    s.check("narrow", &[4, 3], -1.0, 1.0, |g, x, _| {
        let n = g.narrow(x, 0, 1, 2)?;
        Ok(g.square(n)?)
    })?;
    s.check("expand", &[3, 1, 2], -1.0, 1.0, |g, x, _| {
        let e = g.expand(x, 1, 4)?;
        Ok(g.square(e)?)
    })?;
    s.check("sigmoid", &[8], -4.0, 4.0, |g, x, _| Ok(g.sigmoid(x)?))?;
    s.check("softplus", &[8], -4.0, 4.0, |g, x, _| Ok(g.softplus(x)?))?;
    s.check("exp", &[8], -2.0, 2.0, |g, x, _| Ok(g.exp(x)?))?;
    s.check("ln", &[8], 0.2, 3.0, |g, x, _| Ok(g.ln(x)?))?;
    s.check("sqrt", &[8], 0.2, 3.0, |g, x, _| Ok(g.sqrt(x)?))?;
    s.check("neg", &[8], -2.0, 2.0, |g, x, _| {
        let n = g.neg(x)?;
        Ok(g.square(n)?)
    })?;
    s.check("square", &[8], -2.0, 2.0, |g, x, _| Ok(g.square(x)?))?;
    s.check("one_minus", &[8], -2.0, 2.0, |g, x, _| {
        let y = g.one_minus(x)?;
        Ok(g.square(y)?)
    })?;
    s.check("abs", &[8], 0.1, 2.0, |g, x, _| {
        let y = g.neg(x)?;
        let z = g.concat(&[x, y], 0)?;
        let a = g.abs(z)?;
        Ok(g.square(a)?)
    })?;
    s.check("relu", &[8], 0.1, 2.0, |g, x, _| {
        let y = g.neg(x)?;
        let z = g.concat(&[x, y], 0)?;
        let a = g.relu(z)?;
        Ok(g.square(a)?)
    })?;
    s.check("clamp", &[8], -0.45, 0.45, |g, x, _| {
        let wide = g.scale(x, 2.0)?;
        let c = g.clamp(wide, -1.0, 1.0)?;
        Ok(g.square(c)?)
    })?;
    Ok(())
}

fn decoder_fixture() -> (DecoderConfig, VoxelGridSpec, ParamStore, Vec<f64>) {
    let cfg = DecoderConfig {
        c_raw: 8,
        c_v: 4,
        hidden: 5,
        views: 3,
    };
    let spec = VoxelGridSpec::new(Vec3::new(-0.5, -0.5, 0.5), 0.5, [2, 2, 2]).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    init_decoder(&mut store, &cfg, &mut rng);
    let raw = uniform(&mut rng, spec.count() * cfg.c_raw, 0.0, 1.0);
    (cfg, spec, store, raw)
}

fn gaussian_outputs(g: &mut Graph, a: &GaussianAttributes) -> Result<Var> {
    Ok(g.concat(&[a.scale, a.rotation, a.opacity, a.color], 1)?)
}

fn decoders(s: &mut Suite) -> Result<()> {
    let (_, spec, store, raw) = decoder_fixture();
    let n = spec.count();
    for param in ["dec.proj.w", "dec.proj.b", "dec.S.w1", "dec.R.w1", "dec.R.b2", "dec.O.w2", "dec.C.b1"] {
        s.check_param("gaussian decoder", &store, param, |g, b, _| {
            let f = voxel_features(g, b, &raw, n)?;
            let a = decode_gaussians(g, b, f, &spec)?;
            gaussian_outputs(g, &a)
        })?;
    }
    for param in ["dec.proj.w", "dec.D.w1", "dec.D.b2", "dec.W.w2", "dec.W.b1"] {
        s.check_param("nerf decoder", &store, param, |g, b, _| {
            let f = voxel_features(g, b, &raw, n)?;
            let a = decode_nerf(g, b, f)?;
            Ok(g.concat(&[a.density, a.opacity, a.view_logits], 1)?)
        })?;
    }
    Ok(())
}

/// A 4×4 camera five meters south of the origin looking north.
pub fn probe_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(Vec3::new(0.0, -5.0, 0.0), Vec3::zeros(), 4.0, width, height).expect("valid camera")
}

fn render_terms(g: &mut Graph, out: &RenderOutput) -> Result<Var> {
    let img = project(g, out.image, 1)?;
    let depth = project(g, out.depth, 2)?;
    let d = g.scale(depth, 0.1)?;
    Ok(g.add(img, d)?)
}

fn splat_positions(rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..5)
        .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn renderers(s: &mut Suite) -> Result<()> {
    let cam = probe_camera(4, 4);
    let bg = [0.2, 0.3, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pos = splat_positions(&mut rng);
    let opacity = uniform(&mut rng, 5, 0.2, 0.9);
    let color = uniform(&mut rng, 15, 0.0, 1.0);
    let scale = uniform(&mut rng, 15, 0.6, 1.8);
    for footprint in [Footprint::Point, Footprint::Disk] {
        let tag = format!("splat {footprint:?}");
        s.check(&format!("{tag} opacity"), &[5], 0.2, 0.9, |g, x, _| {
            let c = g.constant(&[5, 3], color.clone())?;
            let sc = g.constant(&[5, 3], scale.clone())?;
            let out = splat_composite(g, &pos, x, c, Some(sc), &cam, footprint, bg)?;
            render_terms(g, &out)
        })?;
        s.check(&format!("{tag} color"), &[5, 3], 0.0, 1.0, |g, x, _| {
            let o = g.constant(&[5], opacity.clone())?;
            let sc = g.constant(&[5, 3], scale.clone())?;
            let out = splat_composite(g, &pos, o, x, Some(sc), &cam, footprint, bg)?;
            render_terms(g, &out)
        })?;
    }
    s.check("splat Disk scale", &[5, 3], 0.6, 1.8, |g, x, _| {
        let o = g.constant(&[5], opacity.clone())?;
        let c = g.constant(&[5, 3], color.clone())?;
        let out = splat_composite(g, &pos, o, c, Some(x), &cam, Footprint::Disk, bg)?;
        render_terms(g, &out)
    })?;

    // Full decoder into the splatter.
    let (_, spec, store, raw) = decoder_fixture();
    let n = spec.count();
    for footprint in [Footprint::Point, Footprint::Disk] {
        s.check_param(&format!("decoder + splat {footprint:?}"), &store, "dec.proj.w", |g, b, _| {
            let f = voxel_features(g, b, &raw, n)?;
            let a = decode_gaussians(g, b, f, &spec)?;
            let out = splat_render(g, &a, &cam, footprint)?;
            render_terms(g, &out)
        })?;
    }

    // Volume rendering over a 2×2×2 grid seen by the target and two sources.
    let target = probe_camera(4, 4);
    let left = Camera::look_at(Vec3::new(-4.0, -3.0, 1.0), Vec3::zeros(), 4.0, 4, 4)?;
    let right = Camera::look_at(Vec3::new(4.0, -3.0, -1.0), Vec3::zeros(), 4.0, 4, 4)?;
    let cams = [target.clone(), left, right];
    let images: Vec<Vec<f64>> = (0..3).map(|_| uniform(&mut rng, 48, 0.0, 1.0)).collect();
    let sources = SourceViews::build(&images, &cams, &voxel_centers(&spec))?;
    let table = RayTable::build(&target, &spec);
    let vop = uniform(&mut rng, n, 0.05, 0.95);
    let vlog = uniform(&mut rng, n * 3, -1.0, 1.0);
    for exclude in [None, Some(0)] {
        let tag = format!("volume exclude {exclude:?}");
        s.check(&format!("{tag} opacity"), &[n], 0.05, 0.95, |g, x, _| {
            let l = g.constant(&[n, 3], vlog.clone())?;
            let mut st = VolumeStats::default();
            let out = volume_render(g, x, l, &table, &sources, exclude, bg, &mut st)?;
            render_terms(g, &out)
        })?;
        s.check(&format!("{tag} view logits"), &[n, 3], -1.0, 1.0, |g, x, _| {
            let o = g.constant(&[n], vop.clone())?;
            let mut st = VolumeStats::default();
            let out = volume_render(g, o, x, &table, &sources, exclude, bg, &mut st)?;
            render_terms(g, &out)
        })?;
    }
    s.check_param("decoder + volume", &store, "dec.D.w1", |g, b, _| {
        let f = voxel_features(g, b, &raw, n)?;
        let a = decode_nerf(g, b, f)?;
        let mut st = VolumeStats::default();
        let out = volume_render(g, a.opacity, a.view_logits, &table, &sources, Some(0), bg, &mut st)?;
        render_terms(g, &out)
    })?;

    let outputs = |g: &mut Graph, r: &mut ChaCha8Rng| -> Result<(RenderOutput, RenderOutput)> {
        let a = RenderOutput {
            image: constant(g, r, &[4, 4, 3], 0.0, 1.0)?,
            depth: constant(g, r, &[4, 4], 0.0, 5.0)?,
        };
        let b = RenderOutput {
            image: constant(g, r, &[4, 4, 3], 0.0, 1.0)?,
            depth: constant(g, r, &[4, 4], 0.0, 5.0)?,
        };
        Ok((a, b))
    };
    s.check("fuse theta", &[1], -2.0, 2.0, |g, x, r| {
        let (a, b) = outputs(g, r)?;
        let f = fuse(g, &a, &b, x)?;
        render_terms(g, &f)
    })?;
    s.check("fuse image", &[4, 4, 3], 0.0, 1.0, |g, x, r| {
        let (mut a, b) = outputs(g, r)?;
        a.image = x;
        let theta = g.constant(&[1], vec![0.3])?;
        let f = fuse(g, &a, &b, theta)?;
        render_terms(g, &f)
    })?;
    Ok(())
}

fn losses(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (h, w) = (12, 12);
    let gt = uniform(&mut rng, h * w * 3, 0.0, 1.0);
    let mask: Vec<f64> = (0..h * w).map(|i| f64::from(u8::from((i / w) % 3 != 0 && i % w > 2))).collect();
    s.check("masked mse", &[h, w, 3], 0.0, 1.0, |g, x, _| masked_mse(g, &[x, x], &gt, &mask))?;
    s.check("masked ssim", &[h, w, 3], 0.0, 1.0, |g, x, _| masked_ssim_loss(g, &[x], &gt, &mask))?;
    let gt_depth = uniform(&mut rng, 20, 1.0, 4.0);
    let dmask: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i % 4 != 1))).collect();
    s.check("masked l1 depth", &[4, 5], 1.0, 4.0, |g, x, _| masked_l1_depth(g, &[x, x], &gt_depth, &dmask, 7.5))?;
    Ok(())
}

fn hoa_fixture(hsa: bool) -> (HoaConfig, ParamStore) {
    let cfg = HoaConfig {
        dims: [4, 4, 4],
        k: 2,
        c_v: 3,
        channels: 4,
        hsa,
        multiscale: true,
        ..HoaConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut store = ParamStore::new();
    init_bev_head(&mut store, &cfg, &mut rng);
    init_hoa(&mut store, &cfg, &mut rng);
    // Nudge the identity-initialized slice weights off their symmetric start.
    for (name, t) in store.iter_mut() {
        if name.contains("hsa") || name.ends_with(".bo") {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    (cfg, store)
}

fn hoa(s: &mut Suite) -> Result<()> {
    let (cfg, store) = hoa_fixture(true);
    let dims = cfg.dims;
    let n: usize = dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let o_gs = uniform(&mut rng, n, 0.05, 0.95);
    let o_nerf = uniform(&mut rng, n, 0.05, 0.95);
    for alpha in [0.3, 0.7] {
        let tag = format!("opacity fusion alpha {alpha}");
        s.check(&format!("{tag} gs"), &[n, 1], 0.05, 0.95, |g, x, _| {
            let mut b = Binder::new(&store);
            let nerf = g.constant(&[n, 1], o_nerf.clone())?;
            Ok(opacity_fusion(g, &mut b, x, nerf, alpha, dims)?.volume)
        })?;
        s.check(&format!("{tag} nerf"), &[n, 1], 0.05, 0.95, |g, x, _| {
            let mut b = Binder::new(&store);
            let gs = g.constant(&[n, 1], o_gs.clone())?;
            Ok(opacity_fusion(g, &mut b, gs, x, alpha, dims)?.volume)
        })?;
        for param in ["hoa.wq", "hoa.wk", "hoa.wv", "hoa.wo", "hoa.bo"] {
            s.check_param(&tag, &store, param, |g, b, _| {
                let gs = g.constant(&[n, 1], o_gs.clone())?;
                let nerf = g.constant(&[n, 1], o_nerf.clone())?;
                Ok(opacity_fusion(g, b, gs, nerf, alpha, dims)?.volume)
            })?;
        }
    }

    s.check("multiscale hsa volume", &dims, 0.05, 0.95, |g, x, _| {
        let mut b = Binder::new(&store);
        multiscale_hsa(g, &mut b, x, &cfg)
    })?;
    for param in ["hoa.p1.w", "hoa.p2.b", "hoa.up1.w", "hoa.up2.b", "hoa.hsa0.w", "hoa.hsa1.b", "hoa.hsa2.w"] {
        s.check_param("multiscale hsa", &store, param, |g, b, _| {
            let v = g.constant(&dims, o_gs.clone())?;
            multiscale_hsa(g, b, v, &cfg)
        })?;
    }
    let (plain_cfg, plain_store) = hoa_fixture(false);
    s.check_param("multiscale conv slices", &plain_store, "hoa.proj1.w", |g, b, _| {
        let v = g.constant(&dims, o_gs.clone())?;
        multiscale_hsa(g, b, v, &plain_cfg)
    })?;

    let features = uniform(&mut rng, n * cfg.c_v, -1.0, 1.0);
    let bev_gt: Vec<f64> = (0..16).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let head = |g: &mut Graph, b: &mut Binder, f: Var, maps: Var| -> Result<Var> {
        let bev = bev_from_voxels(g, b, f, dims)?;
        let bev = apply_attention(g, bev, maps)?;
        bev_mask_head(g, b, bev)
    };
    let maps = uniform(&mut rng, 2 * 16, 0.1, 0.9);
    s.check("mask head features", &[n, cfg.c_v], -1.0, 1.0, |g, x, _| {
        let mut b = Binder::new(&store);
        let m = g.constant(&[2, 4, 4], maps.clone())?;
        head(g, &mut b, x, m)
    })?;
    s.check("mask head attention maps", &[2, 4, 4], 0.1, 0.9, |g, x, _| {
        let mut b = Binder::new(&store);
        let f = g.constant(&[n, cfg.c_v], features.clone())?;
        head(g, &mut b, f, x)
    })?;
    for param in ["bev.reduce.w", "bev.reduce.b", "bev.head.w", "bev.head.b"] {
        s.check_param("mask head", &store, param, |g, b, _| {
            let f = g.constant(&[n, cfg.c_v], features.clone())?;
            let m = g.constant(&[2, 4, 4], maps.clone())?;
            let p = head(g, b, f, m)?;
            Ok(mask_loss(g, p, &bev_gt, 10.0, 10.0)?.total)
        })?;
    }
    s.check("mask loss", &[4, 4], 0.05, 0.95, |g, x, _| Ok(mask_loss(g, x, &bev_gt, 10.0, 10.0)?.total))?;

    s.check_param("end to end hoa", &store, "hoa.wq", |g, b, _| {
        let gs = g.constant(&[n, 1], o_gs.clone())?;
        let nerf = g.constant(&[n, 1], o_nerf.clone())?;
        let v = opacity_fusion(g, b, gs, nerf, 0.6, dims)?.volume;
        let m = multiscale_hsa(g, b, v, &cfg)?;
        let f = g.constant(&[n, cfg.c_v], features.clone())?;
        let p = head(g, b, f, m)?;
        Ok(mask_loss(g, p, &bev_gt, 10.0, 10.0)?.total)
    })?;
    Ok(())
}

/// Runs every check; each entry is an operation name and its maximum
/// relative error.
pub fn run() -> Result<Vec<Check>> {
    run_with_step(STEP)
}

/// [`run`] with a different finite-difference step.
pub fn run_with_step(step: f64) -> Result<Vec<Check>> {
    let mut s = Suite {
        checks: Vec::new(),
        counter: 0,
        step,
    };
    primitives(&mut s)?;
    decoders(&mut s)?;
    renderers(&mut s)?;
    losses(&mut s)?;
    hoa(&mut s)?;
    Ok(s.checks)
}
