//! Gaussian and NeRF attribute heads over voxel features.
//!
//! Features are held voxel-major, `(N, C_v)` with rows in grid index order.
//! Each head is `affine → relu → affine` with its own weights:
//! Gaussian heads S, R, O, C and NeRF heads D (density) and W (view logits).

use ocrf_diff::{Graph, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{voxel_centers, Vec3, VoxelGridSpec};
use crate::params::{Binder, ParamStore, Tensor};

/// Added to the real quaternion component before normalizing, so an all-zero
/// rotation output still normalizes to a unit quaternion.
pub const ROTATION_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub c_raw: usize,
    pub c_v: usize,
    pub hidden: usize,
    pub views: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            c_raw: crate::scene::RAW_CHANNELS,
            c_v: 16,
            hidden: 32,
            views: 6,
        }
    }
}

pub const GAUSSIAN_HEADS: [(&str, usize); 4] = [("S", 3), ("R", 4), ("O", 1), ("C", 3)];
pub const NERF_HEADS: [&str; 2] = ["D", "W"];

fn head_param_names(head: &str) -> [String; 4] {
    ["w1", "b1", "w2", "b2"].map(|p| format!("dec.{head}.{p}"))
}

fn init_head<R: Rng>(store: &mut ParamStore, rng: &mut R, head: &str, c_in: usize, hidden: usize, out: usize) {
    let [w1, b1, w2, b2] = head_param_names(head);
    store.insert(w1, Tensor::uniform(rng, &[c_in, hidden], c_in));
    store.insert(b1, Tensor::uniform(rng, &[hidden], c_in));
    store.insert(w2, Tensor::uniform(rng, &[hidden, out], hidden));
    store.insert(b2, Tensor::uniform(rng, &[out], hidden));
}

/// Adds the feature projection and every head to `store`.
pub fn init_decoder<R: Rng>(store: &mut ParamStore, cfg: &DecoderConfig, rng: &mut R) {
    store.insert("dec.proj.w", Tensor::uniform(rng, &[cfg.c_raw, cfg.c_v], cfg.c_raw));
    store.insert("dec.proj.b", Tensor::uniform(rng, &[cfg.c_v], cfg.c_raw));
    for (head, out) in GAUSSIAN_HEADS {
        init_head(store, rng, head, cfg.c_v, cfg.hidden, out);
    }
    init_head(store, rng, "D", cfg.c_v, cfg.hidden, 1);
    init_head(store, rng, "W", cfg.c_v, cfg.hidden, cfg.views);
}

pub fn is_nerf_param(name: &str) -> bool {
    NERF_HEADS.iter().any(|h| name.starts_with(&format!("dec.{h}.")))
}

pub fn is_gaussian_param(name: &str) -> bool {
    GAUSSIAN_HEADS.iter().any(|(h, _)| name.starts_with(&format!("dec.{h}.")))
}

/// Learnable 1×1×1 projection of the raw grid, `(N, C_raw) → (N, C_v)`.
pub fn voxel_features(g: &mut Graph, b: &mut Binder, raw_voxel_major: &[f64], n: usize) -> Result<Var> {
    if n == 0 || raw_voxel_major.len() % n != 0 {
        return Err(Error::Shape(format!("raw grid of {} values for {n} voxels", raw_voxel_major.len())));
    }
    let raw = g.constant(&[n, raw_voxel_major.len() / n], raw_voxel_major.to_vec())?;
    let w = b.var(g, "dec.proj.w")?;
    let bias = b.var(g, "dec.proj.b")?;
    Ok(g.affine(raw, w, bias)?)
}

fn head(g: &mut Graph, b: &mut Binder, f: Var, name: &str) -> Result<Var> {
    let [w1, b1, w2, b2] = head_param_names(name);
    let (w1, b1) = (b.var(g, &w1)?, b.var(g, &b1)?);
    let (w2, b2) = (b.var(g, &w2)?, b.var(g, &b2)?);
    let h = g.affine(f, w1, b1)?;
    let h = g.relu(h)?;
    Ok(g.affine(h, w2, b2)?)
}

pub struct GaussianAttributes {
    /// Fixed voxel centers.
    pub positions: Vec<Vec3>,
    /// `(N, 3)`, positive.
    pub scale: Var,
    /// `(N, 4)`, unit rows.
    pub rotation: Var,
    /// `(N, 1)` in (0, 1).
    pub opacity: Var,
    /// `(N, 3)` in (0, 1).
    pub color: Var,
}

pub struct NerfAttributes {
    /// `(N, 1)`, nonnegative.
    pub density: Var,
    /// `(N, V)` raw logits.
    pub view_logits: Var,
    /// `(N, 1)`, `1 − e^(−density)`.
    pub opacity: Var,
}

pub fn decode_gaussians(g: &mut Graph, b: &mut Binder, f: Var, spec: &VoxelGridSpec) -> Result<GaussianAttributes> {
    let n = g.shape(f)[0];
    if n != spec.count() {
        return Err(Error::Shape(format!("{n} feature rows for a grid of {} voxels", spec.count())));
    }
    let s = head(g, b, f, "S")?;
    let scale = g.softplus(s)?;
    let r = head(g, b, f, "R")?;
    let mut guard = vec![0.0; n * 4];
    guard.iter_mut().step_by(4).for_each(|v| *v = ROTATION_GUARD);
    let guard = g.constant(&[n, 4], guard)?;
    let r = g.add(r, guard)?;
    let rotation = g.l2_normalize(r, 1, 0.0)?;
    let o = head(g, b, f, "O")?;
    let opacity = g.sigmoid(o)?;
    let c = head(g, b, f, "C")?;
    let color = g.sigmoid(c)?;
    Ok(GaussianAttributes {
        positions: voxel_centers(spec),
        scale,
        rotation,
        opacity,
        color,
    })
}

pub fn decode_nerf(g: &mut Graph, b: &mut Binder, f: Var) -> Result<NerfAttributes> {
    let d = head(g, b, f, "D")?;
    let density = g.softplus(d)?;
    let view_logits = head(g, b, f, "W")?;
    let opacity = nerf_opacity(g, density)?;
    Ok(NerfAttributes {
        density,
        view_logits,
        opacity,
    })
}

pub fn nerf_opacity(g: &mut Graph, density: Var) -> Result<Var> {
    let neg = g.neg(density)?;
    let e = g.exp(neg)?;
    Ok(g.one_minus(e)?)
}

/// `(N, 1)` opacity reshaped to `(X, Y, Z)` in voxel index order.
pub fn opacity_volume(g: &mut Graph, opacity: Var, spec: &VoxelGridSpec) -> Result<Var> {
    Ok(g.reshape(opacity, &spec.dims)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> VoxelGridSpec {
        VoxelGridSpec::new(Vec3::zeros(), 1.0, [2, 3, 4]).unwrap()
    }

    fn zero_store(cfg: &DecoderConfig) -> ParamStore {
        let mut store = ParamStore::new();
        init_decoder(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(0));
        store.zeros_like()
    }

    #[test]
    fn zero_params_hit_activation_midpoints() {
        let cfg = DecoderConfig::default();
        let spec = small_spec();
        let store = zero_store(&cfg);
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let raw = vec![0.3; spec.count() * cfg.c_raw];
        let f = voxel_features(&mut g, &mut b, &raw, spec.count()).unwrap();
        let ga = decode_gaussians(&mut g, &mut b, f, &spec).unwrap();
        let na = decode_nerf(&mut g, &mut b, f).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!(g.value(ga.opacity).iter().all(|v| *v == 0.5));
        assert!(g.value(ga.color).iter().all(|v| *v == 0.5));
        assert!(g.value(ga.scale).iter().all(|v| (v - ln2).abs() < 1e-15));
        for row in g.value(ga.rotation).chunks(4) {
            assert_eq!(row, &[1.0, 0.0, 0.0, 0.0]);
        }
        assert!(g.value(na.opacity).iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn nerf_opacity_examples() {
        let mut g = Graph::new();
        let d = g.constant(&[2], vec![0.0, std::f64::consts::LN_2]).unwrap();
        let o = nerf_opacity(&mut g, d).unwrap();
        assert_eq!(g.value(o)[0], 0.0);
        assert!((g.value(o)[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn opacity_volume_indexing() {
        let spec = small_spec();
        let mut values = vec![0.5; spec.count()];
        values[spec.index(1, 2, 3)] = 0.9;
        let mut g = Graph::new();
        let o = g.constant(&[spec.count(), 1], values.clone()).unwrap();
        let vol = opacity_volume(&mut g, o, &spec).unwrap();
        assert_eq!(g.shape(vol), &[2, 3, 4]);
        assert_eq!(g.value(vol)[(1 * 3 + 2) * 4 + 3], 0.9);
        assert_eq!(g.value(vol), values.as_slice());
    }

    #[test]
    fn parameter_groups_partition_heads() {
        let mut store = ParamStore::new();
        init_decoder(&mut store, &DecoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let nerf = store.iter().filter(|(n, _)| is_nerf_param(n)).count();
        let gs = store.iter().filter(|(n, _)| is_gaussian_param(n)).count();
        assert_eq!((nerf, gs, store.len()), (8, 16, 26));
    }
}
