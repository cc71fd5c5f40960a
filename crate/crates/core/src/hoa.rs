//! Height-aware opacity attention: cross-attention fusion of the two opacity
//! volumes, multi-scale height-slice attention maps, their channel-blocked
//! application to BEV features, and the BEV mask head and loss.
//!
//! Opacity volumes are `(X, Y, Z)` with Z fastest, so they double as
//! `(X·Y, Z)` token matrices without copying.

use ocrf_diff::{Graph, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore, Tensor};

pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1.0;
pub const PYRAMID_LEVELS: usize = 3;

/// Which opacity volume feeds the attention maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OpacitySource {
    #[default]
    Fused,
    Gaussian,
    Nerf,
}

/// Field supplying the cross-attention query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySource {
    Gaussian,
    Nerf,
}

/// Query comes from the NeRF opacity when `α ≤ β`, from the Gaussian one otherwise.
pub fn query_source(alpha: f64) -> QuerySource {
    if alpha <= 1.0 - alpha {
        QuerySource::Nerf
    } else {
        QuerySource::Gaussian
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoaConfig {
    pub dims: [usize; 3],
    pub k: usize,
    pub c_v: usize,
    /// BEV channels C.
    pub channels: usize,
    /// Max-pool height groups; when off, each level uses a 1×1 conv `Z → k`.
    pub hsa: bool,
    pub multiscale: bool,
    pub source: OpacitySource,
}

impl Default for HoaConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 16],
            k: 4,
            c_v: 16,
            channels: 16,
            hsa: true,
            multiscale: true,
            source: OpacitySource::Fused,
        }
    }
}

impl HoaConfig {
    pub fn validate(&self) -> Result<()> {
        let [x, y, z] = self.dims;
        if self.k == 0 || z % self.k != 0 {
            return Err(Error::InvalidConfig(format!("k = {} does not divide Z = {z}", self.k)));
        }
        if self.channels % self.k != 0 {
            return Err(Error::InvalidConfig(format!(
                "k = {} does not divide C = {}",
                self.k, self.channels
            )));
        }
        if self.multiscale && (x % 4 != 0 || y % 4 != 0) {
            return Err(Error::InvalidConfig(format!("multi-scale needs X, Y divisible by 4, got {x}x{y}")));
        }
        Ok(())
    }
}

/// HOA-only parameters (attention, height slicing, pyramid).
pub fn init_hoa<R: Rng>(store: &mut ParamStore, cfg: &HoaConfig, rng: &mut R) {
    let (z, k) = (cfg.dims[2], cfg.k);
    for name in ["hoa.wq", "hoa.wk", "hoa.wv", "hoa.wo"] {
        store.insert(name, Tensor::uniform(rng, &[z, z], z));
    }
    store.insert("hoa.bo", Tensor::zeros(&[z]));
    for level in 1..PYRAMID_LEVELS {
        store.insert(format!("hoa.p{level}.w"), Tensor::uniform(rng, &[z, z, 3, 3], 9 * z));
        store.insert(format!("hoa.p{level}.b"), Tensor::uniform(rng, &[z], 9 * z));
        store.insert(format!("hoa.up{level}.w"), Tensor::uniform(rng, &[k, k, 3, 3], 9 * k));
        store.insert(format!("hoa.up{level}.b"), Tensor::uniform(rng, &[k], 9 * k));
    }
    for level in 0..PYRAMID_LEVELS {
        if cfg.hsa {
            store.insert(format!("hoa.hsa{level}.w"), Tensor::filled(&[k], 1.0));
            store.insert(format!("hoa.hsa{level}.b"), Tensor::zeros(&[k]));
        } else {
            store.insert(format!("hoa.proj{level}.w"), Tensor::uniform(rng, &[k, z, 1, 1], z));
            store.insert(format!("hoa.proj{level}.b"), Tensor::zeros(&[k]));
        }
    }
}

/// BEV reducer and mask head; trained with or without HOA.
pub fn init_bev_head<R: Rng>(store: &mut ParamStore, cfg: &HoaConfig, rng: &mut R) {
    let (c, cv) = (cfg.channels, cfg.c_v);
    store.insert("bev.reduce.w", Tensor::uniform(rng, &[c, cv, 1, 1], cv));
    store.insert("bev.reduce.b", Tensor::uniform(rng, &[c], cv));
    store.insert("bev.head.w", Tensor::uniform(rng, &[1, c, 1, 1], c));
    store.insert("bev.head.b", Tensor::zeros(&[1]));
}

pub fn is_hoa_param(name: &str) -> bool {
    name.starts_with("hoa.")
}

pub struct FusionOutput {
    /// `(X, Y, Z)` in (0, 1).
    pub volume: Var,
    /// `(X·Y, X·Y)` row-stochastic attention weights.
    pub attention: Var,
    pub query: QuerySource,
}

/// Single-head cross-attention over height-column tokens followed by an
/// output projection and a sigmoid.
pub fn opacity_fusion(
    g: &mut Graph,
    b: &mut Binder,
    o_gs: Var,
    o_nerf: Var,
    alpha: f64,
    dims: [usize; 3],
) -> Result<FusionOutput> {
    let [x, y, z] = dims;
    let n = x * y * z;
    if g.value(o_gs).len() != n || g.value(o_nerf).len() != n {
        return Err(Error::Shape(format!(
            "opacity fusion: volumes of {} and {} values for dims {dims:?}",
            g.value(o_gs).len(),
            g.value(o_nerf).len()
        )));
    }
    let gs = g.reshape(o_gs, &[x * y, z])?;
    let nerf = g.reshape(o_nerf, &[x * y, z])?;
    let query = query_source(alpha);
    let (q_in, kv_in) = match query {
        QuerySource::Nerf => (nerf, gs),
        QuerySource::Gaussian => (gs, nerf),
    };
    let wq = b.var(g, "hoa.wq")?;
    let wk = b.var(g, "hoa.wk")?;
    let wv = b.var(g, "hoa.wv")?;
    let wo = b.var(g, "hoa.wo")?;
    let bo = b.var(g, "hoa.bo")?;
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(kv_in, wk)?;
    let v = g.matmul(kv_in, wv)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (z as f64).sqrt())?;
    let attention = g.softmax(scores, 1)?;
    let mixed = g.matmul(attention, v)?;
    let out = g.affine(mixed, wo, bo)?;
    let out = g.sigmoid(out)?;
    Ok(FusionOutput {
        volume: g.reshape(out, &dims)?,
        attention,
        query,
    })
}

/// Height-slice attention at one pyramid level: `(Z, X, Y)` → `(k, X, Y)`
/// pre-activation maps, one max-pooled group of `Z/k` slices per map.
pub fn hsa(g: &mut Graph, b: &mut Binder, level_input: Var, k: usize, level: usize) -> Result<Var> {
    let (z, x, y) = match *g.shape(level_input) {
        [z, x, y] => (z, x, y),
        ref s => return Err(Error::Shape(format!("hsa expects (Z, X, Y), got {s:?}"))),
    };
    if k == 0 || z % k != 0 {
        return Err(Error::InvalidConfig(format!("k = {k} does not divide Z = {z}")));
    }
    let grouped = g.reshape(level_input, &[k, z / k, x * y])?;
    let pooled = g.max_axis(grouped, 1)?;
    let w = b.var(g, &format!("hoa.hsa{level}.w"))?;
    let bias = b.var(g, &format!("hoa.hsa{level}.b"))?;
    let w = g.reshape(w, &[k, 1])?;
    let w = g.expand(w, 1, x * y)?;
    let bias = g.reshape(bias, &[k, 1])?;
    let bias = g.expand(bias, 1, x * y)?;
    let scaled = g.mul(pooled, w)?;
    let out = g.add(scaled, bias)?;
    Ok(g.reshape(out, &[k, x, y])?)
}

fn level_maps(g: &mut Graph, b: &mut Binder, p: Var, cfg: &HoaConfig, level: usize) -> Result<Var> {
    if cfg.hsa {
        hsa(g, b, p, cfg.k, level)
    } else {
        let w = b.var(g, &format!("hoa.proj{level}.w"))?;
        let bias = b.var(g, &format!("hoa.proj{level}.b"))?;
        Ok(g.conv2d(p, w, bias, 1, 0)?)
    }
}

/// `(X, Y, Z)` volume → `(Z, X, Y)` channel stack.
pub fn height_channels(g: &mut Graph, volume: Var) -> Result<Var> {
    let (x, y, z) = match *g.shape(volume) {
        [x, y, z] => (x, y, z),
        ref s => return Err(Error::Shape(format!("expected an (X, Y, Z) volume, got {s:?}"))),
    };
    let tokens = g.reshape(volume, &[x * y, z])?;
    let t = g.transpose(tokens)?;
    Ok(g.reshape(t, &[z, x, y])?)
}

/// Attention maps `(k, X, Y)` in (0, 1) from an `(X, Y, Z)` opacity volume.
pub fn multiscale_hsa(g: &mut Graph, b: &mut Binder, volume: Var, cfg: &HoaConfig) -> Result<Var> {
    cfg.validate()?;
    if g.shape(volume) != cfg.dims {
        return Err(Error::Shape(format!("volume {:?} vs grid {:?}", g.shape(volume), cfg.dims)));
    }
    let p0 = height_channels(g, volume)?;
    let m0 = level_maps(g, b, p0, cfg, 0)?;
    if !cfg.multiscale {
        return Ok(g.sigmoid(m0)?);
    }
    let mut levels = vec![p0];
    for level in 1..PYRAMID_LEVELS {
        let w = b.var(g, &format!("hoa.p{level}.w"))?;
        let bias = b.var(g, &format!("hoa.p{level}.b"))?;
        let p = g.conv2d(levels[level - 1], w, bias, 2, 1)?;
        levels.push(p);
    }
    let mut maps = vec![m0];
    for (level, p) in levels.iter().enumerate().skip(1) {
        maps.push(level_maps(g, b, *p, cfg, level)?);
    }
    let mut acc = maps[PYRAMID_LEVELS - 1];
    for level in (1..PYRAMID_LEVELS).rev() {
        let w = b.var(g, &format!("hoa.up{level}.w"))?;
        let bias = b.var(g, &format!("hoa.up{level}.b"))?;
        let up = g.conv_transpose2d(acc, w, bias, 2, 1, 1)?;
        acc = g.add(up, maps[level - 1])?;
    }
    Ok(g.sigmoid(acc)?)
}

/// Sum over height then a 1×1 conv `C_v → C`: `(N, C_v)` features → `(C, X, Y)`.
pub fn bev_from_voxels(g: &mut Graph, b: &mut Binder, features: Var, dims: [usize; 3]) -> Result<Var> {
    let [x, y, z] = dims;
    let cv = match *g.shape(features) {
        [n, cv] if n == x * y * z => cv,
        ref s => return Err(Error::Shape(format!("features {s:?} for grid {dims:?}"))),
    };
    let cols = g.reshape(features, &[x * y, z, cv])?;
    let summed = g.sum_axis(cols, 1)?;
    let t = g.transpose(summed)?;
    let planes = g.reshape(t, &[cv, x, y])?;
    let w = b.var(g, "bev.reduce.w")?;
    let bias = b.var(g, "bev.reduce.b")?;
    Ok(g.conv2d(planes, w, bias, 1, 0)?)
}

/// Multiplies channel block `i` (of `C/k` contiguous channels) by map `i`.
pub fn apply_attention(g: &mut Graph, bev: Var, maps: Var) -> Result<Var> {
    let (c, x, y) = match *g.shape(bev) {
        [c, x, y] => (c, x, y),
        ref s => return Err(Error::Shape(format!("BEV feature must be (C, X, Y), got {s:?}"))),
    };
    let k = match *g.shape(maps) {
        [k, mx, my] if mx == x && my == y => k,
        ref s => return Err(Error::Shape(format!("maps {s:?} vs BEV ({c}, {x}, {y})"))),
    };
    if k == 0 || c % k != 0 {
        return Err(Error::InvalidConfig(format!("k = {k} does not divide C = {c}")));
    }
    let blocks = g.reshape(bev, &[k, c / k, x * y])?;
    let m = g.reshape(maps, &[k, 1, x * y])?;
    let m = g.expand(m, 1, c / k)?;
    let out = g.mul(blocks, m)?;
    Ok(g.reshape(out, &[c, x, y])?)
}

/// 1×1 conv to one channel and a sigmoid: `(C, X, Y)` → `(X, Y)` probabilities.
pub fn bev_mask_head(g: &mut Graph, b: &mut Binder, bev: Var) -> Result<Var> {
    let (x, y) = match *g.shape(bev) {
        [_, x, y] => (x, y),
        ref s => return Err(Error::Shape(format!("BEV feature must be (C, X, Y), got {s:?}"))),
    };
    let w = b.var(g, "bev.head.w")?;
    let bias = b.var(g, "bev.head.b")?;
    let logits = g.conv2d(bev, w, bias, 1, 0)?;
    let p = g.sigmoid(logits)?;
    Ok(g.reshape(p, &[x, y])?)
}

#[derive(Debug, Clone, Copy)]
pub struct MaskLoss {
    pub total: Var,
    pub bce: Var,
    pub dice: Var,
}

/// `λ_bce·BCE + λ_dice·(1 − (2Σpg + ε)/(Σp + Σg + ε))`, BCE on clamped probabilities.
pub fn mask_loss(g: &mut Graph, pred: Var, gt: &[f64], lambda_bce: f64, lambda_dice: f64) -> Result<MaskLoss> {
    let shape = g.shape(pred).to_vec();
    if g.value(pred).len() != gt.len() {
        return Err(Error::Shape(format!("mask loss: {:?} prediction vs {} targets", shape, gt.len())));
    }
    let target = g.constant(&shape, gt.to_vec())?;
    let inv_target = g.constant(&shape, gt.iter().map(|t| 1.0 - t).collect())?;
    let p = g.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let lp = g.ln(p)?;
    let q = g.one_minus(p)?;
    let lq = g.ln(q)?;
    let a = g.mul(lp, target)?;
    let bq = g.mul(lq, inv_target)?;
    let ll = g.add(a, bq)?;
    let ll = g.mean(ll)?;
    let bce = g.neg(ll)?;

    let inter = g.mul(pred, target)?;
    let inter = g.sum(inter)?;
    let num = g.scale(inter, 2.0)?;
    let num = g.add_scalar(num, DICE_EPS)?;
    let sp = g.sum(pred)?;
    let den = g.add_scalar(sp, gt.iter().sum::<f64>() + DICE_EPS)?;
    let ratio = g.div(num, den)?;
    let dice = g.one_minus(ratio)?;

    let wb = g.scale(bce, lambda_bce)?;
    let wd = g.scale(dice, lambda_dice)?;
    let total = g.add(wb, wd)?;
    Ok(MaskLoss { total, bce, dice })
}

/// IoU of `pred ≥ 0.5` against a binary target; 1 when both are empty.
pub fn mask_iou(pred: &[f64], gt: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, t) in pred.iter().zip(gt) {
        let (a, b) = (*p >= 0.5, *t >= 0.5);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(cfg: &HoaConfig) -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        init_hoa(&mut s, cfg, &mut rng);
        init_bev_head(&mut s, cfg, &mut rng);
        s
    }

    #[test]
    fn query_branch_rule() {
        assert_eq!(query_source(0.4), QuerySource::Nerf);
        assert_eq!(query_source(0.5), QuerySource::Nerf);
        assert_eq!(query_source(0.7), QuerySource::Gaussian);
    }

    #[test]
    fn single_token_attention_returns_value_column() {
        let cfg = HoaConfig {
            dims: [1, 1, 4],
            k: 1,
            channels: 1,
            multiscale: false,
            ..HoaConfig::default()
        };
        let mut s = store(&cfg);
        for name in ["hoa.wq", "hoa.wk", "hoa.wv", "hoa.wo"] {
            let t = s.get_mut(name).unwrap();
            t.data = vec![0.0; 16];
            for i in 0..4 {
                t.data[i * 4 + i] = 1.0;
            }
        }
        let mut g = Graph::new();
        let mut b = Binder::new(&s);
        let gs = g.constant(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let nerf = g.constant(&[4], vec![0.9, 0.8, 0.7, 0.6]).unwrap();
        let out = opacity_fusion(&mut g, &mut b, gs, nerf, 0.2, cfg.dims).unwrap();
        assert_eq!(out.query, QuerySource::Nerf);
        for (v, expect) in g.value(out.volume).iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((v - ocrf_diff::sigmoid(expect)).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_volume_hsa() {
        let cfg = HoaConfig::default();
        let s = store(&cfg);
        let mut g = Graph::new();
        let mut b = Binder::new(&s);
        let p = g.constant(&[16, 8, 8], vec![0.5; 16 * 64]).unwrap();
        let m = hsa(&mut g, &mut b, p, 4, 0).unwrap();
        assert_eq!(g.shape(m), &[4, 8, 8]);
        assert!(g.value(m).iter().all(|v| *v == 0.5));
        assert!(hsa(&mut g, &mut b, p, 3, 0).is_err());
    }

    #[test]
    fn mask_loss_closed_forms() {
        let mut g = Graph::new();
        let gt = vec![1.0, 0.0, 0.0, 1.0];
        let p = g.constant(&[2, 2], gt.clone()).unwrap();
        let l = mask_loss(&mut g, p, &gt, 10.0, 10.0).unwrap();
        assert_eq!(g.item(l.dice), 0.0);
        assert!(g.item(l.bce) < 1e-6);
        let half = g.constant(&[2, 2], vec![0.5; 4]).unwrap();
        let l = mask_loss(&mut g, half, &[0.0; 4], 1.0, 1.0).unwrap();
        assert!((g.item(l.bce) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.item(l.dice) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn iou_conventions() {
        assert_eq!(mask_iou(&[0.1, 0.2], &[0.0, 0.0]), 1.0);
        assert_eq!(mask_iou(&[0.9, 0.2], &[1.0, 0.0]), 1.0);
        assert_eq!(mask_iou(&[0.9, 0.7], &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn zero_head_is_half() {
        let cfg = HoaConfig::default();
        let mut s = store(&cfg);
        s.get_mut("bev.head.w").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let mut b = Binder::new(&s);
        let bev = g.constant(&[16, 4, 4], vec![0.3; 256]).unwrap();
        let p = bev_mask_head(&mut g, &mut b, bev).unwrap();
        assert!(g.value(p).iter().all(|v| *v == 0.5));
    }
}
