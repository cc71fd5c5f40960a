//! Masked MSE, SSIM and depth-L1 rendering losses.
//!
//! Masks are per pixel (`H × W` values in {0, 1}); color losses broadcast
//! them over every channel.

use ocrf_diff::{Graph, Var};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub ssim: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 10.0,
            ssim: 1.0,
            l1: 1.0,
        }
    }
}

pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn image_dims(g: &Graph, x: Var) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::Shape(format!("expected an (H, W, C) image, got {s:?}"))),
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: {got} values, expected {want}")));
    }
    Ok(())
}

fn channel_mask(mask: &[f64], c: usize) -> Vec<f64> {
    mask.iter().flat_map(|m| std::iter::repeat(*m).take(c)).collect()
}

/// Σ over predictions of mean((pred − gt)² ⊙ M) over `H·W·C`.
pub fn masked_mse(g: &mut Graph, preds: &[Var], gt: &[f64], mask: &[f64]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in preds {
        let (h, w, c) = image_dims(g, p)?;
        check_len("mse target", gt.len(), h * w * c)?;
        check_len("mse mask", mask.len(), h * w)?;
        let gt_v = g.constant(&[h, w, c], gt.to_vec())?;
        let m = g.constant(&[h, w, c], channel_mask(mask, c))?;
        let d = g.sub(p, gt_v)?;
        let d = g.mul(d, m)?;
        let sq = g.square(d)?;
        let term = g.mean(sq)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("no predictions".into()))
}

/// Mean SSIM over the valid-mode map of two `(H, W, C)` images, `H, W ≥ 11`.
pub fn ssim(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let (h, w, _) = image_dims(g, x)?;
    if g.shape(y) != g.shape(x) {
        return Err(Error::Shape(format!("ssim: {:?} vs {:?}", g.shape(x), g.shape(y))));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian_window();
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let mx = g.separable_filter_valid(x, &k)?;
    let my = g.separable_filter_valid(y, &k)?;
    let fxx = g.separable_filter_valid(xx, &k)?;
    let fyy = g.separable_filter_valid(yy, &k)?;
    let fxy = g.separable_filter_valid(xy, &k)?;
    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(fxx, mx2)?;
    let vy = g.sub(fyy, my2)?;
    let cxy = g.sub(fxy, mxy)?;
    let n1 = g.scale(mxy, 2.0)?;
    let n1 = g.add_scalar(n1, SSIM_C1)?;
    let n2 = g.scale(cxy, 2.0)?;
    let n2 = g.add_scalar(n2, SSIM_C2)?;
    let d1 = g.add(mx2, my2)?;
    let d1 = g.add_scalar(d1, SSIM_C1)?;
    let d2 = g.add(vx, vy)?;
    let d2 = g.add_scalar(d2, SSIM_C2)?;
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map)?)
}

/// Σ over predictions of `1 − SSIM(pred ⊙ M, gt ⊙ M)`.
pub fn masked_ssim_loss(g: &mut Graph, preds: &[Var], gt: &[f64], mask: &[f64]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &p in preds {
        let (h, w, c) = image_dims(g, p)?;
        check_len("ssim target", gt.len(), h * w * c)?;
        check_len("ssim mask", mask.len(), h * w)?;
        let cm = channel_mask(mask, c);
        let masked_gt: Vec<f64> = gt.iter().zip(&cm).map(|(a, m)| a * m).collect();
        let y = g.constant(&[h, w, c], masked_gt)?;
        let m = g.constant(&[h, w, c], cm)?;
        let x = g.mul(p, m)?;
        let s = ssim(g, x, y)?;
        let term = g.one_minus(s)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("no predictions".into()))
}

/// Σ over depth predictions of mean(|(D − D̂)/diag| ⊙ M) over `H·W`.
pub fn masked_l1_depth(g: &mut Graph, preds: &[Var], gt_depth: &[f64], mask: &[f64], diagonal: f64) -> Result<Var> {
    if !(diagonal > 0.0) {
        return Err(Error::Shape(format!("depth normalizer must be positive, got {diagonal}")));
    }
    let mut total: Option<Var> = None;
    for &p in preds {
        let shape = g.shape(p).to_vec();
        let n: usize = shape.iter().product();
        check_len("depth target", gt_depth.len(), n)?;
        check_len("depth mask", mask.len(), n)?;
        let gt_v = g.constant(&shape, gt_depth.to_vec())?;
        let m = g.constant(&shape, mask.to_vec())?;
        let d = g.sub(p, gt_v)?;
        let d = g.scale(d, 1.0 / diagonal)?;
        let d = g.mul(d, m)?;
        let a = g.abs(d)?;
        let term = g.mean(a)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Shape("no predictions".into()))
}

#[derive(Debug, Clone, Copy)]
pub struct RenderLoss {
    pub total: Var,
    pub mse: Var,
    pub ssim: Var,
    /// `None` when depth supervision is disabled.
    pub l1: Option<Var>,
}

#[allow(clippy::too_many_arguments)]
pub fn render_loss(
    g: &mut Graph,
    images: &[Var],
    depths: &[Var],
    gt_rgb: &[f64],
    gt_depth: &[f64],
    mask: &[f64],
    diagonal: f64,
    weights: &LossWeights,
    depth_loss: bool,
) -> Result<RenderLoss> {
    let mse = masked_mse(g, images, gt_rgb, mask)?;
    let ss = masked_ssim_loss(g, images, gt_rgb, mask)?;
    let a = g.scale(mse, weights.mse)?;
    let b = g.scale(ss, weights.ssim)?;
    let mut total = g.add(a, b)?;
    let l1 = if depth_loss {
        let l1 = masked_l1_depth(g, depths, gt_depth, mask, diagonal)?;
        let c = g.scale(l1, weights.l1)?;
        total = g.add(total, c)?;
        Some(l1)
    } else {
        None
    };
    Ok(RenderLoss { total, mse, ssim: ss, l1 })
}

/// SSIM of two plain `(H, W, 3)` buffers.
pub fn ssim_value(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(&[h, w, 3], a.to_vec())?;
    let y = g.constant(&[h, w, 3], b.to_vec())?;
    let s = ssim(&mut g, x, y)?;
    Ok(g.item(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_toy_case() {
        // 2×2 single channel, one masked pixel with error 0.5; the unmasked error is ignored.
        let mut g = Graph::new();
        let p = g.constant(&[2, 2, 1], vec![0.5, 0.9, 0.0, 0.0]).unwrap();
        let gt = vec![0.0; 4];
        let mask = [1.0, 0.0, 0.0, 0.0];
        let l = masked_mse(&mut g, &[p, p, p], &gt, &mask).unwrap();
        assert!((g.item(l) - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn l1_uniform_error() {
        let mut g = Graph::new();
        let (h, w, e, diag) = (4, 5, 0.3, 2.0);
        let gt = vec![1.0; h * w];
        let p = g.constant(&[h, w], vec![1.0 + e * diag; h * w]).unwrap();
        let mut mask = vec![0.0; h * w];
        mask[..7].iter_mut().for_each(|m| *m = 1.0);
        let l = masked_l1_depth(&mut g, &[p, p, p], &gt, &mask, diag).unwrap();
        assert!((g.item(l) - 3.0 * e * 7.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let w = LossWeights::default();
        let total = w.mse * 0.01 + w.ssim * 0.2 + w.l1 * 0.05;
        assert!((total - 0.35).abs() < 1e-15);
    }

    #[test]
    fn ssim_of_constants() {
        let (h, w) = (16, 16);
        let zeros = vec![0.0; h * w * 3];
        let ones = vec![1.0; h * w * 3];
        let s = ssim_value(&zeros, &ones, h, w).unwrap();
        // means 0 and 1, zero variances: C1 / (1 + C1)
        assert!((s - SSIM_C1 / (1.0 + SSIM_C1)).abs() < 1e-12);
        assert!((ssim_value(&ones, &ones, h, w).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k.len(), SSIM_WINDOW);
        assert!((k[0] - k[10]).abs() < 1e-18);
    }
}
