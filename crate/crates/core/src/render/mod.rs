//! Splat and volume renderers, their α/β fusion, and the masked losses.

pub mod loss;
pub mod splat;
pub mod volume;

use ocrf_diff::{Graph, Var};

use crate::decoder::GaussianAttributes;
use crate::error::{Error, Result};
use crate::geometry::Camera;

pub use loss::{masked_l1_depth, masked_mse, masked_ssim_loss, render_loss, ssim, LossWeights, RenderLoss};
pub use splat::{splat_composite, Footprint};
pub use volume::{volume_render, RayTable, SourceViews, VolumeStats};

pub const BLACK: [f64; 3] = [0.0; 3];

/// An image `(H, W, 3)` and depth map `(H, W)` on a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOutput {
    pub image: Var,
    pub depth: Var,
}

/// Splits a packed `(H, W, 4)` RGB+depth buffer.
pub(crate) fn split_output(g: &mut Graph, packed: Var, h: usize, w: usize) -> Result<RenderOutput> {
    let image = g.narrow(packed, 2, 0, 3)?;
    let depth = g.narrow(packed, 2, 3, 1)?;
    let depth = g.reshape(depth, &[h, w])?;
    Ok(RenderOutput { image, depth })
}

pub fn splat_render(g: &mut Graph, attrs: &GaussianAttributes, cam: &Camera, footprint: Footprint) -> Result<RenderOutput> {
    splat_composite(
        g,
        &attrs.positions,
        attrs.opacity,
        attrs.color,
        Some(attrs.scale),
        cam,
        footprint,
        BLACK,
    )
}

/// `α = sigmoid(θ)` and `β = 1 − α` as graph scalars.
pub fn fusion_weights(g: &mut Graph, theta: Var) -> Result<(Var, Var)> {
    let alpha = g.sigmoid(theta)?;
    let beta = g.one_minus(alpha)?;
    Ok((alpha, beta))
}

/// `α·a + β·b` for both image and depth.
pub fn fuse(g: &mut Graph, a: &RenderOutput, b: &RenderOutput, theta: Var) -> Result<RenderOutput> {
    for (x, y) in [(a.image, b.image), (a.depth, b.depth)] {
        if g.shape(x) != g.shape(y) {
            return Err(Error::Shape(format!("fuse: {:?} vs {:?}", g.shape(x), g.shape(y))));
        }
    }
    let (alpha, beta) = fusion_weights(g, theta)?;
    let mut mix = |x: Var, y: Var| -> Result<Var> {
        let ax = g.mul_scalar_var(x, alpha)?;
        let by = g.mul_scalar_var(y, beta)?;
        Ok(g.add(ax, by)?)
    };
    Ok(RenderOutput {
        image: mix(a.image, b.image)?,
        depth: mix(a.depth, b.depth)?,
    })
}
