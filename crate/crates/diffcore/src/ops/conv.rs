use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Visits every (input, weight, output) index triple of a correlation.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ConvGeom { cin, h, w, cout, kh, kw, oh, ow, stride, pad } = *self;
        for o in 0..cout {
            for c in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((o * cin + c) * kh + ky) * kw + kx;
                        for y in 0..oh {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for x in 0..ow {
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let iidx = (c * h + iy as usize) * w + ix as usize;
                                f(iidx, widx, (o * oh + y) * ow + x);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter form of the transposed convolution: input `(c, y, x)` feeds
    /// output `(o, y·s - p + ky, x·s - p + kx)` with weight `(c, o, ky, kx)`.
    #[inline]
    fn for_each_transposed(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ConvGeom { cin, h, w, cout, kh, kw, oh, ow, stride, pad } = *self;
        for c in 0..cin {
            for o in 0..cout {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((c * cout + o) * kh + ky) * kw + kx;
                        for y in 0..h {
                            let oy = (y * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for x in 0..w {
                                let ox = (x * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                f((c * h + y) * w + x, widx, (o * oh + oy as usize) * ow + ox as usize);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    fn conv_shapes(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Var,
        transposed: bool,
    ) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let bad = || DiffError::ShapeMismatch {
            op,
            lhs: sx.to_vec(),
            rhs: sw.to_vec(),
        };
        if sx.len() != 3 || sw.len() != 4 {
            return Err(bad());
        }
        let (cin, cout) = if transposed { (sw[0], sw[1]) } else { (sw[1], sw[0]) };
        if sx[0] != cin {
            return Err(bad());
        }
        if sb != [cout] {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: sw.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok((cin, sx[1], sx[2], cout, sw[2], sw[3]))
    }

    /// 2D cross-correlation of a `(C, H, W)` input with `(O, C, kh, kw)`
    /// weights, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd, cout, kh, kw) = self.conv_shapes("conv2d", x, w, b, false)?;
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(DiffError::InvalidShape {
                op: "conv2d",
                shape: self.shape(x).to_vec(),
                reason: format!("kernel {kh}x{kw} stride {stride} pad {pad} does not fit"),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom { cin, h, w: wd, cout, kh, kw, oh, ow, stride, pad };
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; cout * oh * ow];
        for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bv[o]);
        }
        geom.for_each(|i, k, o| out[o] += xv[i] * wv[k]);
        self.push("conv2d", &[x, w, b], &[cout, oh, ow], out, move |ctx| {
            let (xv, wv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
            let dx = ctx.needs(0).then(|| {
                let mut dx = vec![0.0; xv.len()];
                geom.for_each(|i, k, o| dx[i] += g[o] * wv[k]);
                dx
            });
            let dw = ctx.needs(1).then(|| {
                let mut dw = vec![0.0; wv.len()];
                geom.for_each(|i, k, o| dw[k] += g[o] * xv[i]);
                dw
            });
            let db = ctx.needs(2).then(|| g.chunks(oh * ow).map(|c| c.iter().sum()).collect());
            vec![dx, dw, db]
        })
    }

    /// Transposed 2D convolution with `(C, O, k, k)` weights; output extent
    /// `(H - 1)·stride - 2·pad + k + output_pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let (cin, h, wd, cout, kh, kw) = self.conv_shapes("conv_transpose2d", x, w, b, true)?;
        let oh_raw = (h - 1) * stride + kh + output_pad;
        let ow_raw = (wd - 1) * stride + kw + output_pad;
        if stride == 0 || oh_raw <= 2 * pad || ow_raw <= 2 * pad || output_pad >= stride.max(1) {
            return Err(DiffError::InvalidShape {
                op: "conv_transpose2d",
                shape: self.shape(x).to_vec(),
                reason: format!("stride {stride} pad {pad} output_pad {output_pad} invalid"),
            });
        }
        let oh = oh_raw - 2 * pad;
        let ow = ow_raw - 2 * pad;
        let geom = ConvGeom { cin, h, w: wd, cout, kh, kw, oh, ow, stride, pad };
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; cout * oh * ow];
        for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bv[o]);
        }
        geom.for_each_transposed(|i, k, o| out[o] += xv[i] * wv[k]);
        self.push("conv_transpose2d", &[x, w, b], &[cout, oh, ow], out, move |ctx| {
            let (xv, wv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
            let dx = ctx.needs(0).then(|| {
                let mut dx = vec![0.0; xv.len()];
                geom.for_each_transposed(|i, k, o| dx[i] += g[o] * wv[k]);
                dx
            });
            let dw = ctx.needs(1).then(|| {
                let mut dw = vec![0.0; wv.len()];
                geom.for_each_transposed(|i, k, o| dw[k] += g[o] * xv[i]);
                dw
            });
            let db = ctx.needs(2).then(|| g.chunks(oh * ow).map(|c| c.iter().sum()).collect());
            vec![dx, dw, db]
        })
    }

    /// Valid-mode separable filter over the two leading axes of an
    /// `(H, W, C)` tensor: output `(H - K + 1, W - K + 1, C)`.
    pub fn separable_filter_valid(&mut self, x: Var, kernel: &[f64]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let k = kernel.len();
        if shape.len() != 3 || k == 0 || shape[0] < k || shape[1] < k {
            return Err(DiffError::InvalidShape {
                op: "separable_filter_valid",
                shape,
                reason: format!("needs (H, W, C) with H, W >= {k}"),
            });
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let kern = kernel.to_vec();
        let out = filter_valid(self.value(x), &kern, h, w, c);
        self.push("separable_filter_valid", &[x], &[oh, ow, c], out, move |ctx| {
            vec![Some(filter_valid_adjoint(ctx.grad_out, &kern, h, w, c))]
        })
    }
}

fn filter_valid(x: &[f64], k: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let kl = k.len();
    let ow = w - kl + 1;
    let oh = h - kl + 1;
    let mut horiz = vec![0.0; h * ow * c];
    for y in 0..h {
        for xo in 0..ow {
            for (j, kv) in k.iter().enumerate() {
                let src = &x[(y * w + xo + j) * c..(y * w + xo + j + 1) * c];
                let dst = &mut horiz[(y * ow + xo) * c..(y * ow + xo + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    let mut out = vec![0.0; oh * ow * c];
    for yo in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let src = &horiz[(yo + i) * ow * c..(yo + i + 1) * ow * c];
            let dst = &mut out[yo * ow * c..(yo + 1) * ow * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

fn filter_valid_adjoint(g: &[f64], k: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let kl = k.len();
    let ow = w - kl + 1;
    let oh = h - kl + 1;
    let mut horiz = vec![0.0; h * ow * c];
    for yo in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let src = &g[yo * ow * c..(yo + 1) * ow * c];
            let dst = &mut horiz[(yo + i) * ow * c..(yo + i + 1) * ow * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut dx = vec![0.0; h * w * c];
    for y in 0..h {
        for xo in 0..ow {
            for (j, kv) in k.iter().enumerate() {
                let src = &horiz[(y * ow + xo) * c..(y * ow + xo + 1) * c];
                let dst = &mut dx[(y * w + xo + j) * c..(y * w + xo + j + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kv * s;
                }
            }
        }
    }
    dx
}
