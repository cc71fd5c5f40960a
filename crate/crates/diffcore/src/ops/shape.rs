use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{numel, split_axis, validate_shape};

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        validate_shape("reshape", shape)?;
        if numel(shape) != self.value(x).len() {
            return Err(DiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let values = self.value(x).to_vec();
        self.push("reshape", &[x], shape, values, |ctx| vec![Some(ctx.grad_out.to_vec())])
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(DiffError::InvalidShape {
                op: "transpose",
                shape,
                reason: "rank 2 required".into(),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let out = transpose_buf(self.value(x), r, c);
        self.push("transpose", &[x], &[c, r], out, move |ctx| {
            vec![Some(transpose_buf(ctx.grad_out, c, r))]
        })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| DiffError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis("concat", &base, axis)?;
        let mut extents = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            extents.push(s[axis]);
        }
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &n) in xs.iter().zip(&extents) {
                out.extend_from_slice(&self.value(x)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", xs, &shape, out, move |ctx| {
            let mut grads: Vec<Vec<f64>> = extents.iter().map(|n| Vec::with_capacity(outer * n * inner)).collect();
            let mut offset = 0;
            for o in 0..outer {
                for (g, &n) in grads.iter_mut().zip(&extents) {
                    g.extend_from_slice(&ctx.grad_out[offset..offset + n * inner]);
                    offset += n * inner;
                }
                debug_assert_eq!(offset, (o + 1) * total * inner);
            }
            grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| ctx.needs(i).then_some(g))
                .collect()
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis("narrow", &shape, axis)?;
        if len == 0 || start + len > n {
            return Err(DiffError::InvalidShape {
                op: "narrow",
                shape,
                reason: format!("range {start}..{} exceeds axis {axis}", start + len),
            });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xv[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push("narrow", &[x], &oshape, out, move |ctx| {
            let mut g = vec![0.0; outer * n * inner];
            for o in 0..outer {
                g[(o * n + start) * inner..(o * n + start + len) * inner]
                    .copy_from_slice(&ctx.grad_out[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        })
    }

    /// Replicates a size-1 `axis` to extent `n`.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, one, inner) = split_axis("expand", &shape, axis)?;
        if one != 1 || n == 0 {
            return Err(DiffError::InvalidShape {
                op: "expand",
                shape,
                reason: format!("axis {axis} must have extent 1 to expand to {n}"),
            });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&xv[o * inner..(o + 1) * inner]);
            }
        }
        let mut oshape = shape;
        oshape[axis] = n;
        self.push("expand", &[x], &oshape, out, move |ctx| {
            let mut g = vec![0.0; outer * inner];
            for o in 0..outer {
                for a in 0..n {
                    let src = &ctx.grad_out[(o * n + a) * inner..(o * n + a + 1) * inner];
                    for (d, s) in g[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            vec![Some(g)]
        })
    }
}

pub(crate) fn transpose_buf(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
