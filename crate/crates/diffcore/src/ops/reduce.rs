use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::split_axis;

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Graph {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).iter().sum();
        let n = self.value(x).len();
        self.push("sum", &[x], &[1], vec![total], move |ctx| {
            vec![Some(vec![ctx.grad_out[0]; n])]
        })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let total: f64 = self.value(x).iter().sum();
        self.push("mean", &[x], &[1], vec![total / n as f64], move |ctx| {
            vec![Some(vec![ctx.grad_out[0] / n as f64; n])]
        })
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis("sum_axis", &shape, axis)?;
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &xv[(o * n + a) * inner..(o * n + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        self.push("sum_axis", &[x], &drop_axis(&shape, axis), out, move |ctx| {
            let mut g = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let src = &ctx.grad_out[o * inner..(o + 1) * inner];
                for a in 0..n {
                    g[(o * n + a) * inner..(o * n + a + 1) * inner].copy_from_slice(src);
                }
            }
            vec![Some(g)]
        })
    }

    /// Max over `axis`, removing it. Gradient goes to the arg-max element,
    /// the lowest index winning ties.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis("max_axis", &shape, axis)?;
        let xv = self.value(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    let v = xv[(o * n + a) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = a;
                    }
                }
            }
        }
        self.push("max_axis", &[x], &drop_axis(&shape, axis), out, move |ctx| {
            let mut g = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    g[(o * n + arg[slot]) * inner + i] += ctx.grad_out[slot];
                }
            }
            vec![Some(g)]
        })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis("softmax", &shape, axis)?;
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let m = (0..n).map(|a| xv[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (xv[idx(a)] - m).exp();
                    out[idx(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[idx(a)] /= z;
                }
            }
        }
        self.push("softmax", &[x], &shape, out, move |ctx| {
            let (y, g) = (ctx.output, ctx.grad_out);
            let mut gi = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * n + a) * inner + i;
                    let dot: f64 = (0..n).map(|a| g[idx(a)] * y[idx(a)]).sum();
                    for a in 0..n {
                        gi[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                    }
                }
            }
            vec![Some(gi)]
        })
    }

    /// `x / (‖x‖₂ + eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        if eps < 0.0 {
            return Err(DiffError::InvalidShape {
                op: "l2_normalize",
                shape: self.shape(x).to_vec(),
                reason: format!("negative eps {eps}"),
            });
        }
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis("l2_normalize", &shape, axis)?;
        let xv = self.value(x);
        let mut norms = vec![0.0; outer * inner];
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * n + a) * inner + i;
                let nrm = (0..n).map(|a| xv[idx(a)] * xv[idx(a)]).sum::<f64>().sqrt();
                norms[o * inner + i] = nrm;
                for a in 0..n {
                    out[idx(a)] = xv[idx(a)] / (nrm + eps);
                }
            }
        }
        self.push("l2_normalize", &[x], &shape, out, move |ctx| {
            let (xv, g) = (ctx.inputs[0], ctx.grad_out);
            let mut gi = vec![0.0; xv.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * n + a) * inner + i;
                    let nrm = norms[o * inner + i];
                    let d = nrm + eps;
                    let gx: f64 = (0..n).map(|a| g[idx(a)] * xv[idx(a)]).sum();
                    let coupling = if nrm > 0.0 { gx / (d * d * nrm) } else { 0.0 };
                    for a in 0..n {
                        gi[idx(a)] = g[idx(a)] / d - xv[idx(a)] * coupling;
                    }
                }
            }
            vec![Some(gi)]
        })
    }
}
