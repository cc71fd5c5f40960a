use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};

/// `c[m×n] = beta·c + a · b` for row-major operands given as
/// `(data, row stride, column stride)`.
#[allow(clippy::too_many_arguments)]
fn dgemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), beta: f64, c: &mut [f64]) {
    assert!(c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (a.0.len() > (m - 1) * a.1 + (k - 1) * a.2 && b.0.len() > (k - 1) * b.1 + (n - 1) * b.2));
    // SAFETY: the bounds above cover every element the kernel reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    let m = out.len() / n.max(1);
    dgemm(m, k, n, (a, k, 1), (b, n, 1), 1.0, out);
}

/// `da[m×k] = g[m×n] · bᵀ`
fn grad_lhs(g: &[f64], b: &[f64], k: usize, n: usize) -> Vec<f64> {
    let m = g.len() / n.max(1);
    let mut da = vec![0.0; m * k];
    dgemm(m, n, k, (g, n, 1), (b, 1, n), 0.0, &mut da);
    da
}

/// `db[k×n] = aᵀ · g`
fn grad_rhs(a: &[f64], g: &[f64], k: usize, n: usize) -> Vec<f64> {
    let m = a.len() / k.max(1);
    let mut db = vec![0.0; k * n];
    dgemm(k, m, n, (a, 1, k), (g, n, 1), 0.0, &mut db);
    db
}

impl Graph {
    fn matrix_dims(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok((sa[0], sa[1], sb[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = self.matrix_dims("matmul", a, b)?;
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a), self.value(b), &mut out, k, n);
        self.push("matmul", &[a, b], &[m, n], out, move |ctx| {
            let (av, bv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
            vec![
                ctx.needs(0).then(|| grad_lhs(g, bv, k, n)),
                ctx.needs(1).then(|| grad_rhs(av, g, k, n)),
            ]
        })
    }

    /// Row-wise affine map `x·W + b` for `x: (m, in)`, `W: (in, out)`, `b: (out)`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k, n) = self.matrix_dims("affine", x, w)?;
        if self.shape(b) != [n] {
            return Err(DiffError::ShapeMismatch {
                op: "affine",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.value(b);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm_acc(self.value(x), self.value(w), &mut out, k, n);
        self.push("affine", &[x, w, b], &[m, n], out, move |ctx| {
            let (xv, wv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
            let db = ctx.needs(2).then(|| {
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                db
            });
            vec![
                ctx.needs(0).then(|| grad_lhs(g, wv, k, n)),
                ctx.needs(1).then(|| grad_rhs(xv, g, k, n)),
                db,
            ]
        })
    }
}
