use crate::error::{DiffError, Result};
use crate::graph::{Graph, Var};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(self.shape(a).to_vec())
    }

    fn scalar_operand(&self, op: &'static str, x: Var, s: Var) -> Result<()> {
        if self.value(s).len() != 1 {
            return Err(DiffError::ShapeMismatch {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("add", a, b)?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", &[a, b], &shape, values, |ctx| {
            let g = ctx.grad_out.to_vec();
            vec![ctx.needs(0).then(|| g.clone()), ctx.needs(1).then_some(g)]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("sub", a, b)?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push("sub", &[a, b], &shape, values, |ctx| {
            vec![
                ctx.needs(0).then(|| ctx.grad_out.to_vec()),
                ctx.needs(1).then(|| ctx.grad_out.iter().map(|g| -g).collect()),
            ]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("mul", a, b)?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", &[a, b], &shape, values, |ctx| {
            let (x, y, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad_out);
            vec![
                ctx.needs(0).then(|| g.iter().zip(y).map(|(g, y)| g * y).collect()),
                ctx.needs(1).then(|| g.iter().zip(x).map(|(g, x)| g * x).collect()),
            ]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape("div", a, b)?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x / y).collect();
        self.push("div", &[a, b], &shape, values, |ctx| {
            let (y, g, out) = (ctx.inputs[1], ctx.grad_out, ctx.output);
            vec![
                ctx.needs(0).then(|| g.iter().zip(y).map(|(g, y)| g / y).collect()),
                ctx.needs(1).then(|| {
                    g.iter()
                        .zip(y)
                        .zip(out)
                        .map(|((g, y), o)| -g * o / y)
                        .collect()
                }),
            ]
        })
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        self.scalar_operand("mul_scalar_var", x, s)?;
        let sv = self.item(s);
        let shape = self.shape(x).to_vec();
        let values = self.value(x).iter().map(|v| v * sv).collect();
        self.push("mul_scalar_var", &[x, s], &shape, values, |ctx| {
            let (x, s, g) = (ctx.inputs[0], ctx.inputs[1][0], ctx.grad_out);
            vec![
                ctx.needs(0).then(|| g.iter().map(|g| g * s).collect()),
                ctx.needs(1).then(|| vec![g.iter().zip(x).map(|(g, x)| g * x).sum()]),
            ]
        })
    }

    /// Adds the single value held in `s` to every element of `x`.
    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        self.scalar_operand("add_scalar_var", x, s)?;
        let sv = self.item(s);
        let shape = self.shape(x).to_vec();
        let values = self.value(x).iter().map(|v| v + sv).collect();
        self.push("add_scalar_var", &[x, s], &shape, values, |ctx| {
            vec![
                ctx.needs(0).then(|| ctx.grad_out.to_vec()),
                ctx.needs(1).then(|| vec![ctx.grad_out.iter().sum()]),
            ]
        })
    }

    fn unary<F, D>(&mut self, op: &'static str, x: Var, f: F, df: D) -> Result<Var>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + 'static,
    {
        let shape = self.shape(x).to_vec();
        let values = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(op, &[x], &shape, values, move |ctx| {
            let grad = ctx
                .grad_out
                .iter()
                .zip(ctx.inputs[0])
                .zip(ctx.output)
                .map(|((g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(grad)]
        })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.unary("one_minus", x, |v| 1.0 - v, |_, _| -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary("softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary("ln", x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(
            "clamp",
            x,
            |v| v.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn mismatched_shapes_are_named() {
        let mut g = Graph::new();
        let a = g.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = g.add(a, b).unwrap_err();
        assert_eq!(
            err,
            DiffError::ShapeMismatch {
                op: "add",
                lhs: vec![2],
                rhs: vec![3]
            }
        );
        assert!(err.to_string().contains("[2]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn sigmoid_backward_quarter_at_origin() {
        let mut g = Graph::new();
        let w = g.param(&[1], vec![0.0]).unwrap();
        let x = g.constant(&[1], vec![1.0]).unwrap();
        let wx = g.mul(w, x).unwrap();
        let y = g.sigmoid(wx).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(w)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn abs_subgradient_is_zero_at_zero() {
        let mut g = Graph::new();
        let x = g.param(&[3], vec![-2.0, 0.0, 3.0]).unwrap();
        let y = g.abs(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &[-1.0, 0.0, 1.0]);
    }
}
