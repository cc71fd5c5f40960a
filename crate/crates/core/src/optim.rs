//! Adaptive-moment optimizer over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// Applies update number `t` (1-based) with bias-corrected moments.
    pub fn update(&self, params: &mut ParamStore, m: &mut ParamStore, v: &mut ParamStore, grads: &ParamStore, t: u64) -> Result<()> {
        let c1 = 1.0 - self.beta1.powf(t as f64);
        let c2 = 1.0 - self.beta2.powf(t as f64);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let mi = m.get_mut(name)?;
            if g.data.len() != p.data.len() || mi.data.len() != p.data.len() {
                return Err(Error::Shape(format!("optimizer buffers for {name} do not match")));
            }
            let vi = v.get_mut(name)?;
            for (((x, g), m), v) in p.data.iter_mut().zip(&g.data).zip(mi.data.iter_mut()).zip(vi.data.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor { shape: vec![2], data: vec![1.0, -1.0] });
        let mut m = p.zeros_like();
        let mut v = p.zeros_like();
        let mut g = p.zeros_like();
        g.get_mut("x").unwrap().data = vec![0.5, 0.0];
        let opt = Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        opt.update(&mut p, &mut m, &mut v, &g, 1).unwrap();
        let x = &p.get("x").unwrap().data;
        assert!((x[0] - 0.9).abs() < 1e-7);
        // zero gradient leaves the parameter and its moments untouched
        assert_eq!(x[1], -1.0);
        assert_eq!(m.get("x").unwrap().data[1], 0.0);
    }
}
