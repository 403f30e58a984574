use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam: per-parameter step sizes from running first and second gradient moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update using the gradients stored on each parameter.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if params.len() != self.m.len() {
            return Err(Error::invalid("parameter list changed between optimizer steps"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
            for (((w, g), m), v) in p.values_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut p = Tensor::parameter(vec![2], vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.values().iter().map(|x| 2.0 * (x - 1.0)).collect();
            p.set_grad(g).unwrap();
            opt.step(vec![&mut p]).unwrap();
        }
        for x in p.values() {
            assert!((x - 1.0).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn zero_lr_is_frozen() {
        let mut p = Tensor::parameter(vec![3], vec![0.5, 1.5, -2.0]).unwrap();
        let before = p.clone();
        let mut opt = Adam::new(0.0);
        for _ in 0..10 {
            p.set_grad(vec![1.0, -3.0, 0.2]).unwrap();
            opt.step(vec![&mut p]).unwrap();
        }
        assert_eq!(p.values(), before.values());
    }
}
