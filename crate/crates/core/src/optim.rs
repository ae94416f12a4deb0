use ndarray::Array2;

/// Adam over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Array2<f64>> = shapes.into_iter().map(Array2::zeros).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = Array2::from_elem((1, 2), 5.0);
        let mut opt = Adam::new(0.1, [(1, 2)]);
        for _ in 0..500 {
            let g = x.mapv(|v| 2.0 * (v - 1.0));
            opt.update(&mut [&mut x], &[g]);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3));
        assert_eq!(opt.steps(), 500);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut x = Array2::from_elem((2, 2), 3.0);
        let mut opt = Adam::new(0.3, [(2, 2)]);
        opt.update(&mut [&mut x], &[Array2::zeros((2, 2))]);
        assert_eq!(x, Array2::from_elem((2, 2), 3.0));
    }
}
