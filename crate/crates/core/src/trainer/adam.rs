use super::loss::ParamVec;

/// Bias-corrected adaptive moment estimation over the 12 learnable scalars.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: ParamVec,
    v: ParamVec,
    steps: i32,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: ParamVec::zeros(),
            v: ParamVec::zeros(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, theta: &mut ParamVec, grad: &ParamVec, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let mut theta = ParamVec::zeros();
        let mut g = ParamVec::zeros();
        g[0] = 3.0;
        g[5] = -0.01;
        adam.step(&mut theta, &g, 0.1);
        assert!((theta[0] + 0.1).abs() < 1e-6);
        assert!((theta[5] - 0.1).abs() < 1e-5);
        assert_eq!(theta[1], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        let target = ParamVec::from_fn(|i, _| i as f64 - 5.0);
        let mut theta = ParamVec::zeros();
        for _ in 0..5000 {
            let g = 2.0 * (theta - target);
            adam.step(&mut theta, &g, 0.05);
        }
        assert!((theta - target).amax() < 1e-3);
    }
}
