//! First-order optimizers over [`ParamSet`]s and the cosine schedule.
//!
//! After each step parameters are rounded to `f32`, so the values held in
//! memory are exactly the values a checkpoint stores.

use std::f64::consts::PI;

use crate::model::ParamSet;

/// Cosine annealing from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    assert!(
        total_steps >= 1 && step <= total_steps,
        "step {step} outside 0..={total_steps}"
    );
    if step == 0 {
        return lr_start;
    }
    if step == total_steps {
        return lr_end;
    }
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (PI * step as f64 / total_steps as f64).cos())
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
    ) {
        let g = grads.flatten();
        assert_eq!(
            g.len(),
            self.m.len(),
            "gradient length does not match optimizer state"
        );
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut("", &mut |_, data| {
            for x in data.iter_mut() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *x = (*x - update) as f32 as f64;
                i += 1;
            }
        });
    }
}

/// Stochastic gradient descent with Nesterov momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn nesterov(param_count: usize) -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 0.0,
            velocity: vec![0.0; param_count],
        }
    }

    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
    ) {
        let g = grads.flatten();
        assert_eq!(
            g.len(),
            self.velocity.len(),
            "gradient length does not match optimizer state"
        );
        let (mu, wd) = (self.momentum, self.weight_decay);
        let vel = &mut self.velocity;
        let mut i = 0;
        params.visit_mut("", &mut |_, data| {
            for x in data.iter_mut() {
                let gi = g[i] + wd * *x;
                vel[i] = mu * vel[i] + gi;
                *x = (*x - lr * (gi + mu * vel[i])) as f32 as f64;
                i += 1;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorVisitor;

    struct Vector(Vec<f64>);

    impl ParamSet for Vector {
        fn visit(&self, prefix: &str, f: &mut TensorVisitor<'_>) {
            f(prefix, &[self.0.len()], &self.0);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
            f(prefix, &mut self.0);
        }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 150, 1e-5, 1e-7), 1e-5);
        assert_eq!(cosine_lr(150, 150, 1e-5, 1e-7), 1e-7);
        assert!((cosine_lr(75, 150, 1e-5, 1e-7) - (1e-5 + 1e-7) / 2.0).abs() < 1e-18);
        let trace: Vec<f64> = (0..=10).map(|s| cosine_lr(s, 10, 1.0, 0.1)).collect();
        assert!(trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = Vector(vec![1.0, -2.0, 0.5]);
        let g = Vector(vec![0.3, -4.0, 0.0]);
        let mut opt = Adam::new(3);
        opt.step(&mut p, &g, 0.01);
        assert!((p.0[0] - 0.99).abs() < 1e-6);
        assert!((p.0[1] - -1.99).abs() < 1e-6);
        assert_eq!(p.0[2], 0.5);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn optimizers_minimize_a_quadratic() {
        let target = [3.0, -1.0, 0.25];
        let grad = |p: &Vector| {
            Vector(
                p.0.iter()
                    .zip(&target)
                    .map(|(x, t)| 2.0 * (x - t))
                    .collect(),
            )
        };
        let mut p = Vector(vec![0.0; 3]);
        let mut adam = Adam::new(3);
        for _ in 0..2000 {
            let g = grad(&p);
            adam.step(&mut p, &g, 0.05);
        }
        assert!(
            p.0.iter().zip(&target).all(|(x, t)| (x - t).abs() < 1e-3),
            "{:?}",
            p.0
        );

        let mut p = Vector(vec![0.0; 3]);
        let mut sgd = Sgd::nesterov(3);
        for _ in 0..500 {
            let g = grad(&p);
            sgd.step(&mut p, &g, 0.01);
        }
        assert!(
            p.0.iter().zip(&target).all(|(x, t)| (x - t).abs() < 1e-4),
            "{:?}",
            p.0
        );
    }

    #[test]
    fn steps_keep_parameters_f32_representable() {
        let mut p = Vector(vec![0.1, 0.2]);
        let g = Vector(vec![0.123456789, -1e-3]);
        let mut opt = Adam::new(2);
        opt.step(&mut p, &g, 1e-5);
        assert!(p.0.iter().all(|&x| x as f32 as f64 == x));
    }
}
