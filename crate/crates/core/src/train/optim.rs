use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay
/// to 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup: usize, total: usize) -> Self {
        Self { peak, warmup, total }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.peak;
        }
        let t = ((step - self.warmup) as f64 / (self.total - self.warmup) as f64).min(1.0);
        self.peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &[Array2<f64>], weight_decay: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.t += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + wd * *p);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(2e-4, 500, 2000);
        assert!((s.lr(250) - 1e-4).abs() < 1e-18);
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(500), 2e-4);
        assert!((s.lr(1250) - 1e-4).abs() < 1e-15);
        assert!(s.lr(2000).abs() < 1e-18);
        assert_eq!(LrSchedule::new(1.0, 0, 0).lr(0), 1.0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![array![[3.0, 0.0]], array![[0.0], [4.0]]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((clip_global_norm(&mut g, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![array![[1.0, -2.0]]];
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[array![[0.5, -3.0]]], 0.1);
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[0][[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![array![[2.0]]];
        let mut opt = AdamW::new(&p, 0.5);
        opt.step(&mut p, &[array![[0.0]]], 0.1);
        assert!((p[0][[0, 0]] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}
