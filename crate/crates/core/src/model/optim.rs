//! Adam with linear warmup, cosine decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// Step at which the cosine reaches `min_lr_ratio · lr`.
    pub total_steps: u64,
    pub min_lr_ratio: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 200,
            total_steps: 10_000,
            min_lr_ratio: 0.0,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    /// Learning rate used for the `step`-th update (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm >= 0.0
            && (0.0..=1.0).contains(&self.min_lr_ratio);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        })
    }

    /// Applies one update. Non-finite gradients leave everything untouched.
    pub fn train_step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<StepStats> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::Shape("gradient layout differs from parameters".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient at step {}; update rejected",
                self.step + 1
            )));
        }
        let c = &self.config;
        let grad_norm = grads.l2_norm();
        let clipped = c.clip_norm > 0.0 && grad_norm > c.clip_norm;
        let scale = if clipped { c.clip_norm / grad_norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let lr = c.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let g = &grads.tensor(i).data;
            let m = &mut self.m.tensor_mut(i).data;
            let v = &mut self.v.tensor_mut(i).data;
            let p = &mut params.tensor_mut(i).data;
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(StepStats {
            step: self.step,
            lr,
            grad_norm,
            clipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn vector(v: Vec<f64>) -> ModelParams {
        ModelParams::from_parts(vec![(
            "x".into(),
            Tensor {
                shape: vec![v.len()],
                data: v,
            },
        )])
    }

    #[test]
    fn schedule_shape() {
        let c = AdamConfig {
            lr: 1.0,
            warmup_steps: 10,
            total_steps: 110,
            ..Default::default()
        };
        assert_eq!(c.lr_at(5), 0.5);
        assert_eq!(c.lr_at(10), 1.0);
        assert!((c.lr_at(60) - 0.5).abs() < 1e-12);
        assert!(c.lr_at(110).abs() < 1e-12);
        assert!(c.lr_at(500).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut st = OptimizerState::new(AdamConfig::default(), &p).unwrap();
        let g = p.zeros_like();
        for _ in 0..5 {
            st.train_step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn zero_lr_freezes() {
        let mut p = vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p).unwrap();
        let g = vector(vec![0.3, 0.1, -5.0]);
        st.train_step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = vector(vec![1.0, 2.0]);
        let before = p.clone();
        let mut st = OptimizerState::new(AdamConfig::default(), &p).unwrap();
        let g = vector(vec![f64::NAN, 0.0]);
        let err = st.train_step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_reports_pre_clip_norm() {
        let mut p = vector(vec![0.0, 0.0]);
        let mut st = OptimizerState::new(AdamConfig::default(), &p).unwrap();
        let s = st.train_step(&mut p, &vector(vec![3.0, 4.0])).unwrap();
        assert_eq!(s.grad_norm, 5.0);
        assert!(s.clipped);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = sum a_i (x_i - c_i)^2, minimum at c
        let a = [1.0, 4.0, 0.25, 2.0];
        let c = [1.5, -2.0, 0.3, 7.0];
        let mut p = vector(vec![0.0; 4]);
        let cfg = AdamConfig {
            lr: 0.1,
            warmup_steps: 20,
            total_steps: 2000,
            clip_norm: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, &p).unwrap();
        for _ in 0..2000 {
            let x = &p.tensor(0).data;
            let g: Vec<f64> = (0..4).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect();
            st.train_step(&mut p, &vector(g)).unwrap();
        }
        for (x, c) in p.tensor(0).data.iter().zip(c) {
            assert!((x - c).abs() < 1e-6, "{x} vs {c}");
        }
    }
}
