use crate::autograd::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Epochs between learning-rate halvings.
pub const LR_HALVING_EPOCHS: usize = 200;

/// Step decay: `base_lr / 2^floor(epoch / 200)`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    step_decay(epoch, base_lr, LR_HALVING_EPOCHS)
}

pub fn step_decay(epoch: usize, base_lr: f64, every: usize) -> f64 {
    let halvings = (epoch / every.max(1)).min(1074) as i32;
    base_lr * 0.5f64.powi(halvings)
}

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step and must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter from its stored gradient. Gradients are
    /// left in place; the caller resets them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::usage(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.first.is_empty() {
            for (_, p) in store.iter() {
                self.first.push(Tensor::zeros(p.value.shape()));
                self.second.push(Tensor::zeros(p.value.shape()));
            }
        }
        if self.first.len() != store.len() {
            return Err(Error::usage("optimizer state does not match the parameter set"));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let grad = store.grad(id).expect("checked above").clone();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.value_mut(id).data_mut();
            for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
                *mj = b1 * *mj + (one - b1) * gj;
                *vj = b2 * *vj + (one - b2) * gj * gj;
                let m_hat = *mj / corr1;
                let v_hat = *vj / corr2;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::full(Shape::new(1, 1, 1, 1), v)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.zero_grad();
        let mut grads = crate::autograd::params::Gradients::new(1);
        grads.set(s.ids().next().unwrap(), Tensor::full(Shape::new(1, 1, 1, 1), g));
        s.accumulate(&grads);
    }

    #[test]
    fn schedule_halves_every_200_epochs() {
        assert_eq!(lr_schedule(0, 1e-5), 1e-5);
        assert_eq!(lr_schedule(199, 1e-5), 1e-5);
        assert_eq!(lr_schedule(200, 1e-5), 5e-6);
        assert_eq!(lr_schedule(399, 1e-5), 5e-6);
        assert_eq!(lr_schedule(400, 1e-5), 2.5e-6);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.7, -0.02, 1e3] {
            let mut s = scalar_store(1.0);
            set_grad(&mut s, g);
            let mut adam = Adam::new(AdamConfig::default());
            adam.step(&mut s).unwrap();
            let moved = 1.0 - s.value(s.ids().next().unwrap()).data()[0];
            assert!((moved - 1e-5 * g.signum()).abs() < 1e-9, "g={g} moved={moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = scalar_store(0.5);
        set_grad(&mut s, 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(s.ids().next().unwrap()).data()[0], 0.5);
    }

    #[test]
    fn two_steps_match_reference_iteration() {
        let (g, lr, b1, b2, eps) = (0.3f64, 1e-3, 0.9f64, 0.999f64, 1e-8);
        let mut x = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = scalar_store(2.0);
        let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
        for _ in 0..2 {
            set_grad(&mut s, g);
            adam.step(&mut s).unwrap();
        }
        assert!((s.value(s.ids().next().unwrap()).data()[0] - x).abs() < 1e-12);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut s), Err(Error::Usage(_))));
    }
}
