use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Adam with decoupled weight decay.
///
/// Each step first shrinks every parameter by `1 - lr * weight_decay`, then
/// applies the bias-corrected Adam update.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter from its stored gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above");
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.len() != grad.numel() {
                *m = vec![0.0; grad.numel()];
                *v = vec![0.0; grad.numel()];
            }
            for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *theta *= decay;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(theta: f64, grad: Option<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.register("theta", Tensor::full([1], theta)).unwrap();
        s.get_mut(id).grad = grad.map(|g| Tensor::full([1], g));
        s
    }

    fn theta(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().1.value.data()[0]
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut s = scalar_store(0.7, Some(0.0));
        AdamW::new(1e-3, 0.0).step(&mut s).unwrap();
        assert_eq!(theta(&s), 0.7);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar_store(0.0, Some(1.0));
        AdamW::new(1e-3, 0.0).step(&mut s).unwrap();
        assert!((theta(&s) + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn pure_decay() {
        let mut s = scalar_store(2.0, Some(0.0));
        AdamW::new(1e-3, 0.01).step(&mut s).unwrap();
        assert_eq!(theta(&s), 2.0 * (1.0 - 1e-3 * 0.01));
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut s = scalar_store(0.0, None);
        assert!(matches!(AdamW::new(1e-3, 0.01).step(&mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn matches_plain_adam_without_decay() {
        let grads = [0.3, -1.2, 0.05, 2.0, -0.4];
        let mut s = scalar_store(0.5, None);
        let mut opt = AdamW::new(1e-2, 0.0);
        let (mut m, mut v, mut th) = (0.0, 0.0, 0.5f64);
        for (t, &g) in grads.iter().enumerate() {
            s.iter_mut().next().unwrap().1.grad = Some(Tensor::full([1], g));
            opt.step(&mut s).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = t as i32 + 1;
            th -= 1e-2 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            assert!((theta(&s) - th).abs() < 1e-12);
        }
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn fixed_parameters_are_untouched() {
        let mut s = ParamStore::new();
        s.register_fixed("eye", Tensor::identity(2)).unwrap();
        AdamW::new(1.0, 0.5).step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value, Tensor::identity(2));
    }
}
