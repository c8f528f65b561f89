use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction and a per-parameter learning-rate multiplier.
///
/// The effective learning rate of parameter `p` is `lr × multiplier(p)`. A
/// multiplier of zero freezes the parameter: it is skipped entirely, so its
/// values stay bitwise unchanged and it may lack a gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    multipliers: Vec<f64>,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            multipliers: vec![1.0; store.len()],
            moments: vec![None; store.len()],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn multiplier(&self, id: ParamId) -> f64 {
        self.multipliers[id.0]
    }

    pub fn set_multiplier(&mut self, id: ParamId, mult: f64) {
        self.multipliers[id.0] = mult;
    }

    /// Sets the multiplier of every parameter whose name starts with `prefix`.
    /// Returns how many parameters matched.
    pub fn set_multiplier_prefix(&mut self, store: &ParamStore, prefix: &str, mult: f64) -> usize {
        let mut n = 0;
        for id in store.ids() {
            if store.name(id).starts_with(prefix) {
                self.multipliers[id.0] = mult;
                n += 1;
            }
        }
        n
    }

    /// `(name, effective learning rate)` for every parameter.
    pub fn effective_lrs(&self, store: &ParamStore) -> Vec<(String, f64)> {
        store
            .ids()
            .map(|id| (store.name(id).to_string(), self.lr * self.multipliers[id.0]))
            .collect()
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.multipliers.len() {
            return Err(Error::contract("optimizer was built for a different parameter store"));
        }
        for id in store.ids() {
            let mult = self.multipliers[id.0];
            if mult != 0.0 && store.get(id).grad().is_none() {
                return Err(Error::contract(format!("parameter {} has no gradient", store.name(id))));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids() {
            let lr = self.lr * self.multipliers[id.0];
            if lr == 0.0 {
                continue;
            }
            let tensor = store.get_mut(id);
            let n = tensor.numel();
            let mo = self.moments[id.0].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let grad = tensor.grad.take().expect("checked above");
            let data = tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                mo.m[i] = self.beta1 * mo.m[i] + (1.0 - self.beta1) * g;
                mo.v[i] = self.beta2 * mo.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = mo.m[i] / bc1;
                let vhat = mo.v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            tensor.grad = Some(grad);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one_param(0.0);
        s.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        let mut adam = Adam::new(&s, 0.1);
        adam.step(&mut s).unwrap();
        let x = s.get(id).data()[0];
        assert!((x + 0.1).abs() < 1e-8, "{x}");
    }

    #[test]
    fn zero_multiplier_freezes_bitwise() {
        let (mut s, id) = one_param(0.123_456_789);
        let before = s.get(id).data()[0].to_bits();
        s.get_mut(id).accumulate_grad(&[5.0]).unwrap();
        let mut adam = Adam::new(&s, 0.1);
        adam.set_multiplier(id, 0.0);
        for _ in 0..3 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get(id).data()[0].to_bits(), before);
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let (mut s, _) = one_param(1.0);
        let mut adam = Adam::new(&s, 0.1);
        assert!(matches!(adam.step(&mut s), Err(Error::Contract(_))));
    }

    #[test]
    fn two_steps_decrease_quadratic() {
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(&s, 0.1);
        let mut f = vec![1.0];
        for _ in 0..2 {
            s.zero_grads();
            let mut g = Graph::new();
            let x = g.param(&s, id);
            let sq = g.mul(x, x).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            s.accumulate_grads(&g).unwrap();
            adam.step(&mut s).unwrap();
            let x = s.get(id).data()[0];
            f.push(x * x);
        }
        assert!(f[1] < f[0] && f[2] < f[1], "{f:?}");
    }
}
