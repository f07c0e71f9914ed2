use super::store::{Grads, ParamStore};
use super::tensor::Tensor;

/// Adam with bias correction. Moment tensors are lazily allocated per
/// parameter and live in checkpoint order (store order).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step_count: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for id in store.ids() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Moment state as named tensors for checkpointing. `optim.step` rides
    /// along as a 1x1 tensor.
    pub fn state_entries(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("optim.step".to_string(), Tensor::scalar(self.step_count as f64))];
        for id in store.ids() {
            if let Some(m) = &self.m[id.0] {
                out.push((format!("optim.m.{}", store.name(id)), m.clone()));
            }
            if let Some(v) = &self.v[id.0] {
                out.push((format!("optim.v.{}", store.name(id)), v.clone()));
            }
        }
        out
    }

    pub fn restore_state(&mut self, store: &ParamStore, entries: &[(String, Tensor)]) {
        for (name, t) in entries {
            if name == "optim.step" {
                self.step_count = t.data[0] as u64;
            } else if let Some(pname) = name.strip_prefix("optim.m.") {
                if let Some(id) = store.by_name(pname) {
                    self.m[id.0] = Some(t.clone());
                }
            } else if let Some(pname) = name.strip_prefix("optim.v.") {
                if let Some(id) = store.by_name(pname) {
                    self.v[id.0] = Some(t.clone());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::store::Grads;

    // On the very first step mhat/sqrt(vhat) = g/|g|, so each coordinate
    // moves by lr in the direction opposing its gradient sign.
    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::row(&[1.0, -2.0, 3.0]));
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999);
        let mut grads = Grads::new(&store);
        grads.accumulate(id, &Tensor::row(&[0.5, -0.25, 4.0]));
        adam.step(&mut store, &grads);
        let p = store.get(id);
        let expect = [1.0 - 1e-3, -2.0 + 1e-3, 3.0 - 1e-3];
        for (got, want) in p.data.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn state_round_trips() {
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::row(&[0.0, 0.0]));
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999);
        let mut grads = Grads::new(&store);
        grads.accumulate(id, &Tensor::row(&[1.0, -1.0]));
        adam.step(&mut store, &grads);
        adam.step(&mut store, &grads);

        let entries = adam.state_entries(&store);
        let mut fresh = Adam::new(&store, 1e-3, 0.9, 0.999);
        fresh.restore_state(&store, &entries);
        assert_eq!(fresh.step_count, 2);

        let mut s1 = store.clone();
        let mut s2 = store.clone();
        adam.step(&mut s1, &grads);
        fresh.step(&mut s2, &grads);
        assert_eq!(s1.get(id).data, s2.get(id).data);
    }
}
