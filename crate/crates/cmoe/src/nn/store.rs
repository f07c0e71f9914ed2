use super::tensor::Tensor;

/// Handle into a [`ParamStore`]. Models hold ids, never tensors, so the
/// store can be borrowed mutably by the optimizer without fighting the models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat registry of named parameter tensors. Registration order is the
/// checkpoint order, so model construction must be deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }
}

/// Gradients aligned with a store's parameter ids. Missing entries mean the
/// parameter did not appear in the loss.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            slots: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.slots[id.0] {
            Some(t) => {
                assert!(t.same_shape(g), "gradient shape mismatch");
                for (a, b) in t.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
            slot => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` into self. Call in a fixed chunk order so parallel
    /// accumulation stays bit-deterministic.
    pub fn merge(&mut self, other: &Grads) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for slot in self.slots.iter_mut().flatten() {
            for x in slot.data.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn get_mut_or_zero(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Tensor {
        self.slots[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|t| t.all_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .fold(0.0f64, |m, t| m.max(t.max_abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let a = store.register("a.w", Tensor::zeros(2, 3));
        let b = store.register("b.w", Tensor::scalar(1.5));
        assert_eq!(store.name(a), "a.w");
        assert_eq!(store.by_name("b.w"), Some(b));
        assert_eq!(store.by_name("missing"), None);
        assert_eq!(store.total_scalars(), 7);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut store = ParamStore::new();
        store.register("x", Tensor::zeros(1, 1));
        store.register("x", Tensor::zeros(1, 1));
    }

    #[test]
    fn grads_merge_and_scale() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::zeros(1, 2));
        let mut g1 = Grads::new(&store);
        g1.accumulate(a, &Tensor::row(&[1.0, 2.0]));
        let mut g2 = Grads::new(&store);
        g2.accumulate(a, &Tensor::row(&[0.5, -1.0]));
        g1.merge(&g2);
        g1.scale(2.0);
        assert_eq!(g1.get(a).unwrap().data, vec![3.0, 2.0]);
    }
}
