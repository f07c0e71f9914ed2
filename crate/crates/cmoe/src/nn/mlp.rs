use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{matmul_nt, Tensor};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
    act: Activation,
}

/// Fully connected net. Weights are stored `(out, in)`; biases start at zero
/// and weights at scaled-uniform fan-in, so construction is fully determined
/// by the rng state.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Mlp {
    /// `sizes` is `[in, hidden.., out]`. Hidden layers use `hidden_act`, the
    /// output layer `out_act`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        hidden_act: Activation,
        out_act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least in and out dims");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for i in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
            let w = store.register(
                &format!("{name}.l{i}.w"),
                Tensor::fan_in_uniform(fan_out, fan_in, fan_in, rng),
            );
            let b = store.register(&format!("{name}.l{i}.b"), Tensor::zeros(1, fan_out));
            let act = if i + 2 == sizes.len() { out_act } else { hidden_act };
            layers.push(Layer { w, b, act });
        }
        Mlp {
            layers,
            in_dim: sizes[0],
            out_dim: *sizes.last().unwrap(),
        }
    }

    /// Inference path, no tape. `x` is `(batch, in_dim)`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        assert_eq!(x.cols, self.in_dim, "mlp input dim");
        let mut h = x.clone();
        for layer in &self.layers {
            let w = store.get(layer.w);
            let b = store.get(layer.b);
            let mut y = matmul_nt(&h, w);
            for r in 0..y.rows {
                let row = &mut y.data[r * y.cols..(r + 1) * y.cols];
                for (v, bias) in row.iter_mut().zip(&b.data) {
                    *v = layer.act.apply(*v + bias);
                }
            }
            h = y;
        }
        h
    }

    /// Single-row convenience for the per-env control path.
    pub fn forward_one(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        self.forward(store, &Tensor::row(x)).data
    }

    /// Training path on a tape.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            h = tape.linear(h, w, b);
            h = match layer.act {
                Activation::Elu => tape.elu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
            };
        }
        h
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Scalar-by-scalar re-evaluation of the net from its stored weights,
    // written without the Tensor machinery on purpose.
    fn eval_by_hand(store: &ParamStore, mlp: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        for (i, ids) in mlp.param_ids().chunks(2).enumerate() {
            let w = store.get(ids[0]);
            let b = store.get(ids[1]);
            let mut next = vec![0.0; w.rows];
            for (j, out) in next.iter_mut().enumerate() {
                let mut acc = b.data[j];
                for (k, &x) in h.iter().enumerate() {
                    acc += w.at(j, k) * x;
                }
                let last = i + 1 == mlp.param_ids().len() / 2;
                *out = if last {
                    acc
                } else {
                    acc.tanh()
                };
            }
            h = next;
        }
        h
    }

    #[test]
    fn seed0_forward_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "net",
            &[2, 3, 1],
            Activation::Tanh,
            Activation::Identity,
            &mut rng,
        );
        let input = [0.1, -0.1];
        let got = mlp.forward_one(&store, &input);
        let want = eval_by_hand(&store, &mlp, &input);
        assert_eq!(got.len(), 1);
        assert!(
            (got[0] - want[0]).abs() < 1e-12,
            "forward {} vs hand {}",
            got[0],
            want[0]
        );
    }

    #[test]
    fn same_seed_same_net_different_seed_different_net() {
        let build = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let mlp = Mlp::new(
                &mut store,
                "net",
                &[4, 8, 2],
                Activation::Elu,
                Activation::Identity,
                &mut rng,
            );
            mlp.forward_one(&store, &[0.3, -0.2, 0.1, 0.9])
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn tape_forward_matches_inference_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "net",
            &[3, 6, 6, 2],
            Activation::Elu,
            Activation::Tanh,
            &mut rng,
        );
        let x = Tensor::fan_in_uniform(4, 3, 1, &mut rng);
        let plain = mlp.forward(&store, &x);
        let mut tape = Tape::new(&store);
        let vx = tape.constant(x);
        let y = mlp.forward_tape(&mut tape, vx);
        assert_eq!(tape.value(y).data, plain.data);
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "net",
            &[4, 5, 3],
            Activation::Elu,
            Activation::Identity,
            &mut rng,
        );
        let x = Tensor::fan_in_uniform(6, 4, 1, &mut rng);
        let target = Tensor::fan_in_uniform(6, 3, 1, &mut rng);
        let build = |t: &mut Tape| {
            let vx = t.constant(x.clone());
            let y = mlp.forward_tape(t, vx);
            let tv = t.constant(target.clone());
            let d = t.sub(y, tv);
            let sq = t.square(d);
            t.mean_all(sq)
        };
        let mut tape = Tape::new(&store);
        let loss = build(&mut tape);
        let grads = tape.backward(loss).unwrap();
        let ids = mlp.param_ids();
        let err = gradcheck::max_rel_err(&mut store, &ids, &grads, |s| {
            let mut t = Tape::new(s);
            let l = build(&mut t);
            t.scalar_value(l)
        });
        assert!(err < 1e-6, "mlp fd mismatch {err}");
    }

    #[test]
    fn param_count_matches_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "net",
            &[96, 64, 64, 4],
            Activation::Elu,
            Activation::Identity,
            &mut rng,
        );
        assert_eq!(
            mlp.param_count(&store),
            96 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4
        );
    }
}
