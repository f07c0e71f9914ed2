use super::store::{Grads, ParamId, ParamStore};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::{Error, Result};

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// y = x * w^T + b, with w stored (out, in) and b (1, out).
    Linear { x: usize, w: usize, b: usize },
    /// y = a * b^T for a (r, d), b (k, d).
    MatmulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// Elementwise minimum; ties route the gradient to `a`.
    Min { a: usize, b: usize },
    Scale { x: usize, k: f64 },
    AddScalar { x: usize },
    Elu { x: usize },
    Tanh { x: usize },
    Exp { x: usize },
    Ln { x: usize },
    Square { x: usize },
    /// Zero gradient outside (lo, hi).
    Clamp { x: usize, lo: f64, hi: f64 },
    SoftmaxRows { x: usize },
    /// Row-wise x / ||x||, with the norm floored at 1e-12.
    L2NormalizeRows { x: usize },
    SumRows { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    /// Tile a (1, d) row down to (rows, d).
    BroadcastRow { x: usize, rows: usize },
    /// Multiply each row of x (b, d) by the scalar in c (b, 1).
    MulCol { x: usize, c: usize },
    /// Extract column j of x (b, n) as (b, 1).
    Col { x: usize, j: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::MatmulNt { .. } => "matmul_nt",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Min { .. } => "min",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Elu { .. } => "elu",
            Op::Tanh { .. } => "tanh",
            Op::Exp { .. } => "exp",
            Op::Ln { .. } => "ln",
            Op::Square { .. } => "square",
            Op::Clamp { .. } => "clamp",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::SumRows { .. } => "sum_rows",
            Op::SumAll { .. } => "sum_all",
            Op::MeanAll { .. } => "mean_all",
            Op::BroadcastRow { .. } => "broadcast_row",
            Op::MulCol { .. } => "mul_col",
            Op::Col { .. } => "col",
        }
    }
}

struct Node {
    op: Op,
    val: Tensor,
}

/// Reverse-mode tape over tensors. Build a scalar loss with the op methods,
/// then call [`Tape::backward`] to get parameter gradients.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<(usize, ParamId)>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, val: Tensor) -> Var {
        self.nodes.push(Node { op, val });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].val
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "expected scalar node");
        t.data[0]
    }

    /// Leaf tracking a store parameter; its gradient is exported by backward.
    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.push(Op::Leaf, self.store.get(id).clone());
        self.param_nodes.push((v.0, id));
        v
    }

    /// Leaf with no gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Re-enters a computed value as a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (&self.nodes[x.0].val, &self.nodes[w.0].val, &self.nodes[b.0].val);
        assert_eq!(xv.cols, wv.cols, "linear: input dim vs weight fan-in");
        assert_eq!(bv.rows, 1);
        assert_eq!(bv.cols, wv.rows, "linear: bias vs weight fan-out");
        let mut y = matmul_nt(xv, wv);
        for r in 0..y.rows {
            let row = &mut y.data[r * y.cols..(r + 1) * y.cols];
            for (a, b) in row.iter_mut().zip(&bv.data) {
                *a += b;
            }
        }
        self.push(Op::Linear { x: x.0, w: w.0, b: b.0 }, y)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let y = matmul_nt(&self.nodes[a.0].val, &self.nodes[b.0].val);
        self.push(Op::MatmulNt { a: a.0, b: b.0 }, y)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].val, &self.nodes[b.0].val);
        assert!(av.same_shape(bv), "{}: shape mismatch", op.name());
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let val = Tensor::from_vec(av.rows, av.cols, data);
        self.push(op, val)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Min { a: a.0, b: b.0 })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let val = self.nodes[x.0].val.map(f);
        self.push(op, val)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale { x: x.0, k })
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar { x: x.0 })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp() - 1.0 }, Op::Elu { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x: x.0 })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp { x: x.0 })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln { x: x.0 })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x: x.0 })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x: x.0, lo, hi })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut val = self.nodes[x.0].val.clone();
        super::tensor::softmax_rows_inplace(&mut val);
        self.push(Op::SoftmaxRows { x: x.0 }, val)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].val;
        let mut val = xv.clone();
        for r in 0..val.rows {
            let row = &mut val.data[r * val.cols..(r + 1) * val.cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        self.push(Op::L2NormalizeRows { x: x.0 }, val)
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].val;
        let data = (0..xv.rows)
            .map(|r| xv.row_slice(r).iter().sum())
            .collect();
        let val = Tensor::from_vec(xv.rows, 1, data);
        self.push(Op::SumRows { x: x.0 }, val)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].val.data.iter().sum();
        self.push(Op::SumAll { x: x.0 }, Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].val;
        let s: f64 = t.data.iter().sum();
        let n = t.len() as f64;
        self.push(Op::MeanAll { x: x.0 }, Tensor::scalar(s / n))
    }

    pub fn broadcast_row(&mut self, x: Var, rows: usize) -> Var {
        let xv = &self.nodes[x.0].val;
        assert_eq!(xv.rows, 1, "broadcast_row expects a row vector");
        let mut data = Vec::with_capacity(rows * xv.cols);
        for _ in 0..rows {
            data.extend_from_slice(&xv.data);
        }
        let val = Tensor::from_vec(rows, xv.cols, data);
        self.push(Op::BroadcastRow { x: x.0, rows }, val)
    }

    pub fn mul_col(&mut self, x: Var, c: Var) -> Var {
        let (xv, cv) = (&self.nodes[x.0].val, &self.nodes[c.0].val);
        assert_eq!(cv.cols, 1, "mul_col expects a column");
        assert_eq!(xv.rows, cv.rows, "mul_col row mismatch");
        let mut val = xv.clone();
        for r in 0..val.rows {
            let k = cv.data[r];
            for v in &mut val.data[r * val.cols..(r + 1) * val.cols] {
                *v *= k;
            }
        }
        self.push(Op::MulCol { x: x.0, c: c.0 }, val)
    }

    pub fn col(&mut self, x: Var, j: usize) -> Var {
        let xv = &self.nodes[x.0].val;
        assert!(j < xv.cols, "col index out of range");
        let data = (0..xv.rows).map(|r| xv.at(r, j)).collect();
        let val = Tensor::from_vec(xv.rows, 1, data);
        self.push(Op::Col { x: x.0, j }, val)
    }

    /// Backpropagates from a scalar loss and returns gradients for every
    /// parameter leaf. Fails with a numeric error naming the first op that
    /// produced a non-finite value.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = &self.nodes[loss.0].val;
        assert_eq!(lt.len(), 1, "backward needs a scalar loss");
        if !lt.data[0].is_finite() {
            let culprit = self
                .nodes
                .iter()
                .enumerate()
                .find(|(_, n)| !n.val.all_finite())
                .map(|(i, n)| format!("{}[{}]", n.op.name(), i))
                .unwrap_or_else(|| "loss".to_string());
            return Err(Error::Numeric(format!(
                "non-finite loss; first bad node {culprit}"
            )));
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {
                    adj[i] = Some(dy);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let dx = matmul_nn(&dy, &self.nodes[w].val);
                    let dw = matmul_tn(&dy, &self.nodes[x].val);
                    let mut db = Tensor::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (a, g) in db.data.iter_mut().zip(dy.row_slice(r)) {
                            *a += g;
                        }
                    }
                    acc(&mut adj, x, dx);
                    acc(&mut adj, w, dw);
                    acc(&mut adj, b, db);
                }
                Op::MatmulNt { a, b } => {
                    let da = matmul_nn(&dy, &self.nodes[b].val);
                    let db = matmul_tn(&dy, &self.nodes[a].val);
                    acc(&mut adj, a, da);
                    acc(&mut adj, b, db);
                }
                Op::Add { a, b } => {
                    acc(&mut adj, a, dy.clone());
                    acc(&mut adj, b, dy);
                }
                Op::Sub { a, b } => {
                    let db = dy.map(|v| -v);
                    acc(&mut adj, a, dy);
                    acc(&mut adj, b, db);
                }
                Op::Mul { a, b } => {
                    let da = ew(&dy, &self.nodes[b].val, |g, v| g * v);
                    let db = ew(&dy, &self.nodes[a].val, |g, v| g * v);
                    acc(&mut adj, a, da);
                    acc(&mut adj, b, db);
                }
                Op::Min { a, b } => {
                    let (av, bv) = (&self.nodes[a].val, &self.nodes[b].val);
                    let mut da = Tensor::zeros(dy.rows, dy.cols);
                    let mut db = Tensor::zeros(dy.rows, dy.cols);
                    for k in 0..dy.data.len() {
                        if av.data[k] <= bv.data[k] {
                            da.data[k] = dy.data[k];
                        } else {
                            db.data[k] = dy.data[k];
                        }
                    }
                    acc(&mut adj, a, da);
                    acc(&mut adj, b, db);
                }
                Op::Scale { x, k } => acc(&mut adj, x, dy.map(|v| v * k)),
                Op::AddScalar { x } => acc(&mut adj, x, dy),
                Op::Elu { x } => {
                    let dx = ew(&dy, &node.val, |g, y| if y > 0.0 { g } else { g * (y + 1.0) });
                    acc(&mut adj, x, dx);
                }
                Op::Tanh { x } => {
                    let dx = ew(&dy, &node.val, |g, y| g * (1.0 - y * y));
                    acc(&mut adj, x, dx);
                }
                Op::Exp { x } => {
                    let dx = ew(&dy, &node.val, |g, y| g * y);
                    acc(&mut adj, x, dx);
                }
                Op::Ln { x } => {
                    let dx = ew(&dy, &self.nodes[x].val, |g, v| g / v);
                    acc(&mut adj, x, dx);
                }
                Op::Square { x } => {
                    let dx = ew(&dy, &self.nodes[x].val, |g, v| 2.0 * g * v);
                    acc(&mut adj, x, dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let dx = ew(&dy, &self.nodes[x].val, |g, v| {
                        if v > lo && v < hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    acc(&mut adj, x, dx);
                }
                Op::SoftmaxRows { x } => {
                    let y = &node.val;
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row_slice(r);
                        let gr = dy.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = &mut dx.data[r * y.cols..(r + 1) * y.cols];
                        for j in 0..y.cols {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut adj, x, dx);
                }
                Op::L2NormalizeRows { x } => {
                    let xv = &self.nodes[x].val;
                    let y = &node.val;
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let norm = xv.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        let yr = y.row_slice(r);
                        let gr = dy.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = &mut dx.data[r * y.cols..(r + 1) * y.cols];
                        for j in 0..y.cols {
                            out[j] = (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                    acc(&mut adj, x, dx);
                }
                Op::SumRows { x } => {
                    let xv = &self.nodes[x].val;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let g = dy.data[r];
                        for v in &mut dx.data[r * xv.cols..(r + 1) * xv.cols] {
                            *v = g;
                        }
                    }
                    acc(&mut adj, x, dx);
                }
                Op::SumAll { x } => {
                    let xv = &self.nodes[x].val;
                    let g = dy.data[0];
                    acc(&mut adj, x, Tensor::from_vec(xv.rows, xv.cols, vec![g; xv.len()]));
                }
                Op::MeanAll { x } => {
                    let xv = &self.nodes[x].val;
                    let g = dy.data[0] / xv.len() as f64;
                    acc(&mut adj, x, Tensor::from_vec(xv.rows, xv.cols, vec![g; xv.len()]));
                }
                Op::BroadcastRow { x, rows } => {
                    let cols = node.val.cols;
                    let mut dx = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for (a, g) in dx.data.iter_mut().zip(dy.row_slice(r)) {
                            *a += g;
                        }
                    }
                    acc(&mut adj, x, dx);
                }
                Op::MulCol { x, c } => {
                    let (xv, cv) = (&self.nodes[x].val, &self.nodes[c].val);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    let mut dc = Tensor::zeros(xv.rows, 1);
                    for r in 0..xv.rows {
                        let k = cv.data[r];
                        let gr = dy.row_slice(r);
                        let xr = xv.row_slice(r);
                        let out = &mut dx.data[r * xv.cols..(r + 1) * xv.cols];
                        let mut dot = 0.0;
                        for j in 0..xv.cols {
                            out[j] = gr[j] * k;
                            dot += gr[j] * xr[j];
                        }
                        dc.data[r] = dot;
                    }
                    acc(&mut adj, x, dx);
                    acc(&mut adj, c, dc);
                }
                Op::Col { x, j } => {
                    let xv = &self.nodes[x].val;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        dx.set(r, j, dy.data[r]);
                    }
                    acc(&mut adj, x, dx);
                }
            }
        }

        let mut grads = Grads::new(self.store);
        for &(node, id) in &self.param_nodes {
            if let Some(g) = &adj[node] {
                grads.accumulate(id, g);
            }
        }
        Ok(grads)
    }
}

fn acc(adj: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut adj[idx] {
        Some(t) => {
            for (a, b) in t.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert!(a.same_shape(b));
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Each op's backward rule is checked against central differences through
    // a tiny composite loss so a broken rule cannot hide.
    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::fan_in_uniform(3, 4, 4, &mut rng));
        let b = store.register("b", Tensor::fan_in_uniform(3, 4, 4, &mut rng));
        let c = store.register("c", Tensor::fan_in_uniform(1, 4, 4, &mut rng));
        let ids = [a, b, c];

        let losses: Vec<(&str, Box<dyn Fn(&mut Tape) -> Var>)> = vec![
            ("mix", Box::new(move |t: &mut Tape| {
                let (va, vb, vc) = (t.param(a), t.param(b), t.param(c));
                let s = t.add(va, vb);
                let m = t.mul(s, vb);
                let e = t.elu(m);
                let th = t.tanh(e);
                let bc = t.broadcast_row(vc, 3);
                let d = t.sub(th, bc);
                let sq = t.square(d);
                t.mean_all(sq)
            })),
            ("softmax_minpath", Box::new(move |t: &mut Tape| {
                let (va, vb) = (t.param(a), t.param(b));
                let sm = t.softmax_rows(va);
                let mn = t.min(sm, vb);
                let cl = t.clamp(mn, -0.7, 0.7);
                let sr = t.sum_rows(cl);
                t.mean_all(sr)
            })),
            ("normalize_matmul", Box::new(move |t: &mut Tape| {
                let (va, vb) = (t.param(a), t.param(b));
                let na = t.l2_normalize_rows(va);
                let scores = t.matmul_nt(na, vb);
                let sc = t.scale(scores, 0.7);
                let ex = t.exp(sc);
                let sh = t.add_scalar(ex, 1.0);
                let ln = t.ln(sh);
                t.sum_all(ln)
            })),
            ("mulcol_col", Box::new(move |t: &mut Tape| {
                let (va, vb) = (t.param(a), t.param(b));
                let c0 = t.col(vb, 2);
                let scaled = t.mul_col(va, c0);
                let sq = t.square(scaled);
                t.mean_all(sq)
            })),
        ];

        for (name, build) in &losses {
            let mut tape = Tape::new(&store);
            let loss = build(&mut tape);
            let grads = tape.backward(loss).unwrap();
            let err = gradcheck::max_rel_err(&mut store, &ids, &grads, |s| {
                let mut t = Tape::new(s);
                let l = build(&mut t);
                t.scalar_value(l)
            });
            assert!(err < 1e-6, "{name}: fd mismatch {err}");
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::fan_in_uniform(3, 5, 5, &mut rng));
        let b = store.register("b", Tensor::zeros(1, 3));
        let x = Tensor::fan_in_uniform(4, 5, 5, &mut rng);

        let build = |t: &mut Tape, x: &Tensor| {
            let (vw, vb) = (t.param(w), t.param(b));
            let vx = t.constant(x.clone());
            let y = t.linear(vx, vw, vb);
            let e = t.elu(y);
            let s = t.square(e);
            t.mean_all(s)
        };
        let mut tape = Tape::new(&store);
        let loss = build(&mut tape, &x);
        let grads = tape.backward(loss).unwrap();
        let err = gradcheck::max_rel_err(&mut store, &[w, b], &grads, |s| {
            let mut t = Tape::new(s);
            let l = build(&mut t, &x);
            t.scalar_value(l)
        });
        assert!(err < 1e-6, "linear fd mismatch {err}");
    }

    #[test]
    fn detach_cuts_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::scalar(2.0));
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        let d = tape.detach(v);
        let s = tape.square(d);
        let loss = tape.sum_all(s);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(p).is_none());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::scalar(-1.0));
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        let l = tape.ln(v);
        let loss = tape.sum_all(l);
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
        assert!(err.to_string().contains("ln"), "{err}");
    }
}
