use rand::Rng;
use rayon::prelude::*;

/// Dense row-major f64 matrix. Row vectors are `1 x n`, batches are
/// `batch x dim`, scalars are `1 x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn row(data: &[f64]) -> Self {
        Tensor::from_vec(1, data.len(), data.to_vec())
    }

    /// Uniform init in `[-s, s]` with `s = sqrt(1 / fan_in)`.
    pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let s = (1.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        Tensor { rows, cols, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Output rows are split across the thread pool only when the batch is big
/// enough to pay for it. Every output element is accumulated in the same
/// order either way, so thread count never changes a single bit.
fn split_rows(total_flops: usize) -> bool {
    total_flops >= 250_000 && rayon::current_num_threads() > 1
}

/// `a (r x d) * b^T (k x d) -> r x k`. The natural layout for `x * W^T` with
/// weights stored `(out, in)`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims");
    let mut out = Tensor::zeros(a.rows, b.rows);
    let fill = |i: usize, or: &mut [f64]| {
        let ar = a.row_slice(i);
        for (j, oj) in or.iter_mut().enumerate() {
            *oj = dot(ar, b.row_slice(j));
        }
    };
    if b.rows > 0 && split_rows(a.rows * a.cols * b.rows) {
        out.data
            .par_chunks_mut(b.rows)
            .enumerate()
            .for_each(|(i, or)| fill(i, or));
    } else {
        for i in 0..a.rows {
            fill(i, &mut out.data[i * b.rows..(i + 1) * b.rows]);
        }
    }
    out
}

/// Dot product with four running sums so the loop vectorizes. The grouping
/// is fixed, so results are run-to-run identical.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sums = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..4 {
            sums[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (sums[0] + sums[1]) + (sums[2] + sums[3]) + tail
}

/// `a (r x d) * b (d x c) -> r x c`.
pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dims");
    let mut out = Tensor::zeros(a.rows, b.cols);
    let fill = |i: usize, or: &mut [f64]| {
        let ar = a.row_slice(i);
        for (k, &aik) in ar.iter().enumerate() {
            let br = b.row_slice(k);
            for (oj, &bj) in or.iter_mut().zip(br) {
                *oj += aik * bj;
            }
        }
    };
    if b.cols > 0 && split_rows(a.rows * a.cols * b.cols) {
        out.data
            .par_chunks_mut(b.cols)
            .enumerate()
            .for_each(|(i, or)| fill(i, or));
    } else {
        for i in 0..a.rows {
            fill(i, &mut out.data[i * b.cols..(i + 1) * b.cols]);
        }
    }
    out
}

/// `a^T (r x d) * b (r x c) -> d x c`. Used for weight gradients.
/// Both paths walk `i` in ascending order for each output row, so the
/// per-element rounding matches exactly.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_tn outer dims");
    let mut out = Tensor::zeros(a.cols, b.cols);
    if b.cols > 0 && split_rows(a.rows * a.cols * b.cols) {
        out.data
            .par_chunks_mut(b.cols)
            .enumerate()
            .for_each(|(k, or)| {
                for i in 0..a.rows {
                    let aik = a.data[i * a.cols + k];
                    let br = b.row_slice(i);
                    for (oj, &bj) in or.iter_mut().zip(br) {
                        *oj += aik * bj;
                    }
                }
            });
    } else {
        for i in 0..a.rows {
            let ar = a.row_slice(i);
            let br = b.row_slice(i);
            for (k, &aik) in ar.iter().enumerate() {
                let or = &mut out.data[k * b.cols..(k + 1) * b.cols];
                for j in 0..b.cols {
                    or[j] += aik * br[j];
                }
            }
        }
    }
    out
}

/// Row-wise softmax in place, with max subtraction for stability.
pub fn softmax_rows_inplace(t: &mut Tensor) {
    for r in 0..t.rows {
        let row = &mut t.data[r * t.cols..(r + 1) * t.cols];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut t = Tensor::row(logits);
    softmax_rows_inplace(&mut t);
    t.data
}
