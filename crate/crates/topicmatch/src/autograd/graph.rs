//! Eager tape for reverse-mode differentiation.
//!
//! Every op computes its value immediately and records a backward closure.
//! `backward` walks the tape once in reverse; gradient accumulation is a
//! single-writer ordered sum, so results are bit-reproducible.

use std::cell::{Ref, RefCell};

use super::flops::FlopCounter;
use super::tensor::{gemm, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn = Box<dyn Fn(&[Tensor], &[bool], &Tensor, &mut [Option<Tensor>])>;

/// Per-channel batch statistics captured by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph {
    vals: RefCell<Vec<Tensor>>,
    needs: RefCell<Vec<bool>>,
    backs: RefCell<Vec<Option<BackFn>>>,
    grads: RefCell<Option<Vec<Option<Tensor>>>>,
    flops: RefCell<FlopCounter>,
}

pub(crate) fn accumulate(grads: &mut [Option<Tensor>], needs: &[bool], idx: usize, t: Tensor) {
    if !needs[idx] {
        return;
    }
    match &mut grads[idx] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

use accumulate as acc;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            vals: RefCell::new(Vec::new()),
            needs: RefCell::new(Vec::new()),
            backs: RefCell::new(Vec::new()),
            grads: RefCell::new(None),
            flops: RefCell::new(FlopCounter::new()),
        }
    }

    fn push(&self, value: Tensor, needs: bool, back: Option<BackFn>) -> Var {
        let mut vals = self.vals.borrow_mut();
        let idx = vals.len();
        vals.push(value);
        self.needs.borrow_mut().push(needs);
        self.backs.borrow_mut().push(back);
        Var(idx)
    }

    pub(crate) fn push_node(&self, value: Tensor, needs: bool, back: BackFn) -> Var {
        self.push(value, needs, Some(back))
    }

    pub fn len(&self) -> usize {
        self.vals.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.vals.borrow(), |vals| &vals[v.0])
    }

    pub fn value_clone(&self, v: Var) -> Tensor {
        self.vals.borrow()[v.0].clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.vals.borrow()[v.0].shape().to_vec()
    }

    pub(crate) fn var_needs_grad(&self, v: Var) -> bool {
        self.needs.borrow()[v.0]
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops.borrow().clone()
    }

    pub fn count_flops(&self, label: &str, macs: u64) {
        self.flops.borrow_mut().add(label, macs);
    }

    // ---- leaves ----

    /// Differentiable leaf (a parameter or a grad-check input).
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, None)
    }

    /// Non-differentiable constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, false, None)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            vals[a.0].zip(&vals[b.0], |x, y| x + y)
        };
        let needs = self.var_needs_grad(a) || self.var_needs_grad(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                acc(grads, needs, ai, g.clone());
                acc(grads, needs, bi, g.clone());
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            vals[a.0].zip(&vals[b.0], |x, y| x - y)
        };
        let needs = self.var_needs_grad(a) || self.var_needs_grad(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                acc(grads, needs, ai, g.clone());
                acc(grads, needs, bi, g.map(|v| -v));
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            vals[a.0].zip(&vals[b.0], |x, y| x * y)
        };
        let needs = self.var_needs_grad(a) || self.var_needs_grad(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(grads, needs, ai, g.zip(&vals[bi], |gv, bv| gv * bv));
                acc(grads, needs, bi, g.zip(&vals[ai], |gv, av| gv * av));
            })),
        )
    }

    /// `k * x + c` applied elementwise with constant coefficients.
    pub fn affine(&self, x: Var, k: f64, c: f64) -> Var {
        let out = self.vals.borrow()[x.0].map(|v| k * v + c);
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                acc(grads, needs, xi, g.map(|v| k * v));
            })),
        )
    }

    pub fn scale(&self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    /// Identity forward; gradient does not flow past this node.
    pub fn stop_grad(&self, x: Var) -> Var {
        let out = self.vals.borrow()[x.0].clone();
        self.push(out, false, None)
    }

    // ---- activations ----

    pub fn relu(&self, x: Var) -> Var {
        let out = self.vals.borrow()[x.0].map(|v| v.max(0.0));
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(grads, needs, xi, g.zip(&vals[xi], |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            })),
        )
    }

    /// Tanh-form GELU.
    pub fn gelu(&self, x: Var) -> Var {
        const A: f64 = 0.7978845608028654; // sqrt(2/pi)
        const B: f64 = 0.044715;
        let out = self.vals.borrow()[x.0].map(|v| {
            let u = A * (v + B * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(
                    grads,
                    needs,
                    xi,
                    g.zip(&vals[xi], |gv, v| {
                        let u = A * (v + B * v * v * v);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        gv * (0.5 * (1.0 + t) + 0.5 * v * sech2 * A * (1.0 + 3.0 * B * v * v))
                    }),
                );
            })),
        )
    }

    /// `elu(x) + 1`: strictly positive feature map used by linear attention.
    pub fn elu1(&self, x: Var) -> Var {
        let out = self.vals.borrow()[x.0].map(|v| if v > 0.0 { v + 1.0 } else { v.exp() });
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(
                    grads,
                    needs,
                    xi,
                    g.zip(&vals[xi], |gv, xv| if xv > 0.0 { gv } else { gv * xv.exp() }),
                );
            })),
        )
    }

    // ---- reductions ----

    pub fn sum(&self, x: Var) -> Var {
        let total: f64 = self.vals.borrow()[x.0].data().iter().sum();
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            Tensor::scalar(total),
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let gv = g.item();
                acc(grads, needs, xi, Tensor::full(vals[xi].shape(), gv));
            })),
        )
    }

    /// Column means of a rank-2 tensor: `[n, d] -> [d]`.
    pub fn col_mean(&self, x: Var) -> Var {
        let (n, d, out) = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let mut out = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    out[j] += vals[x.0].data()[i * d + j];
                }
            }
            for v in out.iter_mut() {
                *v /= n as f64;
            }
            (n, d, Tensor::new(vec![d], out))
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = g.data()[j] / n as f64;
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    /// Column sums of a rank-2 tensor: `[n, d] -> [d]`.
    pub fn col_sum(&self, x: Var) -> Var {
        let (n, d, out) = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let mut out = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    out[j] += vals[x.0].data()[i * d + j];
                }
            }
            (n, d, Tensor::new(vec![d], out))
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = g.data()[j];
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    // ---- shape ----

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Var {
        let out = self.vals.borrow()[x.0].reshaped(shape);
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(grads, needs, xi, g.reshaped(vals[xi].shape().to_vec()));
            })),
        )
    }

    pub fn transpose2d(&self, x: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (r, c) = vals[x.0].dims2();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = vals[x.0].data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (r, c) = vals[xi].dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g.data()[j * r + i];
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![r, c], dx));
            })),
        )
    }

    // ---- linear algebra ----

    /// `op(a) * op(b)` with optional transposes; `label` keys the FLOP entry.
    pub fn matmul_flags(&self, a: Var, ta: bool, b: Var, tb: bool, label: &str) -> Var {
        let out = {
            let vals = self.vals.borrow();
            gemm(&vals[a.0], ta, &vals[b.0], tb)
        };
        {
            let vals = self.vals.borrow();
            let (a0, a1) = vals[a.0].dims2();
            let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
            let (n0, n1) = vals[b.0].dims2();
            let n = if tb { n0 } else { n1 };
            self.flops.borrow_mut().add(label, (m * k * n) as u64);
        }
        let needs = self.var_needs_grad(a) || self.var_needs_grad(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (a, b) = (&vals[ai], &vals[bi]);
                let (da, db) = match (ta, tb) {
                    (false, false) => (gemm(g, false, b, true), gemm(a, true, g, false)),
                    (true, false) => (gemm(b, false, g, true), gemm(a, false, g, false)),
                    (false, true) => (gemm(g, false, b, false), gemm(g, true, a, false)),
                    (true, true) => (gemm(b, true, g, true), gemm(g, true, a, true)),
                };
                acc(grads, needs, ai, da);
                acc(grads, needs, bi, db);
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var, label: &str) -> Var {
        self.matmul_flags(a, false, b, false, label)
    }

    /// Adds a rank-1 bias to every row of a rank-2 tensor.
    pub fn add_bias_rows(&self, x: Var, bias: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            assert_eq!(vals[bias.0].shape(), [d], "bias width");
            let mut data = vals[x.0].data().to_vec();
            for i in 0..n {
                for j in 0..d {
                    data[i * d + j] += vals[bias.0].data()[j];
                }
            }
            Tensor::new(vec![n, d], data)
        };
        let needs = self.var_needs_grad(x) || self.var_needs_grad(bias);
        let (xi, bidx) = (x.0, bias.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(grads, needs, xi, g.clone());
                let (n, d) = vals[xi].dims2();
                let mut db = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        db[j] += g.data()[i * d + j];
                    }
                }
                acc(grads, needs, bidx, Tensor::new(vec![d], db));
            })),
        )
    }

    /// Per-row inner products of two equally shaped rank-2 tensors: `-> [n]`.
    pub fn rowwise_dot(&self, a: Var, b: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[a.0].dims2();
            assert_eq!(vals[b.0].dims2(), (n, d), "rowwise_dot shapes");
            let mut o = vec![0.0; n];
            for i in 0..n {
                for j in 0..d {
                    o[i] += vals[a.0].data()[i * d + j] * vals[b.0].data()[i * d + j];
                }
            }
            self.flops.borrow_mut().add("rowwise_dot", (n * d) as u64);
            Tensor::new(vec![n], o)
        };
        let needs = self.var_needs_grad(a) || self.var_needs_grad(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[ai].dims2();
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; n * d];
                for i in 0..n {
                    let gv = g.data()[i];
                    for j in 0..d {
                        da[i * d + j] = gv * vals[bi].data()[i * d + j];
                        db[i * d + j] = gv * vals[ai].data()[i * d + j];
                    }
                }
                acc(grads, needs, ai, Tensor::new(vec![n, d], da));
                acc(grads, needs, bi, Tensor::new(vec![n, d], db));
            })),
        )
    }

    /// Divides every row of `num` by the matching entry of rank-1 `den`.
    pub fn div_by_col(&self, num: Var, den: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[num.0].dims2();
            assert_eq!(vals[den.0].shape(), [n], "den length");
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                let dv = vals[den.0].data()[i];
                for j in 0..d {
                    data[i * d + j] = vals[num.0].data()[i * d + j] / dv;
                }
            }
            Tensor::new(vec![n, d], data)
        };
        let needs = self.var_needs_grad(num) || self.var_needs_grad(den);
        let (ni, di) = (num.0, den.0);
        let out_idx = self.len();
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[ni].dims2();
                let mut dnum = vec![0.0; n * d];
                let mut dden = vec![0.0; n];
                for i in 0..n {
                    let dv = vals[di].data()[i];
                    for j in 0..d {
                        let gv = g.data()[i * d + j];
                        dnum[i * d + j] = gv / dv;
                        dden[i] -= gv * vals[out_idx].data()[i * d + j] / dv;
                    }
                }
                acc(grads, needs, ni, Tensor::new(vec![n, d], dnum));
                acc(grads, needs, di, Tensor::new(vec![n], dden));
            })),
        )
    }

    // ---- softmax and logs ----

    pub fn softmax_rows(&self, x: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let mut data = vec![0.0; n * d];
            for i in 0..n {
                let row = &vals[x.0].data()[i * d..(i + 1) * d];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..d {
                    let e = (row[j] - m).exp();
                    data[i * d + j] = e;
                    z += e;
                }
                for j in 0..d {
                    data[i * d + j] /= z;
                }
            }
            self.flops.borrow_mut().add("softmax", (n * d) as u64);
            Tensor::new(vec![n, d], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        let out_idx = self.len();
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let y = &vals[out_idx];
                let (n, d) = y.dims2();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += g.data()[i * d + j] * y.data()[i * d + j];
                    }
                    for j in 0..d {
                        dx[i * d + j] = y.data()[i * d + j] * (g.data()[i * d + j] - dot);
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    pub fn softmax_cols(&self, x: Var) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let mut data = vec![0.0; n * d];
            for j in 0..d {
                let mut m = f64::NEG_INFINITY;
                for i in 0..n {
                    m = m.max(vals[x.0].data()[i * d + j]);
                }
                let mut z = 0.0;
                for i in 0..n {
                    let e = (vals[x.0].data()[i * d + j] - m).exp();
                    data[i * d + j] = e;
                    z += e;
                }
                for i in 0..n {
                    data[i * d + j] /= z;
                }
            }
            self.flops.borrow_mut().add("softmax", (n * d) as u64);
            Tensor::new(vec![n, d], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        let out_idx = self.len();
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let y = &vals[out_idx];
                let (n, d) = y.dims2();
                let mut dx = vec![0.0; n * d];
                for j in 0..d {
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += g.data()[i * d + j] * y.data()[i * d + j];
                    }
                    for i in 0..n {
                        dx[i * d + j] = y.data()[i * d + j] * (g.data()[i * d + j] - dot);
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    /// `ln(max(x, eps))`; gradient is zero where the clamp engages.
    pub fn log_clamped(&self, x: Var, eps: f64) -> Var {
        let out = self.vals.borrow()[x.0].map(|v| v.max(eps).ln());
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                acc(
                    grads,
                    needs,
                    xi,
                    g.zip(&vals[xi], |gv, xv| if xv >= eps { gv / xv } else { 0.0 }),
                );
            })),
        )
    }

    // ---- gather / scatter / concat ----

    /// Select rows of a rank-2 tensor: `[n, d] -> [idx.len(), d]`.
    pub fn gather_rows(&self, x: Var, idx: Vec<usize>) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in &idx {
                assert!(i < n, "gather_rows index {i} out of {n}");
                data.extend_from_slice(&vals[x.0].data()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![idx.len(), d], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[xi].dims2();
                let mut dx = vec![0.0; n * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] += g.data()[r * d + j];
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    /// Contiguous column range of a rank-2 tensor.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            assert!(start + len <= d, "slice_cols {start}+{len} out of {d}");
            let mut data = Vec::with_capacity(n * len);
            for i in 0..n {
                data.extend_from_slice(&vals[x.0].data()[i * d + start..i * d + start + len]);
            }
            Tensor::new(vec![n, len], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[xi].dims2();
                let mut dx = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..len {
                        dx[i * d + start + j] = g.data()[i * len + j];
                    }
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (n, widths, out) = {
            let vals = self.vals.borrow();
            let (n, _) = vals[parts[0].0].dims2();
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| {
                    let (pn, pd) = vals[p.0].dims2();
                    assert_eq!(pn, n, "concat_cols row counts");
                    pd
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut data = vec![0.0; n * total];
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                for i in 0..n {
                    data[i * total + off..i * total + off + w]
                        .copy_from_slice(&vals[p.0].data()[i * w..(i + 1) * w]);
                }
                off += w;
            }
            (n, widths, Tensor::new(vec![n, total], data))
        };
        let needs = parts.iter().any(|p| self.var_needs_grad(*p));
        let idxs: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&pi, &w) in idxs.iter().zip(&widths) {
                    let mut dp = vec![0.0; n * w];
                    for i in 0..n {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    acc(grads, needs, pi, Tensor::new(vec![n, w], dp));
                    off += w;
                }
            })),
        )
    }

    /// Pick individual entries of a rank-2 tensor: `-> [pairs.len()]`.
    pub fn gather_entries(&self, x: Var, pairs: Vec<(usize, usize)>) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let (n, d) = vals[x.0].dims2();
            let data: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| {
                    assert!(i < n && j < d, "gather_entries ({i},{j}) out of ({n},{d})");
                    vals[x.0].data()[i * d + j]
                })
                .collect();
            Tensor::new(vec![pairs.len()], data)
        };
        let needs = self.var_needs_grad(x);
        let xi = x.0;
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                let (n, d) = vals[xi].dims2();
                let mut dx = vec![0.0; n * d];
                for (r, &(i, j)) in pairs.iter().enumerate() {
                    dx[i * d + j] += g.data()[r];
                }
                acc(grads, needs, xi, Tensor::new(vec![n, d], dx));
            })),
        )
    }

    /// Collect scalar vars into a rank-1 vector.
    pub fn stack_scalars(&self, parts: &[Var]) -> Var {
        let out = {
            let vals = self.vals.borrow();
            let data: Vec<f64> = parts
                .iter()
                .map(|p| {
                    assert_eq!(vals[p.0].len(), 1, "stack_scalars expects scalars");
                    vals[p.0].data()[0]
                })
                .collect();
            Tensor::new(vec![parts.len()], data)
        };
        let needs = parts.iter().any(|p| self.var_needs_grad(*p));
        let idxs: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, needs, g, grads| {
                for (r, &pi) in idxs.iter().enumerate() {
                    let shape = vals[pi].shape().to_vec();
                    acc(grads, needs, pi, Tensor::new(shape, vec![g.data()[r]]));
                }
            })),
        )
    }

    /// Elementwise sum of equally shaped vars.
    pub fn add_n(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let out = {
            let vals = self.vals.borrow();
            let mut t = vals[parts[0].0].clone();
            for p in &parts[1..] {
                t.add_assign(&vals[p.0]);
            }
            t
        };
        let needs = parts.iter().any(|p| self.var_needs_grad(*p));
        let idxs: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, needs, g, grads| {
                for &pi in &idxs {
                    acc(grads, needs, pi, g.clone());
                }
            })),
        )
    }

    // ---- backward ----

    pub fn backward(&self, loss: Var) {
        let vals = self.vals.borrow();
        let needs = self.needs.borrow();
        let backs = self.backs.borrow();
        assert_eq!(vals[loss.0].len(), 1, "backward target must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; vals.len()];
        grads[loss.0] = Some(Tensor::new(vals[loss.0].shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            if !needs[i] {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(f) = &backs[i] {
                f(&vals, &needs, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        drop(vals);
        drop(needs);
        drop(backs);
        *self.grads.borrow_mut() = Some(grads);
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.borrow().as_ref().and_then(|g| g[v.0].clone())
    }
}
