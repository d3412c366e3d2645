//! Dense 2-d `f64` tensors with a reverse-mode gradient tape.
//!
//! Every value in the toolkit is a row-major matrix; vectors are `1 x n` or
//! `n x 1` and scalars are `1 x 1`. A [`Tensor`] is a cheap-to-clone handle;
//! operations go through a [`Tape`], which records enough to replay the
//! computation backwards. Calling [`Tape::backward`] on a scalar loss
//! accumulates gradients into every `requires_grad` leaf that fed it.
//!
//! The tape is rebuilt from scratch for every training step and is strictly
//! single-threaded. Tensors that never require gradients (masks, constants)
//! participate in the forward pass but are skipped during accumulation.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shared handle to a matrix value, its shape, and (optionally) its gradient.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

struct TensorData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    /// Build a `rows x cols` tensor from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                rows,
                cols,
                data,
                grad: None,
                requires_grad: false,
            })),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::new(rows, cols, vec![0.0; rows * cols]).expect("zeros shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(1, 1, vec![v]).expect("scalar shape")
    }

    /// Mark this tensor as a trainable leaf. Allocates a zeroed gradient
    /// buffer, so a leaf that never participates in a backward pass reads
    /// back an all-zero gradient.
    pub fn requires_grad(self) -> Tensor {
        {
            let mut d = self.inner.borrow_mut();
            let n = d.data.len();
            d.requires_grad = true;
            if d.grad.is_none() {
                d.grad = Some(vec![0.0; n]);
            }
        }
        self
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().cols
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.inner.borrow();
        (d.rows, d.cols)
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Borrow the underlying row-major values.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        debug_assert_eq!(d.data.len(), 1, "item() on non-scalar");
        d.data[0]
    }

    pub fn value_at(&self, r: usize, c: usize) -> f64 {
        let d = self.inner.borrow();
        d.data[r * d.cols + c]
    }

    /// Copy of the accumulated gradient, if one exists.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    /// Reset the gradient buffer to zero (allocating it if needed).
    pub fn zero_grad(&self) {
        let mut d = self.inner.borrow_mut();
        let n = d.data.len();
        match d.grad.as_mut() {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => d.grad = Some(vec![0.0; n]),
        }
    }

    /// Mutate the stored values in place (optimizer updates, finite-difference
    /// probes). The shape is fixed; only values may change.
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        let mut d = self.inner.borrow_mut();
        f(&mut d.data)
    }

    pub fn with_grad_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        let mut d = self.inner.borrow_mut();
        let n = d.data.len();
        if d.grad.is_none() {
            d.grad = Some(vec![0.0; n]);
        }
        f(d.grad.as_mut().unwrap())
    }

    /// A grad-less copy of this tensor's current value. Gradients never flow
    /// through the result.
    pub fn detach(&self) -> Tensor {
        let d = self.inner.borrow();
        Tensor::new(d.rows, d.cols, d.data.clone()).expect("detach shape")
    }

    fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        if let Some(g) = d.grad.as_mut() {
            debug_assert_eq!(g.len(), delta.len());
            for (gv, dv) in g.iter_mut().zip(delta) {
                *gv += dv;
            }
        }
    }

    /// Whether backward needs to produce a gradient for this tensor: either a
    /// trainable leaf or an intermediate created on a tape.
    fn wants_grad(&self) -> bool {
        self.inner.borrow().grad.is_some()
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.borrow();
        write!(f, "Tensor({}x{}, requires_grad={})", d.rows, d.cols, d.requires_grad)
    }
}

enum Op {
    MatMul { a: Tensor, b: Tensor },
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    Sigmoid { x: Tensor },
    Tanh { x: Tensor },
    Softmax { x: Tensor },
    // masked positions have output exactly 0, so backward only needs `out`
    MaskedSoftmax { x: Tensor },
    Concat { xs: Vec<Tensor>, axis: usize },
    Narrow { x: Tensor, axis: usize, start: usize },
    Rows { x: Tensor, ids: Vec<usize> },
    TileRows { x: Tensor, k: usize },
    RepeatRows { x: Tensor, k: usize },
    SumTiles { x: Tensor, k: usize },
    Transpose { x: Tensor },
    Reshape { x: Tensor },
    Sum { x: Tensor },
    Dropout { x: Tensor, mask: Vec<f64> },
    CrossEntropy { logits: Tensor, targets: Vec<usize> },
}

struct Step {
    op: Op,
    out: Tensor,
}

/// Records operations in execution order so a scalar loss can be
/// differentiated with one reverse sweep.
pub struct Tape {
    steps: Vec<Step>,
    enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn row_major_transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// C[m,n] += A[m,k] * B[k,n]
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// C[m,k] += A[m,n] * B^T where B is [k,n]
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (p, cv) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *cv += s;
        }
    }
}

/// C[k,n] += A^T * B where A is [m,k], B is [m,n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { steps: Vec::new(), enabled: true }
    }

    /// A tape that computes forward values but records nothing; `backward` on
    /// it is useless. Used for inference.
    pub fn no_grad() -> Tape {
        Tape { steps: Vec::new(), enabled: false }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn record(&mut self, op: Op, out: &Tensor) {
        if self.enabled {
            self.steps.push(Step { op, out: out.clone() });
        }
    }

    fn fresh(&self, rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                rows,
                cols,
                data,
                grad: None,
                requires_grad: false,
            })),
        }
    }

    /// a[m,k] * b[k,n] -> [m,n]
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, ka) = a.shape();
        let (kb, n) = b.shape();
        if ka != kb {
            return Err(Error::shape("matmul", format!("{}x{} * {}x{}", m, ka, kb, n)));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(&a.data(), &b.data(), m, ka, n, &mut out);
        let t = self.fresh(m, n, out);
        self.record(Op::MatMul { a: a.clone(), b: b.clone() }, &t);
        Ok(t)
    }

    /// Elementwise a + b; b may also be a `1 x n` row broadcast over a's rows.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        let data = if (ar, ac) == (br, bc) {
            a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect()
        } else if br == 1 && bc == ac {
            let ad = a.data();
            let bd = b.data();
            let mut out = Vec::with_capacity(ar * ac);
            for r in 0..ar {
                for c in 0..ac {
                    out.push(ad[r * ac + c] + bd[c]);
                }
            }
            out
        } else {
            return Err(Error::shape("add", format!("{}x{} + {}x{}", ar, ac, br, bc)));
        };
        let t = self.fresh(ar, ac, data);
        self.record(Op::Add { a: a.clone(), b: b.clone() }, &t);
        Ok(t)
    }

    /// Elementwise a - b (same shape).
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        if (ar, ac) != b.shape() {
            let (br, bc) = b.shape();
            return Err(Error::shape("sub", format!("{}x{} - {}x{}", ar, ac, br, bc)));
        }
        let data = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
        let t = self.fresh(ar, ac, data);
        self.record(Op::Sub { a: a.clone(), b: b.clone() }, &t);
        Ok(t)
    }

    /// Elementwise a * b; b may be `r x 1` (per-row scale) or `1 x c`
    /// (per-column scale).
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        let data = if (ar, ac) == (br, bc) {
            a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect()
        } else if br == ar && bc == 1 {
            let ad = a.data();
            let bd = b.data();
            let mut out = Vec::with_capacity(ar * ac);
            for r in 0..ar {
                let s = bd[r];
                for c in 0..ac {
                    out.push(ad[r * ac + c] * s);
                }
            }
            out
        } else if br == 1 && bc == ac {
            let ad = a.data();
            let bd = b.data();
            let mut out = Vec::with_capacity(ar * ac);
            for r in 0..ar {
                for c in 0..ac {
                    out.push(ad[r * ac + c] * bd[c]);
                }
            }
            out
        } else {
            return Err(Error::shape("mul", format!("{}x{} * {}x{}", ar, ac, br, bc)));
        };
        let t = self.fresh(ar, ac, data);
        self.record(Op::Mul { a: a.clone(), b: b.clone() }, &t);
        Ok(t)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.shape();
        let data = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let t = self.fresh(r, c, data);
        self.record(Op::Sigmoid { x: x.clone() }, &t);
        Ok(t)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.shape();
        let data = x.data().iter().map(|&v| v.tanh()).collect();
        let t = self.fresh(r, c, data);
        self.record(Op::Tanh { x: x.clone() }, &t);
        Ok(t)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.shape();
        if c == 0 {
            return Err(Error::shape("softmax", "zero columns".to_string()));
        }
        check_finite("softmax", &x.data())?;
        let xd = x.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&xd[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        drop(xd);
        let t = self.fresh(r, c, out);
        self.record(Op::Softmax { x: x.clone() }, &t);
        Ok(t)
    }

    /// Row-wise softmax restricted to positions where `mask > 0`. Masked
    /// positions come out exactly 0. A fully masked row is an error.
    pub fn masked_softmax(&mut self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (r, c) = x.shape();
        if (r, c) != mask.shape() {
            let (mr, mc) = mask.shape();
            return Err(Error::shape(
                "masked_softmax",
                format!("{}x{} with mask {}x{}", r, c, mr, mc),
            ));
        }
        check_finite("masked_softmax", &x.data())?;
        let xd = x.data();
        let md = mask.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let xr = &xd[i * c..(i + 1) * c];
            let mr = &md[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (v, m) in xr.iter().zip(mr) {
                if *m > 0.0 && *v > max {
                    max = *v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::usage(format!(
                    "masked_softmax: row {} has no unmasked position",
                    i
                )));
            }
            let mut z = 0.0;
            for j in 0..c {
                if mr[j] > 0.0 {
                    let e = (xr[j] - max).exp();
                    out[i * c + j] = e;
                    z += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        drop(xd);
        drop(md);
        let t = self.fresh(r, c, out);
        self.record(Op::MaskedSoftmax { x: x.clone() }, &t);
        Ok(t)
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = widen columns).
    pub fn concat(&mut self, xs: &[Tensor], axis: usize) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::usage("concat: no inputs"));
        }
        if axis > 1 {
            return Err(Error::shape("concat", format!("axis {} out of range", axis)));
        }
        let (r0, c0) = xs[0].shape();
        match axis {
            0 => {
                let mut rows = 0;
                for x in xs {
                    let (r, c) = x.shape();
                    if c != c0 {
                        return Err(Error::shape(
                            "concat",
                            format!("axis 0 needs equal cols, got {} and {}", c0, c),
                        ));
                    }
                    rows += r;
                }
                let mut data = Vec::with_capacity(rows * c0);
                for x in xs {
                    data.extend_from_slice(&x.data());
                }
                let t = self.fresh(rows, c0, data);
                self.record(Op::Concat { xs: xs.to_vec(), axis }, &t);
                Ok(t)
            }
            _ => {
                let mut cols = 0;
                for x in xs {
                    let (r, c) = x.shape();
                    if r != r0 {
                        return Err(Error::shape(
                            "concat",
                            format!("axis 1 needs equal rows, got {} and {}", r0, r),
                        ));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for x in xs {
                        let xc = x.cols();
                        let xd = x.data();
                        data.extend_from_slice(&xd[r * xc..(r + 1) * xc]);
                    }
                }
                let t = self.fresh(r0, cols, data);
                self.record(Op::Concat { xs: xs.to_vec(), axis }, &t);
                Ok(t)
            }
        }
    }

    /// Contiguous slice of `len` rows (axis 0) or columns (axis 1) starting
    /// at `start`.
    pub fn narrow(&mut self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = x.shape();
        let bound = if axis == 0 { r } else { c };
        if axis > 1 || start + len > bound {
            return Err(Error::shape(
                "narrow",
                format!("axis {} [{}, {}) of {}x{}", axis, start, start + len, r, c),
            ));
        }
        let xd = x.data();
        let (or, oc, data) = if axis == 0 {
            (len, c, xd[start * c..(start + len) * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&xd[i * c + start..i * c + start + len]);
            }
            (r, len, data)
        };
        drop(xd);
        let t = self.fresh(or, oc, data);
        self.record(Op::Narrow { x: x.clone(), axis, start }, &t);
        Ok(t)
    }

    /// Gather rows of `x` by index; duplicates allowed. Also serves as
    /// embedding lookup. Gradient scatter-adds into the source rows.
    pub fn rows(&mut self, x: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (r, c) = x.shape();
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::usage(format!("rows: id {} out of range (rows {})", bad, r)));
        }
        let xd = x.data();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(&xd[i * c..(i + 1) * c]);
        }
        drop(xd);
        let t = self.fresh(ids.len(), c, data);
        self.record(Op::Rows { x: x.clone(), ids: ids.to_vec() }, &t);
        Ok(t)
    }

    /// Stack `k` copies of `x` vertically: out has `k * rows(x)` rows.
    pub fn tile_rows(&mut self, x: &Tensor, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Err(Error::usage("tile_rows: k must be >= 1"));
        }
        let (r, c) = x.shape();
        let xd = x.data();
        let mut data = Vec::with_capacity(k * r * c);
        for _ in 0..k {
            data.extend_from_slice(&xd);
        }
        drop(xd);
        let t = self.fresh(k * r, c, data);
        self.record(Op::TileRows { x: x.clone(), k }, &t);
        Ok(t)
    }

    /// Repeat each row of `x` `k` consecutive times: row `i` of `x` becomes
    /// rows `i*k .. (i+1)*k` of the output.
    pub fn repeat_rows(&mut self, x: &Tensor, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Err(Error::usage("repeat_rows: k must be >= 1"));
        }
        let (r, c) = x.shape();
        let xd = x.data();
        let mut data = Vec::with_capacity(r * k * c);
        for i in 0..r {
            for _ in 0..k {
                data.extend_from_slice(&xd[i * c..(i + 1) * c]);
            }
        }
        drop(xd);
        let t = self.fresh(r * k, c, data);
        self.record(Op::RepeatRows { x: x.clone(), k }, &t);
        Ok(t)
    }

    /// Inverse of [`Tape::tile_rows`]: fold a `k*r x c` tensor back to
    /// `r x c` by summing the `k` stacked blocks.
    pub fn sum_tiles(&mut self, x: &Tensor, out_rows: usize) -> Result<Tensor> {
        let (r, c) = x.shape();
        if out_rows == 0 || r % out_rows != 0 {
            return Err(Error::shape(
                "sum_tiles",
                format!("{} rows not divisible into blocks of {}", r, out_rows),
            ));
        }
        let k = r / out_rows;
        let xd = x.data();
        let mut data = vec![0.0; out_rows * c];
        for t in 0..k {
            let block = &xd[t * out_rows * c..(t + 1) * out_rows * c];
            for (o, v) in data.iter_mut().zip(block) {
                *o += v;
            }
        }
        drop(xd);
        let t = self.fresh(out_rows, c, data);
        self.record(Op::SumTiles { x: x.clone(), k }, &t);
        Ok(t)
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = x.shape();
        let data = row_major_transpose(&x.data(), r, c);
        let t = self.fresh(c, r, data);
        self.record(Op::Transpose { x: x.clone() }, &t);
        Ok(t)
    }

    /// Reinterpret the row-major buffer with a new shape of equal size.
    pub fn reshape(&mut self, x: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != x.numel() {
            let (r, c) = x.shape();
            return Err(Error::shape(
                "reshape",
                format!("{}x{} -> {}x{}", r, c, rows, cols),
            ));
        }
        let t = self.fresh(rows, cols, x.to_vec());
        self.record(Op::Reshape { x: x.clone() }, &t);
        Ok(t)
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        let s: f64 = x.data().iter().sum();
        let t = self.fresh(1, 1, vec![s]);
        self.record(Op::Sum { x: x.clone() }, &t);
        Ok(t)
    }

    /// Inverted dropout: keep with probability `1 - rate` and scale kept
    /// values by `1/(1-rate)`. Rate 0 is the identity (no tape node).
    pub fn dropout(&mut self, x: &Tensor, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::usage(format!("dropout: rate {} outside [0, 1)", rate)));
        }
        if rate == 0.0 {
            return Ok(x.clone());
        }
        let (r, c) = x.shape();
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| {
                // uniform in [0,1) from 53 random bits
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                if u < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = self.fresh(r, c, data);
        self.record(Op::Dropout { x: x.clone(), mask }, &t);
        Ok(t)
    }

    /// Per-row negative log-likelihood of the target index under a softmax of
    /// the row: out[i] = logsumexp(logits[i]) - logits[i][targets[i]].
    /// Returns an `m x 1` tensor.
    pub fn cross_entropy(&mut self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        let (r, c) = logits.shape();
        if targets.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), r),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::usage(format!(
                "cross_entropy: target id {} out of range (classes {})",
                bad, c
            )));
        }
        check_finite("cross_entropy", &logits.data())?;
        let ld = logits.data();
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let row = &ld[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            out.push(lse - row[targets[i]]);
        }
        drop(ld);
        let t = self.fresh(r, 1, out);
        self.record(Op::CrossEntropy { logits: logits.clone(), targets: targets.to_vec() }, &t);
        Ok(t)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// tensor that has a gradient buffer (trainable leaves keep theirs across
    /// calls; intermediates get a fresh one per sweep).
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            let (r, c) = loss.shape();
            return Err(Error::usage(format!("backward: loss must be scalar, got {}x{}", r, c)));
        }
        if !self.enabled {
            return Err(Error::usage("backward: tape was created with no_grad"));
        }
        // Fresh zero buffers for every intermediate produced on this tape.
        for step in &self.steps {
            let mut d = step.out.inner.borrow_mut();
            let n = d.data.len();
            d.grad = Some(vec![0.0; n]);
        }
        loss.with_grad_mut(|g| g[0] = 1.0);

        for step in self.steps.iter().rev() {
            let out_grad = match step.out.inner.borrow().grad.as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            step.op.backward(&step.out, &out_grad);
        }
        Ok(())
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        z += e;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl Op {
    fn backward(&self, out: &Tensor, g: &[f64]) {
        match self {
            Op::MatMul { a, b } => {
                let (m, k) = a.shape();
                let n = b.cols();
                if a.wants_grad() {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(g, &b.data(), m, n, k, &mut da);
                    a.accumulate_grad(&da);
                }
                if b.wants_grad() {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(&a.data(), g, m, k, n, &mut db);
                    b.accumulate_grad(&db);
                }
            }
            Op::Add { a, b } => {
                if a.wants_grad() {
                    a.accumulate_grad(g);
                }
                if b.wants_grad() {
                    let (ar, ac) = a.shape();
                    if b.rows() == ar {
                        b.accumulate_grad(g);
                    } else {
                        // bias row: sum over rows
                        let mut db = vec![0.0; ac];
                        for r in 0..ar {
                            for c in 0..ac {
                                db[c] += g[r * ac + c];
                            }
                        }
                        b.accumulate_grad(&db);
                    }
                }
            }
            Op::Sub { a, b } => {
                if a.wants_grad() {
                    a.accumulate_grad(g);
                }
                if b.wants_grad() {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            }
            Op::Mul { a, b } => {
                let (ar, ac) = a.shape();
                let (br, bc) = b.shape();
                if a.wants_grad() {
                    let bd = b.data();
                    let mut da = vec![0.0; ar * ac];
                    if (br, bc) == (ar, ac) {
                        for i in 0..ar * ac {
                            da[i] = g[i] * bd[i];
                        }
                    } else if bc == 1 {
                        for r in 0..ar {
                            for c in 0..ac {
                                da[r * ac + c] = g[r * ac + c] * bd[r];
                            }
                        }
                    } else {
                        for r in 0..ar {
                            for c in 0..ac {
                                da[r * ac + c] = g[r * ac + c] * bd[c];
                            }
                        }
                    }
                    drop(bd);
                    a.accumulate_grad(&da);
                }
                if b.wants_grad() {
                    let ad = a.data();
                    if (br, bc) == (ar, ac) {
                        let db: Vec<f64> = g.iter().zip(ad.iter()).map(|(gv, av)| gv * av).collect();
                        drop(ad);
                        b.accumulate_grad(&db);
                    } else if bc == 1 {
                        let mut db = vec![0.0; ar];
                        for r in 0..ar {
                            for c in 0..ac {
                                db[r] += g[r * ac + c] * ad[r * ac + c];
                            }
                        }
                        drop(ad);
                        b.accumulate_grad(&db);
                    } else {
                        let mut db = vec![0.0; ac];
                        for r in 0..ar {
                            for c in 0..ac {
                                db[c] += g[r * ac + c] * ad[r * ac + c];
                            }
                        }
                        drop(ad);
                        b.accumulate_grad(&db);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if x.wants_grad() {
                    let od = out.data();
                    let dx: Vec<f64> = g.iter().zip(od.iter()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    drop(od);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Tanh { x } => {
                if x.wants_grad() {
                    let od = out.data();
                    let dx: Vec<f64> = g.iter().zip(od.iter()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                    drop(od);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Softmax { x } | Op::MaskedSoftmax { x } => {
                // dx_j = s_j * (g_j - sum_i g_i s_i); masked entries have s == 0.
                if x.wants_grad() {
                    let (r, c) = x.shape();
                    let sd = out.data();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let srow = &sd[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let dot: f64 = srow.iter().zip(grow).map(|(s, gv)| s * gv).sum();
                        for j in 0..c {
                            dx[i * c + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    drop(sd);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Concat { xs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for x in xs {
                        let n = x.numel();
                        if x.wants_grad() {
                            x.accumulate_grad(&g[offset..offset + n]);
                        }
                        offset += n;
                    }
                } else {
                    let rows = xs[0].rows();
                    let total: usize = xs.iter().map(|x| x.cols()).sum();
                    let mut offset = 0;
                    for x in xs {
                        let c = x.cols();
                        if x.wants_grad() {
                            let mut dx = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                dx.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                            }
                            x.accumulate_grad(&dx);
                        }
                        offset += c;
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                if x.wants_grad() {
                    let (r, c) = x.shape();
                    let (or, oc) = out.shape();
                    let mut dx = vec![0.0; r * c];
                    if *axis == 0 {
                        dx[start * c..start * c + or * c].copy_from_slice(g);
                    } else {
                        for i in 0..r {
                            dx[i * c + start..i * c + start + oc].copy_from_slice(&g[i * oc..(i + 1) * oc]);
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            }
            Op::Rows { x, ids } => {
                if x.wants_grad() {
                    let (r, c) = x.shape();
                    let mut dx = vec![0.0; r * c];
                    for (j, &i) in ids.iter().enumerate() {
                        for k in 0..c {
                            dx[i * c + k] += g[j * c + k];
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            }
            Op::TileRows { x, k } => {
                if x.wants_grad() {
                    let n = x.numel();
                    let mut dx = vec![0.0; n];
                    for t in 0..*k {
                        for (d, v) in dx.iter_mut().zip(&g[t * n..(t + 1) * n]) {
                            *d += v;
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            }
            Op::RepeatRows { x, k } => {
                if x.wants_grad() {
                    let (r, c) = x.shape();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        for t in 0..*k {
                            let row = &g[(i * k + t) * c..(i * k + t + 1) * c];
                            for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                    x.accumulate_grad(&dx);
                }
            }
            Op::SumTiles { x, k } => {
                if x.wants_grad() {
                    let n = out.numel();
                    let mut dx = Vec::with_capacity(n * k);
                    for _ in 0..*k {
                        dx.extend_from_slice(g);
                    }
                    x.accumulate_grad(&dx);
                }
            }
            Op::Transpose { x } => {
                if x.wants_grad() {
                    let (or, oc) = out.shape();
                    let dx = row_major_transpose(g, or, oc);
                    x.accumulate_grad(&dx);
                }
            }
            Op::Reshape { x } => {
                if x.wants_grad() {
                    x.accumulate_grad(g);
                }
            }
            Op::Sum { x } => {
                if x.wants_grad() {
                    let dx = vec![g[0]; x.numel()];
                    x.accumulate_grad(&dx);
                }
            }
            Op::Dropout { x, mask } => {
                if x.wants_grad() {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    x.accumulate_grad(&dx);
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if logits.wants_grad() {
                    let (r, c) = logits.shape();
                    let ld = logits.data();
                    let mut dl = vec![0.0; r * c];
                    let mut probs = vec![0.0; c];
                    for i in 0..r {
                        softmax_row(&ld[i * c..(i + 1) * c], &mut probs);
                        let gi = g[i];
                        for j in 0..c {
                            dl[i * c + j] = gi * probs[j];
                        }
                        dl[i * c + targets[i]] -= gi;
                    }
                    drop(ld);
                    logits.accumulate_grad(&dl);
                }
            }
        }
    }
}

/// Max relative error between analytic gradients and central finite
/// differences over every coordinate of `params`.
///
/// `f` must rebuild the same deterministic scalar loss from the current
/// values of `params` each time it is called (disable dropout). The error for
/// a coordinate is |analytic - numeric| / max(1, |analytic| + |numeric|).
pub fn grad_check<F>(mut f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: FnMut(&mut Tape) -> Result<Tensor>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::usage(format!("grad_check: epsilon {} outside [1e-6, 1e-3]", epsilon)));
    }
    for p in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().expect("requires_grad param"))
        .collect();

    let mut worst: f64 = 0.0;
    for (p, pg) in params.iter().zip(&analytic) {
        for i in 0..p.numel() {
            let orig = p.with_data_mut(|d| {
                let v = d[i];
                d[i] = v + epsilon;
                v
            });
            let mut t = Tape::no_grad();
            let plus = f(&mut t)?.item();
            p.with_data_mut(|d| d[i] = orig - epsilon);
            let mut t = Tape::no_grad();
            let minus = f(&mut t)?.item();
            p.with_data_mut(|d| d[i] = orig);

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = pg[i];
            let err = (a - numeric).abs() / f64::max(1.0, a.abs() + numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
