//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are 2-D
//! row-major [`Tensor`]s; feature grids travel as `[H*W, C]` matrices.
//! [`Tape::backward`] walks the tape in reverse and returns one gradient
//! slot per node.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor {rows}x{cols} with {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
/// `a` is stored `a_rows`×`a_cols` and `b` is stored `b_rows`×`b_cols`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (m, k) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`,
    // whose lengths are checked above; `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Foreground threshold and label layout of the hinged classification loss.
#[derive(Debug, Clone)]
struct HingeLabel {
    label: Vec<f64>,
    fg_threshold: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Im2col3x3 { x: Var, h: usize, w: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows { a: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Softplus(Var),
    Sum(Var),
    HingeLoss { pred: Var, label: HingeLabel },
    GiouLoss { pred: Var, target: Vec<f64>, mask: Vec<bool>, count: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GIoU of two boxes that share an anchor point, given as ltrb distances,
/// together with its gradient with respect to the first box.
pub(crate) fn anchored_giou_with_grad(p: &[f64], g: &[f64]) -> (f64, [f64; 4]) {
    let (l, t, r, b) = (p[0], p[1], p[2], p[3]);
    let (lg, tg, rg, bg) = (g[0], g[1], g[2], g[3]);
    let iw_raw = l.min(lg) + r.min(rg);
    let ih_raw = t.min(tg) + b.min(bg);
    let iw = iw_raw.max(0.0);
    let ih = ih_raw.max(0.0);
    let inter = iw * ih;
    let ap = (l + r) * (t + b);
    let ag = (lg + rg) * (tg + bg);
    let union = ap + ag - inter;
    let ew = l.max(lg) + r.max(rg);
    let eh = t.max(tg) + b.max(bg);
    let enc = ew * eh;
    if union <= 0.0 || enc <= 0.0 {
        return (-1.0, [0.0; 4]);
    }
    let value = inter / union - 1.0 + union / enc;

    // d(iw)/d(l, r), d(ih)/d(t, b)
    let diw = if iw_raw > 0.0 { [(l < lg) as u8 as f64, (r < rg) as u8 as f64] } else { [0.0, 0.0] };
    let dih = if ih_raw > 0.0 { [(t < tg) as u8 as f64, (b < bg) as u8 as f64] } else { [0.0, 0.0] };
    let dew = [(l >= lg) as u8 as f64, (r >= rg) as u8 as f64];
    let deh = [(t >= tg) as u8 as f64, (b >= bg) as u8 as f64];

    let d_inter = [ih * diw[0], iw * dih[0], ih * diw[1], iw * dih[1]];
    let d_ap = [t + b, l + r, t + b, l + r];
    let d_enc = [eh * dew[0], ew * deh[0], eh * dew[1], ew * deh[1]];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_ap[k] - d_inter[k];
        grad[k] = (d_inter[k] * union - inter * d_union) / (union * union)
            + (d_union * enc - union * d_enc[k]) / (enc * enc);
    }
    (value, grad)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const, false)
    }

    /// Leaf for a parameter; repeated calls within one tape share the node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let m = if ta { av.cols } else { av.rows };
        let n = if tb { bv.rows } else { bv.cols };
        let mut out = Tensor::zeros(m, n);
        gemm(&av.data, av.rows, av.cols, ta, &bv.data, bv.rows, bv.cols, tb, &mut out.data, 0.0);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows, av.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Var {
        let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!((rv.rows, rv.cols), (1, av.cols), "row broadcast shape mismatch");
        let mut out = av.clone();
        for r in out.data.chunks_exact_mut(av.cols) {
            for (x, &y) in r.iter_mut().zip(&rv.data) {
                if mul {
                    *x *= y;
                } else {
                    *x += y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(row);
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        self.push(out, op, ng)
    }

    /// Adds a `[1, C]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, false)
    }

    /// Multiplies every row of `a` elementwise by a `[1, C]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_broadcast(a, row, true)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let out = Tensor::new(av.rows, av.cols, av.data.iter().map(|x| x * s).collect());
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Unfolds 3×3 zero-padded neighborhoods of an `[h*w, C]` grid into
    /// `[h*w, 9C]`, ordered (ky, kx, channel).
    pub fn im2col3x3(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.rows, h * w, "im2col grid size mismatch");
        let c = xv.cols;
        let mut out = Tensor::zeros(h * w, 9 * c);
        for i in 0..h {
            for j in 0..w {
                let orow = (i * w + j) * 9 * c;
                for ky in 0..3 {
                    let si = i as isize + ky as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sj = j as isize + kx as isize - 1;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        let src = (si as usize * w + sj as usize) * c;
                        let dst = orow + (ky * 3 + kx) * c;
                        out.data[dst..dst + c].copy_from_slice(&xv.data[src..src + c]);
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Im2col3x3 { x, h, w }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.rows;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + pv.cols]
                    .copy_from_slice(&pv.data[r * pv.cols..(r + 1) * pv.cols]);
            }
            off += pv.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.nodes[parts[0].0].value.cols;
        let mut data = Vec::new();
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::new(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = &self.nodes[a.0].value;
        assert!(start + len <= av.rows, "slice out of range");
        let data = av.data[start * av.cols..(start + len) * av.cols].to_vec();
        let out = Tensor::new(len, av.cols, data);
        let ng = self.ng(a);
        self.push(out, Op::SliceRows { a, start }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(av.cols, av.rows);
        for r in 0..av.rows {
            for c in 0..av.cols {
                out.data[c * av.rows + r] = av.data[r * av.cols + c];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = av.clone();
        for r in out.data.chunks_exact_mut(av.cols) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in r.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in r.iter_mut() {
                *x /= s;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let n = av.cols as f64;
        let mut out = av.clone();
        let mut inv_std = Vec::with_capacity(av.rows);
        for r in out.data.chunks_exact_mut(av.cols) {
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for x in r.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNormRows { a, inv_std }, ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let out = Tensor::new(av.rows, av.cols, av.data.iter().map(|&x| f(x)).collect());
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean squared hinged residual: `s - y` where `y >= fg_threshold`,
    /// `max(0, s)` elsewhere.
    pub fn hinge_loss(&mut self, pred: Var, label: &[f64], fg_threshold: f64) -> Var {
        let pv = &self.nodes[pred.0].value;
        assert_eq!(pv.len(), label.len(), "hinge loss length mismatch");
        let n = label.len() as f64;
        let loss = pv
            .data
            .iter()
            .zip(label)
            .map(|(&s, &y)| {
                let r = if y >= fg_threshold { s - y } else { s.max(0.0) };
                r * r
            })
            .sum::<f64>()
            / n;
        let ng = self.ng(pred);
        let label = HingeLabel { label: label.to_vec(), fg_threshold };
        self.push(Tensor::scalar(loss), Op::HingeLoss { pred, label }, ng)
    }

    /// Mean of `1 - GIoU` over masked cells of an `[n, 4]` ltrb prediction.
    /// Returns zero when no cell is valid.
    pub fn giou_loss(&mut self, pred: Var, target: &[f64], mask: &[bool]) -> Var {
        let pv = &self.nodes[pred.0].value;
        assert_eq!((pv.rows, pv.cols), (mask.len(), 4), "giou loss shape mismatch");
        assert_eq!(target.len(), pv.len());
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = 0.0;
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let (g, _) = anchored_giou_with_grad(&pv.data[i * 4..i * 4 + 4], &target[i * 4..i * 4 + 4]);
            total += 1.0 - g;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let ng = self.ng(pred);
        self.push(
            Tensor::scalar(loss),
            Op::GiouLoss { pred, target: target.to_vec(), mask: mask.to_vec(), count },
            ng,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::new(rv.rows, rv.cols, vec![1.0; rv.len()]));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Const | Op::Param => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(a), val(b));
                if self.ng(a) {
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    if !ta {
                        gemm(&g.data, g.rows, g.cols, false, &bv.data, bv.rows, bv.cols, !tb, &mut da.data, 0.0);
                    } else {
                        gemm(&bv.data, bv.rows, bv.cols, tb, &g.data, g.rows, g.cols, true, &mut da.data, 0.0);
                    }
                    self.accumulate(grads, a, da);
                }
                if self.ng(b) {
                    let mut db = Tensor::zeros(bv.rows, bv.cols);
                    if !tb {
                        gemm(&av.data, av.rows, av.cols, !ta, &g.data, g.rows, g.cols, false, &mut db.data, 0.0);
                    } else {
                        gemm(&g.data, g.rows, g.cols, true, &av.data, av.rows, av.cols, ta, &mut db.data, 0.0);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                let neg = Tensor::new(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                self.accumulate(grads, b, neg);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.ng(a) {
                    let d = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, a, Tensor::new(g.rows, g.cols, d));
                }
                if self.ng(b) {
                    let d = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, b, Tensor::new(g.rows, g.cols, d));
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.ng(row) {
                    let mut dr = Tensor::zeros(1, g.cols);
                    for r in g.data.chunks_exact(g.cols) {
                        for (d, x) in dr.data.iter_mut().zip(r) {
                            *d += x;
                        }
                    }
                    self.accumulate(grads, row, dr);
                }
            }
            &Op::MulRow(a, row) => {
                let (av, rv) = (val(a), val(row));
                if self.ng(a) {
                    let mut da = g.clone();
                    for r in da.data.chunks_exact_mut(g.cols) {
                        for (d, y) in r.iter_mut().zip(&rv.data) {
                            *d *= y;
                        }
                    }
                    self.accumulate(grads, a, da);
                }
                if self.ng(row) {
                    let mut dr = Tensor::zeros(1, g.cols);
                    for (gr, ar) in g.data.chunks_exact(g.cols).zip(av.data.chunks_exact(av.cols)) {
                        for ((d, x), y) in dr.data.iter_mut().zip(gr).zip(ar) {
                            *d += x * y;
                        }
                    }
                    self.accumulate(grads, row, dr);
                }
            }
            &Op::Scale(a, s) => {
                let d = g.data.iter().map(|x| x * s).collect();
                self.accumulate(grads, a, Tensor::new(g.rows, g.cols, d));
            }
            &Op::Im2col3x3 { x, h, w } => {
                let xv = val(x);
                let c = xv.cols;
                let mut dx = Tensor::zeros(xv.rows, c);
                for i in 0..h {
                    for j in 0..w {
                        let grow = (i * w + j) * 9 * c;
                        for ky in 0..3 {
                            let si = i as isize + ky as isize - 1;
                            if si < 0 || si >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sj = j as isize + kx as isize - 1;
                                if sj < 0 || sj >= w as isize {
                                    continue;
                                }
                                let dst = (si as usize * w + sj as usize) * c;
                                let src = grow + (ky * 3 + kx) * c;
                                for k in 0..c {
                                    dx.data[dst + k] += g.data[src + k];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    if self.ng(p) {
                        let mut dp = Tensor::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            dp.data[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.data[r * g.cols + off..r * g.cols + off + pc]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = val(p);
                    if self.ng(p) {
                        let d = g.data[off..off + pv.len()].to_vec();
                        self.accumulate(grads, p, Tensor::new(pv.rows, pv.cols, d));
                    }
                    off += pv.len();
                }
            }
            &Op::SliceRows { a, start } => {
                let av = val(a);
                let mut da = Tensor::zeros(av.rows, av.cols);
                da.data[start * av.cols..start * av.cols + g.len()].copy_from_slice(&g.data);
                self.accumulate(grads, a, da);
            }
            &Op::Transpose(a) => {
                let mut da = Tensor::zeros(g.cols, g.rows);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        da.data[c * g.rows + r] = g.data[r * g.cols + c];
                    }
                }
                self.accumulate(grads, a, da);
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut da = g.clone();
                for (dr, yr) in da.data.chunks_exact_mut(g.cols).zip(y.data.chunks_exact(g.cols)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                    for (d, y) in dr.iter_mut().zip(yr) {
                        *d = y * (*d - dot);
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::LayerNormRows { a, inv_std } => {
                let y = &node.value;
                let n = g.cols as f64;
                let mut da = g.clone();
                for ((dr, yr), is) in da.data.chunks_exact_mut(g.cols).zip(y.data.chunks_exact(g.cols)).zip(inv_std) {
                    let mean_d = dr.iter().sum::<f64>() / n;
                    let mean_dy = dr.iter().zip(yr).map(|(d, y)| d * y).sum::<f64>() / n;
                    for (d, y) in dr.iter_mut().zip(yr) {
                        *d = is * (*d - mean_d - y * mean_dy);
                    }
                }
                self.accumulate(grads, *a, da);
            }
            &Op::Gelu(a) => {
                let d = g.data.iter().zip(&val(a).data).map(|(gi, &x)| gi * gelu_grad(x)).collect();
                self.accumulate(grads, a, Tensor::new(g.rows, g.cols, d));
            }
            &Op::Softplus(a) => {
                let d = g.data.iter().zip(&val(a).data).map(|(gi, &x)| gi * sigmoid(x)).collect();
                self.accumulate(grads, a, Tensor::new(g.rows, g.cols, d));
            }
            &Op::Sum(a) => {
                let av = val(a);
                self.accumulate(grads, a, Tensor::new(av.rows, av.cols, vec![g.item(); av.len()]));
            }
            Op::HingeLoss { pred, label } => {
                let pv = val(*pred);
                let n = label.label.len() as f64;
                let scale = 2.0 * g.item() / n;
                let d = pv
                    .data
                    .iter()
                    .zip(&label.label)
                    .map(|(&s, &y)| {
                        let r = if y >= label.fg_threshold { s - y } else { s.max(0.0) };
                        scale * r
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(pv.rows, pv.cols, d));
            }
            Op::GiouLoss { pred, target, mask, count } => {
                let pv = val(*pred);
                let mut d = Tensor::zeros(pv.rows, pv.cols);
                if *count > 0 {
                    let scale = -g.item() / *count as f64;
                    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        let (_, gr) =
                            anchored_giou_with_grad(&pv.data[i * 4..i * 4 + 4], &target[i * 4..i * 4 + 4]);
                        for k in 0..4 {
                            d.data[i * 4 + k] = scale * gr[k];
                        }
                    }
                }
                self.accumulate(grads, *pred, d);
            }
        }
    }

    /// Gradients of every parameter leaf, indexed by parameter id. Parameters
    /// that did not take part in the forward pass get `None`.
    pub fn param_grads(&self, grads: &Gradients, n_params: usize) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();
        for (&id, &v) in &self.param_vars {
            if let Some(g) = grads.get(v) {
                out[id.index()] = Some(g.clone());
            }
        }
        out
    }
}
