use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row repeated over the rows of `a`.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Sum(Var),
    Mse(Var, Var),
    Gru(Box<GruRecord>),
}

/// Inputs and per-step activations of a fused GRU sequence.
#[derive(Clone, Debug)]
struct GruRecord {
    proj: Var,
    w_rec: Var,
    b_rec: Var,
    batch: usize,
    reverse: bool,
    /// Per processed row: `r`, `z`, `n` and the recurrent candidate term `gh_n`.
    cache: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Node {
    shape: [usize; 2],
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape over row-major matrices.
///
/// Nodes are appended in evaluation order, so the recording is already topologically sorted.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that it depends on.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`; fails when `v` does not reach the differentiated scalar.
    pub fn get(&self, v: Var) -> Result<&[f64]> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_deref())
            .ok_or_else(|| Error::DisconnectedGraph(format!("node {} does not influence the loss", v.0)))
    }

    /// Number of nodes that received a gradient.
    pub fn reached(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

fn mismatch(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// `c = beta c + op(a) op(b)` for row-major operands; `ta`/`tb` request transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    // Row-major `a` is m×k (or k×m when transposed); the transpose is a stride swap.
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices hold at least m*k, k*n and m*n elements, which the strides address.
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

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let [r, c] = self.shape(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape matches its buffer")
    }

    fn push(&mut self, shape: [usize; 2], value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape[0] * shape[1], value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input (a parameter).
    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        let shape = t.as_matrix_shape()?;
        Ok(self.push(shape, t.data().to_vec(), Op::Leaf, true))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(mismatch("constant", [rows, cols], [value.len(), 1]));
        }
        Ok(self.push([rows, cols], value, Op::Leaf, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul", [m, k], [k2, n]));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push([m, n], out, Op::MatMul(a, b), ng))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(sa, out, op, ng))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && sb[0] == 1 && sb[1] == sa[1] {
            let row = self.value(b);
            let mut out = self.value(a).to_vec();
            for chunk in out.chunks_mut(sa[1]) {
                chunk.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
            let ng = self.ng(a) || self.ng(b);
            return Ok(self.push(sa, out, Op::AddRow(a, b), ng));
        }
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).iter().map(|x| scale * x + shift).collect();
        let ng = self.ng(a);
        self.push(self.shape(a), out, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a), out, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat", [0, 0], [0, 0]));
        };
        let s0 = self.shape(first);
        let mut out_shape = s0;
        for &p in &parts[1..] {
            let s = self.shape(p);
            match axis {
                Axis::Rows if s[1] == s0[1] => out_shape[0] += s[0],
                Axis::Cols if s[0] == s0[0] => out_shape[1] += s[1],
                _ => return Err(mismatch("concat", s0, s)),
            }
        }
        let mut out = Vec::with_capacity(out_shape[0] * out_shape[1]);
        match axis {
            Axis::Rows => {
                for &p in parts {
                    out.extend_from_slice(self.value(p));
                }
            }
            Axis::Cols => {
                for r in 0..out_shape[0] {
                    for &p in parts {
                        let c = self.shape(p)[1];
                        out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
                    }
                }
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out_shape, out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Rows or columns `start..end` of `a`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let [r, c] = self.shape(a);
        let limit = if axis == Axis::Rows { r } else { c };
        if start > end || end > limit {
            return Err(mismatch("slice", [r, c], [start, end]));
        }
        let v = self.value(a);
        let (shape, out) = match axis {
            Axis::Rows => ([end - start, c], v[start * c..end * c].to_vec()),
            Axis::Cols => {
                let mut out = Vec::with_capacity(r * (end - start));
                for row in v.chunks(c) {
                    out.extend_from_slice(&row[start..end]);
                }
                ([r, end - start], out)
            }
        };
        let ng = self.ng(a);
        Ok(self.push(shape, out, Op::Slice(a, axis, start), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push([1, 1], vec![s], Op::Sum(a), ng)
    }

    /// Mean of the squared elementwise difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mse", sa, sb));
        }
        let n = self.value(a).len().max(1) as f64;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push([1, 1], vec![s], Op::Mse(a, b), ng))
    }

    /// Gated recurrent unit run over a time-major sequence.
    ///
    /// `proj` holds the input projections `[steps * batch, 3h]` (gate order r, z, n, biases
    /// included); `w_rec` is `[h, 3h]` and `b_rec` is `[1, 3h]`. The state starts at zero and the
    /// output row `t * batch + b` is the state after step `t`. With `reverse` the steps run from
    /// last to first.
    pub fn gru_sequence(&mut self, proj: Var, w_rec: Var, b_rec: Var, batch: usize, reverse: bool) -> Result<Var> {
        let ([rows, g3], [h, g3w], sb) = (self.shape(proj), self.shape(w_rec), self.shape(b_rec));
        if g3 != 3 * h || g3w != g3 || sb != [1, g3] || batch == 0 || rows % batch != 0 {
            return Err(mismatch("gru_sequence", [rows, g3], [h, g3w]));
        }
        let steps = rows / batch;
        let (pv, wv, bv) = (self.value(proj), self.value(w_rec), self.value(b_rec));
        let mut out = vec![0.0; rows * h];
        let mut cache = vec![0.0; rows * 4 * h];
        let mut gh = vec![0.0; batch * g3];
        let mut prev = vec![0.0; batch * h];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            for row in gh.chunks_mut(g3) {
                row.copy_from_slice(bv);
            }
            gemm(batch, h, g3, &prev, false, wv, false, &mut gh, 1.0);
            for b in 0..batch {
                let i = t * batch + b;
                let gi = &pv[i * g3..(i + 1) * g3];
                let ghb = &gh[b * g3..(b + 1) * g3];
                let c = &mut cache[i * 4 * h..(i + 1) * 4 * h];
                let hp = &mut prev[b * h..(b + 1) * h];
                for j in 0..h {
                    let r = sigmoid(gi[j] + ghb[j]);
                    let z = sigmoid(gi[h + j] + ghb[h + j]);
                    let n = tanh(gi[2 * h + j] + r * ghb[2 * h + j]);
                    c[j] = r;
                    c[h + j] = z;
                    c[2 * h + j] = n;
                    c[3 * h + j] = ghb[2 * h + j];
                    hp[j] = n + z * (hp[j] - n);
                }
                out[i * h..(i + 1) * h].copy_from_slice(hp);
            }
        }
        let ng = self.ng(proj) || self.ng(w_rec) || self.ng(b_rec);
        let record = GruRecord {
            proj,
            w_rec,
            b_rec,
            batch,
            reverse,
            cache,
        };
        Ok(self.push([rows, h], out, Op::Gru(Box::new(record)), ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(mismatch("backward", self.shape(loss), [1, 1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let ([m, k], n) = (self.shape(a), node.shape[1]);
                let (va, vb) = (self.value(a), self.value(b));
                acc(a, &mut |ga| gemm(m, n, k, g, false, vb, true, ga, 1.0));
                acc(b, &mut |gb| gemm(k, m, n, va, true, g, false, gb, 1.0));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            &Op::AddRow(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let c = node.shape[1];
                acc(b, &mut |gb| {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                acc(a, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *x += gi * bi;
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *x += gi * ai;
                    }
                });
            }
            &Op::Affine(a, s) => acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            &Op::Sigmoid(a) => acc(a, &mut |ga| {
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += gi * y * (1.0 - y);
                }
            }),
            &Op::Tanh(a) => acc(a, &mut |ga| {
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&node.value) {
                    *x += gi * (1.0 - y * y);
                }
            }),
            &Op::Softplus(a) => {
                let va = self.value(a);
                acc(a, &mut |ga| {
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(va) {
                        *x += gi * sigmoid(*xi);
                    }
                })
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                let total_cols = node.shape[1];
                for &p in parts {
                    let [r, c] = self.shape(p);
                    match axis {
                        Axis::Rows => {
                            let chunk = &g[offset * c..(offset + r) * c];
                            acc(p, &mut |gp| gp.iter_mut().zip(chunk).for_each(|(x, y)| *x += y));
                            offset += r;
                        }
                        Axis::Cols => {
                            acc(p, &mut |gp| {
                                for row in 0..r {
                                    let src = &g[row * total_cols + offset..row * total_cols + offset + c];
                                    gp[row * c..(row + 1) * c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                                }
                            });
                            offset += c;
                        }
                    }
                }
            }
            &Op::Slice(a, axis, start) => {
                let [_, c] = self.shape(a);
                let [r_out, c_out] = node.shape;
                acc(a, &mut |ga| match axis {
                    Axis::Rows => ga[start * c..(start + r_out) * c].iter_mut().zip(g).for_each(|(x, y)| *x += y),
                    Axis::Cols => {
                        for row in 0..r_out {
                            let dst = &mut ga[row * c + start..row * c + start + c_out];
                            dst.iter_mut().zip(&g[row * c_out..(row + 1) * c_out]).for_each(|(x, y)| *x += y);
                        }
                    }
                });
            }
            &Op::Sum(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            &Op::Mse(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let s = 2.0 * g[0] / va.len().max(1) as f64;
                acc(a, &mut |ga| {
                    for ((x, ai), bi) in ga.iter_mut().zip(va).zip(vb) {
                        *x += s * (ai - bi);
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, ai), bi) in gb.iter_mut().zip(va).zip(vb) {
                        *x -= s * (ai - bi);
                    }
                });
            }
            Op::Gru(rec) => self.gru_backward(node, rec, g, grads),
        }
    }

    fn gru_backward(&self, node: &Node, rec: &GruRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [rows, h] = node.shape;
        let (batch, g3) = (rec.batch, 3 * h);
        let steps = rows / batch;
        let wv = self.value(rec.w_rec);
        let mut d_proj = vec![0.0; rows * g3];
        let mut d_w = vec![0.0; h * g3];
        let mut d_b = vec![0.0; g3];
        let mut carry = vec![0.0; batch * h];
        let mut d_gh = vec![0.0; batch * g3];
        let zeros = vec![0.0; batch * h];
        for s in (0..steps).rev() {
            let t = if rec.reverse { steps - 1 - s } else { s };
            // state before step t in processing order
            let prev: &[f64] = if s == 0 {
                &zeros
            } else {
                let tp = if rec.reverse { t + 1 } else { t - 1 };
                &node.value[tp * batch * h..(tp + 1) * batch * h]
            };
            for b in 0..batch {
                let i = t * batch + b;
                let c = &rec.cache[i * 4 * h..(i + 1) * 4 * h];
                let dp = &mut d_proj[i * g3..(i + 1) * g3];
                let dg = &mut d_gh[b * g3..(b + 1) * g3];
                let hp = &prev[b * h..(b + 1) * h];
                let dc = &mut carry[b * h..(b + 1) * h];
                for j in 0..h {
                    let (r, z, n, ghn) = (c[j], c[h + j], c[2 * h + j], c[3 * h + j]);
                    let dh = g[i * h + j] + dc[j];
                    let dpre_n = dh * (1.0 - z) * (1.0 - n * n);
                    let dpre_z = dh * (hp[j] - n) * z * (1.0 - z);
                    let dpre_r = dpre_n * ghn * r * (1.0 - r);
                    dp[j] = dpre_r;
                    dp[h + j] = dpre_z;
                    dp[2 * h + j] = dpre_n;
                    dg[j] = dpre_r;
                    dg[h + j] = dpre_z;
                    dg[2 * h + j] = dpre_n * r;
                    dc[j] = dh * z;
                }
            }
            if s > 0 {
                gemm(h, batch, g3, prev, true, &d_gh, false, &mut d_w, 1.0);
                gemm(batch, g3, h, &d_gh, false, wv, true, &mut carry, 1.0);
            }
            for row in d_gh.chunks(g3) {
                d_b.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
        }
        for (v, d) in [(rec.proj, d_proj), (rec.w_rec, d_w), (rec.b_rec, d_b)] {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            match &mut grads[v.0] {
                Some(slot) => slot.iter_mut().zip(&d).for_each(|(x, y)| *x += y),
                slot @ None => *slot = Some(d),
            }
        }
    }
}
