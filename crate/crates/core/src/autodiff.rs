//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation eagerly: values are computed when an
//! op is pushed, and [`Tape::backward`] walks the record in reverse. One tape
//! is built per example; tapes borrow the parameter store read-only, so many
//! tapes can run concurrently against the same parameters.

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Sum(Var),
    PickSum { x: Var, idx: Vec<(usize, usize)> },
    Ln { x: Var, eps: f64 },
    OneMinus(Var),
    Reshape(Var),
    RelBias { param: ParamId, head: usize, q_offset: usize, window: usize },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::with_capacity(1024) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].op {
            Op::Param(p) => self.params.get(*p),
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Matrix::zeros(0, 0), Op::Param(id))
    }

    /// Rows of a parameter table (embedding lookup).
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let table = self.params.get(id);
        let mut out = Matrix::zeros(rows.len(), table.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather(id, rows.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_with(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + b` with the `1 x c` row `b` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = row_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let v = row_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(crate::tensor::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = out.row_mut(r);
            let mut sum = 0.0;
            for (ov, &xv) in o.iter_mut().zip(row) {
                *ov = (xv - max).exp();
                sum += *ov;
            }
            for ov in o.iter_mut() {
                *ov /= sum;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&crate::tensor::log_softmax(x.row(r)));
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols as f64;
        let mut out = Matrix::zeros(x.rows, x.cols);
        let mut rstds = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        self.push(out, Op::LayerNorm { x: a, rstd: rstds })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows, "concat_cols row mismatch");
                out.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut out = Matrix::zeros(x.rows, len);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x: a, start })
    }

    /// Rows of `a` at the given indices (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(rows.len(), x.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(x.row(r));
        }
        self.push(out, Op::SelectRows { x: a, rows: rows.to_vec() })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Sum of the selected entries of `a`.
    pub fn pick_sum(&mut self, a: Var, idx: &[(usize, usize)]) -> Var {
        let x = self.value(a);
        let v = idx.iter().map(|&(r, c)| x.get(r, c)).sum();
        self.push(Matrix::scalar(v), Op::PickSum { x: a, idx: idx.to_vec() })
    }

    /// `ln(max(a, eps))`; the gradient is zero where the clamp is active.
    pub fn ln(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| x.max(eps).ln());
        self.push(v, Op::Ln { x: a, eps })
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    /// Same data viewed as `rows x cols` (row-major order is kept).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let v = Matrix::from_vec(rows, cols, x.data.clone());
        self.push(v, Op::Reshape(a))
    }

    /// Relative-position attention bias for one head: entry `(i, j)` is
    /// `table[head][clip(j - (i + q_offset), -window, window) + window]`.
    pub fn rel_bias(&mut self, param: ParamId, head: usize, q_offset: usize, lq: usize, lk: usize, window: usize) -> Var {
        let table = self.params.get(param);
        let mut out = Matrix::zeros(lq, lk);
        for i in 0..lq {
            for j in 0..lk {
                out.set(i, j, table.get(head, rel_bucket(i + q_offset, j, window)));
            }
        }
        self.push(out, Op::RelBias { param, head, q_offset, window })
    }

    /// Gradients of the scalar `loss` with respect to every parameter it touches.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::new(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => out.accumulate(*p, &g),
                Op::Gather(p, rows) => {
                    let table = self.params.get(*p);
                    let buf = out.entry(*p, table.rows, table.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (b, &gv) in buf.row_mut(r).iter_mut().zip(g.row(i)) {
                            *b += gv;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_with(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_with(&g, self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, col_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = row_broadcast(&g, bv, |x, y| x * y);
                    let gb = col_sums(&zip_with(&g, av, |x, y| x * y));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let ga = zip_with(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_with(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_with(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let s = dot(g.row(r), y.row(r));
                        for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gv - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let s: f64 = g.row(r).iter().sum();
                        for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = gv - yv.exp() * s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, rstd } => {
                    let y = &node.value;
                    let n = y.cols as f64;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = dot(gr, yr) / n;
                        for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o = rstd[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).rows;
                        let gp = Matrix::from_vec(h, g.cols, g.data[off * g.cols..(off + h) * g.cols].to_vec());
                        off += h;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, &gv) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Matrix::filled(av.rows, av.cols, g.item()));
                }
                Op::PickSum { x, idx } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    let g0 = g.item();
                    for &(r, c) in idx {
                        gx.data[r * xv.cols + c] += g0;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Ln { x, eps } => {
                    let ga = zip_with(&g, self.value(*x), |gv, xv| if xv > *eps { gv / xv } else { 0.0 });
                    acc(&mut grads, *x, ga);
                }
                Op::OneMinus(a) => acc(&mut grads, *a, g.map(|x| -x)),
                Op::Reshape(a) => {
                    let av = self.value(*a);
                    acc(&mut grads, *a, Matrix::from_vec(av.rows, av.cols, g.data));
                }
                Op::RelBias { param, head, q_offset, window } => {
                    let table = self.params.get(*param);
                    let buf = out.entry(*param, table.rows, table.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            let b = rel_bucket(i + q_offset, j, *window);
                            buf.data[head * table.cols + b] += g.get(i, j);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Bucket index of relative distance `key - query`, clipped to `[-window, window]`.
pub fn rel_bucket(query: usize, key: usize, window: usize) -> usize {
    let d = key as isize - query as isize;
    (d.clamp(-(window as isize), window as isize) + window as isize) as usize
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(m) => m.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    Matrix { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() }
}

fn row_broadcast(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(b.rows, 1, "broadcast operand must be a single row");
    assert_eq!(a.cols, b.cols, "broadcast width mismatch");
    let mut out = Matrix::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        for ((o, &x), &y) in out.row_mut(r).iter_mut().zip(a.row(r)).zip(&b.data) {
            *o = f(x, y);
        }
    }
    out
}

fn col_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, &v) in out.data.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of every parameter coordinate of a small graph.
    fn check(params: &mut ParamStore, f: impl Fn(&mut Tape) -> Var) {
        let grads = {
            let mut t = Tape::new(params);
            let l = f(&mut t);
            t.backward(l)
        };
        let h = 1e-6;
        for id in params.ids().collect::<Vec<_>>() {
            for k in 0..params.get(id).len() {
                let orig = params.get(id).data[k];
                params.get_mut(id).data[k] = orig + h;
                let lp = { let mut t = Tape::new(params); let l = f(&mut t); t.value(l).item() };
                params.get_mut(id).data[k] = orig - h;
                let lm = { let mut t = Tape::new(params); let l = f(&mut t); t.value(l).item() };
                params.get_mut(id).data[k] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = grads.get(id).map_or(0.0, |g| g.data[k]);
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-3);
                assert!(err < 1e-5, "{} [{k}]: numeric {num} vs analytic {ana}", params.name(id));
            }
        }
    }

    fn random_params(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamStore::new();
        for &(n, r, c) in shapes {
            let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ps.add(n, Matrix::from_vec(r, c, data));
        }
        ps
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        let mut ps = random_params(&[("a", 3, 4), ("b", 4, 2), ("row", 1, 4), ("emb", 5, 4), ("rel", 2, 5)]);
        let [a, b, row, emb, rel] = ["a", "b", "row", "emb", "rel"].map(|n| ps.id(n).unwrap());
        check(&mut ps, |t| {
            let av = t.param(a);
            let bv = t.param(b);
            let rv = t.param(row);
            let e = t.gather(emb, &[0, 3, 3]);
            let x = t.add(av, e);
            let x = t.mul_row(x, rv);
            let x = t.add_row(x, rv);
            let ln = t.layer_norm(x);
            let s = t.sigmoid(ln);
            let th = t.tanh(x);
            let m = t.mul(s, th);
            let y = t.matmul(m, bv);
            let att = t.matmul_t(m, x);
            let bias = t.rel_bias(rel, 1, 0, 3, 3, 2);
            let att = t.add(att, bias);
            let sm = t.softmax(att);
            let z = t.matmul(sm, y);
            let ls = t.log_softmax(z);
            let c = t.concat_cols(&[z, ls]);
            let r = t.relu(c);
            let sel = t.select_rows(r, &[2, 0, 2]);
            let sl = t.slice_cols(sel, 1, 2);
            let cat = t.concat_rows(&[sl, y]);
            let sc = t.scale(cat, 0.5);
            let (rr, cc) = t.value(sc).shape();
            let sc = t.reshape(sc, 1, rr * cc);
            let sc = t.reshape(sc, rr, cc);
            let sg = t.sigmoid(sc);
            let om = t.one_minus(sg);
            let l1 = t.ln(om, 1e-9);
            let d = t.sub(l1, sc);
            let p = t.pick_sum(ls, &[(0, 1), (2, 0), (2, 0)]);
            let s = t.sum(d);
            t.add(s, p)
        });
    }

    #[test]
    fn rel_bucket_clips() {
        assert_eq!(rel_bucket(0, 0, 2), 2);
        assert_eq!(rel_bucket(0, 9, 2), 4);
        assert_eq!(rel_bucket(9, 0, 2), 0);
        assert_eq!(rel_bucket(3, 2, 2), 1);
    }
}
