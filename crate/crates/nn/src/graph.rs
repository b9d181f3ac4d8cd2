//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! op is added, and [`Graph::backward`] walks the tape once in reverse. Graphs
//! borrow the parameter store immutably, so independent samples can be
//! evaluated on separate threads and their [`Gradients`] reduced afterwards.
//!
//! Shape errors inside the tape are programming errors and panic; layers
//! validate user-facing configuration before building graphs.

use crate::error::{NnError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softplus(Var),
    Atan2 { y: Var, x: Var },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { x: Var, idx: Vec<usize> },
    Reshape(Var),
    MeanRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

const LN_EPS: f64 = 1e-9;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(512),
            param_vars: vec![None; store.len()],
            grads: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input. Its gradient is still available after `backward`.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.store.get(id).value.clone();
        let v = self.push(value, Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// The stored parameter behind `v`, if it is a parameter leaf.
    pub fn param_id(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// `a · b`, or `a · bᵀ` when `trans_b`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (m, k) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, kb, "matmul inner dims {m}x{k} · {kb}x{n}");
        let mut out = vec![0.0; m * n];
        {
            let av = self.nodes[a.0].value.data();
            let bv = self.nodes[b.0].value.data();
            let (rsb, csb) = if trans_b { (1, bc) } else { (bc, 1) };
            gemm(m, k, n, av, k as isize, 1, bv, rsb as isize, csb as isize, &mut out, false);
        }
        self.push(Tensor::matrix(m, n, out), Op::MatMul { a, b, trans_b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ext(a, b, false)
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        assert_eq!(ta.len(), tb.len(), "elementwise op on different sizes");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (m, n) = self.dims(x);
        let bv = self.nodes[b.0].value.data();
        assert_eq!(bv.len(), n, "row bias width");
        let mut out = self.nodes[x.0].value.data().to_vec();
        for r in 0..m {
            out[r * n..(r + 1) * n]
                .iter_mut()
                .zip(bv)
                .for_each(|(o, b)| *o += b);
        }
        self.push(Tensor::matrix(m, n, out), Op::AddRow(x, b))
    }

    /// `x[m,n] + b[m]` broadcast over columns.
    pub fn add_col(&mut self, x: Var, b: Var) -> Var {
        let (m, n) = self.dims(x);
        let bv = self.nodes[b.0].value.data();
        assert_eq!(bv.len(), m, "column bias height");
        let mut out = self.nodes[x.0].value.data().to_vec();
        for r in 0..m {
            out[r * n..(r + 1) * n].iter_mut().for_each(|o| *o += bv[r]);
        }
        self.push(Tensor::matrix(m, n, out), Op::AddCol(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|v| v * s).collect();
        let t = Tensor::matrix(t.rows(), t.cols(), data);
        self.push(t, Op::Scale(x, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let t = Tensor::matrix(t.rows(), t.cols(), data);
        self.push(t, Op::Gelu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t
            .data()
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let t = Tensor::matrix(t.rows(), t.cols(), data);
        self.push(t, Op::Softplus(x))
    }

    /// Elementwise `atan2(y, x)`, range (-π, π].
    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        let t = self.zip_same(y, x, f64::atan2);
        self.push(t, Op::Atan2 { y, x })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (length = cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.dims(x);
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        assert_eq!(gv.len(), n);
        assert_eq!(bv.len(), n);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * gv[c] + bv[c];
            }
        }
        self.push(
            Tensor::matrix(m, n, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention on already-projected
    /// `q[Lq, D]`, `k[Lk, D]`, `v[Lk, D]`. `key_mask[j] == false` removes key
    /// `j`; a query row with no valid key yields a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, key_mask: Option<&[bool]>) -> Var {
        let (lq, d) = self.dims(q);
        let (lk, dk) = self.dims(k);
        let (lv, dv) = self.dims(v);
        assert!(d == dk && d == dv && lk == lv, "attention operand shapes");
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        if let Some(m) = key_mask {
            assert_eq!(m.len(), lk, "key mask length");
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = self.nodes[q.0].value.data();
        let kv = self.nodes[k.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        let mut scores = vec![0.0; lk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let qi = &qv[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..lk {
                    if key_mask.is_some_and(|m| !m[j]) {
                        scores[j] = f64::NEG_INFINITY;
                        continue;
                    }
                    let kj = &kv[j * d + off..j * d + off + dh];
                    let s = dot(qi, kj) * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let p = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let mut z = 0.0;
                for j in 0..lk {
                    let e = if scores[j] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (scores[j] - max).exp()
                    };
                    p[j] = e;
                    z += e;
                }
                let o = &mut out[i * d + off..i * d + off + dh];
                for j in 0..lk {
                    p[j] /= z;
                    if p[j] != 0.0 {
                        let vj = &vv[j * d + off..j * d + off + dh];
                        o.iter_mut().zip(vj).for_each(|(o, x)| *o += p[j] * x);
                    }
                }
            }
        }
        self.push(
            Tensor::matrix(lq, d, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Attention probabilities `[heads][Lq][Lk]` of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.cols(), n, "concat_rows widths");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::matrix(rows, n, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.rows(), m, "concat_cols heights");
            for r in 0..m {
                data[r * n + off..r * n + off + w].copy_from_slice(t.row(r));
            }
            off += w;
        }
        self.push(Tensor::matrix(m, n, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.dims(x);
        assert!(start + len <= n, "slice_cols out of range");
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(Tensor::matrix(m, len, data), Op::SliceCols { x, start })
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let (m, n) = self.dims(x);
        let t = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            assert!(i < m, "gather_rows index {i} >= {m}");
            data.extend_from_slice(t.row(i));
        }
        self.push(
            Tensor::matrix(idx.len(), n, data),
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        self.gather_rows(x, &[i])
    }

    /// Places input row `i` at output row `idx[i]` of a zero `rows × cols` matrix.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Var {
        let (m, n) = self.dims(x);
        assert_eq!(m, idx.len());
        let t = &self.nodes[x.0].value;
        let mut data = vec![0.0; rows * n];
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < rows);
            data[r * n..(r + 1) * n].copy_from_slice(t.row(i));
        }
        self.push(
            Tensor::matrix(rows, n, data),
            Op::ScatterRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let t = self.nodes[x.0].value.clone();
        assert_eq!(t.len(), rows * cols, "reshape size");
        self.push(Tensor::matrix(rows, cols, t.into_data()), Op::Reshape(x))
    }

    /// Column means, `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let t = &self.nodes[x.0].value;
        let mut out = vec![0.0; n];
        for r in 0..m {
            out.iter_mut().zip(t.row(r)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push(Tensor::matrix(1, n, out), Op::MeanRows(x))
    }

    /// Fails if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for n in &self.nodes {
            if !n.value.is_finite() {
                return Err(NnError::NonFinite { op: n.op.name() });
            }
        }
        Ok(())
    }

    /// Reverse sweep from the given seeds (`d loss / d var`).
    pub fn backward(&mut self, seeds: &[(Var, &[f64])]) {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.len(), "seed size");
            accum(&mut grads[v.0], g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        self.grads = grads;
    }

    /// Gradient of the seeded objective w.r.t. `v` (after `backward`).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter reached by the last backward sweep.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::empty(self.store.len());
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = self.grad(*v) {
                    out.add_into(ParamId(pid), g);
                }
            }
        }
        out
    }

    fn backprop_node(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a);
                let n = node.value.cols();
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                // dA[m,k] = dC[m,n] · B^T  (B is [k,n], or [n,k] when trans_b)
                let mut da = vec![0.0; m * k];
                if *trans_b {
                    gemm(m, n, k, gout, n as isize, 1, bv, k as isize, 1, &mut da, false);
                } else {
                    gemm(m, n, k, gout, n as isize, 1, bv, 1, n as isize, &mut da, false);
                }
                accum(&mut grads[a.0], &da);
                if *trans_b {
                    // dB[n,k] = dC^T · A
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, gout, 1, n as isize, av, k as isize, 1, &mut db, false);
                    accum(&mut grads[b.0], &db);
                } else {
                    // dB[k,n] = A^T · dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av, 1, k as isize, gout, n as isize, 1, &mut db, false);
                    accum(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                accum(&mut grads[a.0], gout);
                accum(&mut grads[b.0], gout);
            }
            Op::Sub(a, b) => {
                accum(&mut grads[a.0], gout);
                let neg: Vec<f64> = gout.iter().map(|g| -g).collect();
                accum(&mut grads[b.0], &neg);
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                let da: Vec<f64> = gout.iter().zip(bv).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = gout.iter().zip(av).map(|(g, x)| g * x).collect();
                accum(&mut grads[a.0], &da);
                accum(&mut grads[b.0], &db);
            }
            Op::AddRow(x, b) => {
                accum(&mut grads[x.0], gout);
                let n = node.value.cols();
                let mut db = vec![0.0; n];
                for row in gout.chunks_exact(n) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                accum(&mut grads[b.0], &db);
            }
            Op::AddCol(x, b) => {
                accum(&mut grads[x.0], gout);
                let n = node.value.cols();
                let db: Vec<f64> = gout.chunks_exact(n).map(|r| r.iter().sum()).collect();
                accum(&mut grads[b.0], &db);
            }
            Op::Scale(x, s) => {
                let dx: Vec<f64> = gout.iter().map(|g| g * s).collect();
                accum(&mut grads[x.0], &dx);
            }
            Op::Gelu(x) => {
                let xv = self.nodes[x.0].value.data();
                let dx: Vec<f64> = gout
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                accum(&mut grads[x.0], &dx);
            }
            Op::Softplus(x) => {
                let xv = self.nodes[x.0].value.data();
                let dx: Vec<f64> = gout.iter().zip(xv).map(|(g, &v)| g * sigmoid(v)).collect();
                accum(&mut grads[x.0], &dx);
            }
            Op::Atan2 { y, x } => {
                let yv = self.nodes[y.0].value.data();
                let xv = self.nodes[x.0].value.data();
                let mut dy = vec![0.0; gout.len()];
                let mut dx = vec![0.0; gout.len()];
                for j in 0..gout.len() {
                    let r2 = xv[j] * xv[j] + yv[j] * yv[j];
                    if r2 > 0.0 {
                        dy[j] = gout[j] * xv[j] / r2;
                        dx[j] = -gout[j] * yv[j] / r2;
                    }
                }
                accum(&mut grads[y.0], &dy);
                accum(&mut grads[x.0], &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = node.value.cols();
                let m = node.value.rows();
                let gv = self.nodes[gamma.0].value.data();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                let mut dxh = vec![0.0; n];
                for r in 0..m {
                    let go = &gout[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..n {
                        dg[c] += go[c] * xh[c];
                        db[c] += go[c];
                        dxh[c] = go[c] * gv[c];
                        s1 += dxh[c];
                        s2 += dxh[c] * xh[c];
                    }
                    let k = inv_std[r] / n as f64;
                    for c in 0..n {
                        dx[r * n + c] = k * (n as f64 * dxh[c] - s1 - xh[c] * s2);
                    }
                }
                accum(&mut grads[x.0], &dx);
                accum(&mut grads[gamma.0], &dg);
                accum(&mut grads[beta.0], &db);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (lq, d) = self.dims(*q);
                let lk = self.dims(*k).0;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let qv = self.nodes[q.0].value.data();
                let kv = self.nodes[k.0].value.data();
                let vv = self.nodes[v.0].value.data();
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dv = vec![0.0; lk * d];
                let mut dp = vec![0.0; lk];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..lq {
                        let p = &probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                        let go = &gout[i * d + off..i * d + off + dh];
                        let mut dot_pp = 0.0;
                        for j in 0..lk {
                            if p[j] == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vj = &vv[j * d + off..j * d + off + dh];
                            dp[j] = dot(go, vj);
                            dot_pp += dp[j] * p[j];
                            let dvj = &mut dv[j * d + off..j * d + off + dh];
                            dvj.iter_mut().zip(go).for_each(|(a, g)| *a += p[j] * g);
                        }
                        for j in 0..lk {
                            if p[j] == 0.0 {
                                continue;
                            }
                            let ds = p[j] * (dp[j] - dot_pp) * scale;
                            for c in 0..dh {
                                dq[i * d + off + c] += ds * kv[j * d + off + c];
                                dk[j * d + off + c] += ds * qv[i * d + off + c];
                            }
                        }
                    }
                }
                accum(&mut grads[q.0], &dq);
                accum(&mut grads[k.0], &dk);
                accum(&mut grads[v.0], &dv);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    accum(&mut grads[p.0], &gout[off..off + len]);
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&gout[r * n + off..r * n + off + w]);
                    }
                    accum(&mut grads[p.0], &dp);
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let w = node.value.cols();
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + w].copy_from_slice(&gout[r * w..(r + 1) * w]);
                }
                accum(&mut grads[x.0], &dx);
            }
            Op::GatherRows { x, idx } => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![0.0; m * n];
                for (o, &r) in idx.iter().enumerate() {
                    dx[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(&gout[o * n..(o + 1) * n])
                        .for_each(|(a, g)| *a += g);
                }
                accum(&mut grads[x.0], &dx);
            }
            Op::ScatterRows { x, idx } => {
                let n = node.value.cols();
                let mut dx = Vec::with_capacity(idx.len() * n);
                for &r in idx {
                    dx.extend_from_slice(&gout[r * n..(r + 1) * n]);
                }
                accum(&mut grads[x.0], &dx);
            }
            Op::Reshape(x) => accum(&mut grads[x.0], gout),
            Op::MeanRows(x) => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        dx[r * n + c] = gout[c] / m as f64;
                    }
                }
                accum(&mut grads[x.0], &dx);
            }
        }
    }
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Softplus(_) => "softplus",
            Op::Atan2 { .. } => "atan2",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::Reshape(_) => "reshape",
            Op::MeanRows(_) => "mean_rows",
        }
    }
}

fn accum(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c[m,n] (+)= a[m,k] · b[k,n]` with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and
    // the contiguous row-major output `c` (m×n); all callers pass buffers of
    // exactly those extents.
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

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        ParamStore::new()
    }

    #[test]
    fn matmul_matches_hand_product() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.input(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let b = g.input(Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).data(), &[58., 64., 139., 154.]);
        let bt = g.input(Tensor::matrix(2, 3, vec![7., 9., 11., 8., 10., 12.]));
        let c2 = g.matmul_ext(a, bt, true);
        assert_eq!(g.value(c2).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn single_key_gets_full_attention_weight() {
        let s = store();
        let mut g = Graph::new(&s);
        let q = g.input(Tensor::matrix(1, 4, vec![0.3, -0.2, 0.5, 0.1]));
        let out = g.attention(q, q, q, 2, None);
        let p = g.attention_probs(out).unwrap();
        assert!(p.iter().all(|&v| v == 1.0));
        assert_eq!(g.value(out).data(), g.value(q).data());
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let s = store();
        let mut g = Graph::new(&s);
        let q = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let out = g.attention(q, q, q, 1, Some(&[false, false]));
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
        g.backward(&[(out, &[1.0, 1.0, 1.0, 1.0])]);
        assert!(g.grad(q).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = store();
        let mut g = Graph::new(&s);
        let data: Vec<f64> = (0..5 * 8).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.7).collect();
        let x = g.input(Tensor::matrix(5, 8, data));
        let out = g.attention(x, x, x, 4, Some(&[true, false, true, true, true]));
        let p = g.attention_probs(out).unwrap();
        for row in p.chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let s = store();
        let mut g = Graph::new(&s);
        let data: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 0.37).sin() * 4.0 + i as f64).collect();
        let x = g.input(Tensor::matrix(3, 16, data));
        let gamma = g.input(Tensor::row_vector(vec![1.0; 16]));
        let beta = g.input(Tensor::row_vector(vec![0.0; 16]));
        let y = g.layer_norm(x, gamma, beta);
        for r in 0..3 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scatter_then_gather_is_identity() {
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
        let sc = g.scatter_rows(x, &[3, 1], 4);
        assert_eq!(g.value(sc).data(), &[0., 0., 3., 4., 0., 0., 1., 2.]);
        let back = g.gather_rows(sc, &[3, 1]);
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn check_finite_flags_nan() {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.input(Tensor::matrix(1, 1, vec![f64::NAN]));
        let _ = g.scale(a, 2.0);
        assert!(g.check_finite().is_err());
    }
}
