//! Reverse-mode autodiff over small dense row-major matrices.
//!
//! Every op records its inputs and whatever it needs for the backward pass.
//! A tape lives for exactly one forward + backward; parameters enter it as
//! leaves tagged with their index in the parameter store.

use std::f64::consts::PI;

/// Dense row-major matrix. Vectors are `1 × n`, scalars `1 × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (m×k) · b (k×n)`.
fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `aᵀ (k×m)ᵀ · b (m×n)` without materializing the transpose.
fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &ai) in arow.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ai * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ (n×k)ᵀ`.
fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / PI).sqrt();
    let inner = s * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Index of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf {
        param: Option<usize>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    MeanRows {
        x: Var,
        rows: Vec<usize>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Lerp {
        from: Var,
        to: Var,
        gate: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropySum {
        logits: Var,
        targets: Vec<Option<usize>>,
        softmax: Mat,
    },
    Sum(Vec<Var>),
    Scale(Var, f64),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A parameter leaf. `id` is the parameter's index in its store.
    pub fn param(&mut self, id: usize, value: &Mat) -> Var {
        self.push(value.clone(), Op::Leaf { param: Some(id) })
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Broadcasts the `1 × n` row `b` over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows, 1);
        let mut value = self.value(a).clone();
        assert_eq!(value.cols, bias.cols);
        for r in 0..value.rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&bias.data) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Selects rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Mat::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.cols);
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let value = Mat::from_vec(va.rows + vb.rows, va.cols, data);
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows, vb.rows);
        let mut value = Mat::zeros(va.rows, va.cols + vb.cols);
        for r in 0..va.rows {
            value.row_mut(r)[..va.cols].copy_from_slice(va.row(r));
            value.row_mut(r)[va.cols..].copy_from_slice(vb.row(r));
        }
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Mean of the selected rows, as a `1 × cols` row.
    pub fn mean_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        assert!(!rows.is_empty(), "mean over zero rows");
        let vx = self.value(x);
        let mut value = Mat::zeros(1, vx.cols);
        for &r in rows {
            for (o, v) in value.data.iter_mut().zip(vx.row(r)) {
                *o += v;
            }
        }
        let n = rows.len() as f64;
        value.data.iter_mut().for_each(|v| *v /= n);
        self.push(
            value,
            Op::MeanRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Mat {
        let va = self.value(a);
        Mat::from_vec(va.rows, va.cols, va.data.iter().map(|&x| f(x)).collect())
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.map(a, sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// `(1 − gate) ⊙ from + gate ⊙ to`.
    pub fn lerp(&mut self, from: Var, to: Var, gate: Var) -> Var {
        let (f, t, g) = (self.value(from), self.value(to), self.value(gate));
        assert_eq!(f.data.len(), t.data.len());
        assert_eq!(f.data.len(), g.data.len());
        let data = f
            .data
            .iter()
            .zip(&t.data)
            .zip(&g.data)
            .map(|((&a, &b), &g)| (1.0 - g) * a + g * b)
            .collect();
        let value = Mat::from_vec(f.rows, f.cols, data);
        self.push(value, Op::Lerp { from, to, gate })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = vx.cols as f64;
        let mut xhat = Mat::zeros(vx.rows, vx.cols);
        let mut inv_std = Vec::with_capacity(vx.rows);
        let mut value = Mat::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..vx.cols {
                let h = (row[c] - mean) * is;
                xhat.data[r * vx.cols + c] = h;
                value.data[r * vx.cols + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention. `q` is `T × d`, `k` and `v`
    /// are `S × d`; `visible[t * S + s]` says whether query `t` may read key
    /// `s`. Every query must see at least one key.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, visible: &[bool]) -> Var {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (t_len, s_len, d) = (vq.rows, vk.rows, vq.cols);
        assert_eq!(vk.cols, d);
        assert_eq!(vv.rows, s_len);
        assert_eq!(visible.len(), t_len * s_len);
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * t_len * s_len];
        let mut out = Mat::zeros(t_len, d);
        for h in 0..heads {
            let off = h * dh;
            for t in 0..t_len {
                let p = &mut probs[(h * t_len + t) * s_len..(h * t_len + t + 1) * s_len];
                let qrow = &vq.row(t)[off..off + dh];
                let mut max = f64::NEG_INFINITY;
                for s in 0..s_len {
                    if visible[t * s_len + s] {
                        let krow = &vk.row(s)[off..off + dh];
                        let score = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[s] = score;
                        if score.is_nan() || score > max {
                            max = score;
                        }
                    }
                }
                // non-finite scores (diverged weights) propagate as NaN instead of panicking
                if !max.is_finite() {
                    max = 0.0;
                }
                let mut z = 0.0;
                for s in 0..s_len {
                    if visible[t * s_len + s] {
                        p[s] = (p[s] - max).exp();
                        z += p[s];
                    } else {
                        p[s] = 0.0;
                    }
                }
                let orow = &mut out.data[t * d + off..t * d + off + dh];
                for s in 0..s_len {
                    p[s] /= z;
                    if p[s] != 0.0 {
                        let vrow = &vv.row(s)[off..off + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p[s] * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Summed cross-entropy of `logits` rows against `targets`; rows whose
    /// target is `None` do not contribute.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows, targets.len());
        let mut softmax = Mat::zeros(vl.rows, vl.cols);
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let row = vl.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            for (c, &x) in row.iter().enumerate() {
                softmax.data[r * vl.cols + c] = (x - lse).exp();
            }
            if let Some(t) = *target {
                total += lse - row[t];
            }
        }
        let value = Mat::from_vec(1, 1, vec![total]);
        self.push(
            value,
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                softmax,
            },
        )
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut value = self.value(terms[0]).clone();
        for &t in &terms[1..] {
            value.add_assign(self.value(t));
        }
        self.push(value, Op::Sum(terms.to_vec()))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.map(a, |x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    /// Back-propagates from the scalar `root` and returns the gradient of
    /// every parameter leaf, indexed by parameter id (`None` when the
    /// parameter did not reach `root`). `n_params` sizes the result.
    pub fn backward(&self, root: Var, n_params: usize) -> Vec<Option<Mat>> {
        assert_eq!(self.value(root).data.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        let mut out: Vec<Option<Mat>> = (0..n_params).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(p) = *param {
                        match &mut out[p] {
                            Some(existing) => existing.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, self.value(*b));
                    let gb = matmul_tn(self.value(*a), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Mat::zeros(t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.value(*a).rows;
                    let split = ra * g.cols;
                    let ga = Mat::from_vec(ra, g.cols, g.data[..split].to_vec());
                    let gb = Mat::from_vec(g.rows - ra, g.cols, g.data[split..].to_vec());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols;
                    let cb = g.cols - ca;
                    let mut ga = Mat::zeros(g.rows, ca);
                    let mut gb = Mat::zeros(g.rows, cb);
                    for r in 0..g.rows {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MeanRows { x, rows } => {
                    let vx = self.value(*x);
                    let mut gx = Mat::zeros(vx.rows, vx.cols);
                    let n = rows.len() as f64;
                    for &r in rows {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(&g.data) {
                            *o += v / n;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Gelu(a) => {
                    let va = self.value(*a);
                    let data = g
                        .data
                        .iter()
                        .zip(&va.data)
                        .map(|(g, &x)| g * gelu_grad(x))
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, data));
                }
                Op::Sigmoid(a) => {
                    let data = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, &y)| g * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, data));
                }
                Op::Tanh(a) => {
                    let data = g
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, &y)| g * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, data));
                }
                Op::Lerp { from, to, gate } => {
                    let (f, t, gt) = (self.value(*from), self.value(*to), self.value(*gate));
                    let n = g.data.len();
                    let mut gf = Vec::with_capacity(n);
                    let mut gto = Vec::with_capacity(n);
                    let mut gg = Vec::with_capacity(n);
                    for i in 0..n {
                        gf.push(g.data[i] * (1.0 - gt.data[i]));
                        gto.push(g.data[i] * gt.data[i]);
                        gg.push(g.data[i] * (t.data[i] - f.data[i]));
                    }
                    acc(&mut grads, *from, Mat::from_vec(g.rows, g.cols, gf));
                    acc(&mut grads, *to, Mat::from_vec(g.rows, g.cols, gto));
                    acc(&mut grads, *gate, Mat::from_vec(g.rows, g.cols, gg));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gamma);
                    let cols = g.cols;
                    let n = cols as f64;
                    let mut gx = Mat::zeros(g.rows, cols);
                    let mut ggamma = Mat::zeros(1, cols);
                    let mut gbeta = Mat::zeros(1, cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            ggamma.data[c] += gr[c] * hr[c];
                            gbeta.data[c] += gr[c];
                            let dh = gr[c] * gm.data[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        for c in 0..cols {
                            let dh = gr[c] * gm.data[c];
                            gx.data[r * cols + c] =
                                inv_std[r] * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (t_len, s_len, d) = (vq.rows, vk.rows, vq.cols);
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Mat::zeros(t_len, d);
                    let mut gk = Mat::zeros(s_len, d);
                    let mut gv = Mat::zeros(s_len, d);
                    let mut dp = vec![0.0; s_len];
                    for h in 0..*heads {
                        let off = h * dh;
                        for t in 0..t_len {
                            let p = &probs[(h * t_len + t) * s_len..(h * t_len + t + 1) * s_len];
                            let go = &g.row(t)[off..off + dh];
                            let mut dot = 0.0;
                            for s in 0..s_len {
                                if p[s] == 0.0 {
                                    dp[s] = 0.0;
                                    continue;
                                }
                                let vrow = &vv.row(s)[off..off + dh];
                                dp[s] = go.iter().zip(vrow).map(|(a, b)| a * b).sum();
                                dot += dp[s] * p[s];
                                for (o, x) in
                                    gv.data[s * d + off..s * d + off + dh].iter_mut().zip(go)
                                {
                                    *o += p[s] * x;
                                }
                            }
                            for s in 0..s_len {
                                if p[s] == 0.0 {
                                    continue;
                                }
                                let ds = p[s] * (dp[s] - dot) * scale;
                                let krow = &vk.row(s)[off..off + dh];
                                let qrow = &vq.row(t)[off..off + dh];
                                for (o, x) in
                                    gq.data[t * d + off..t * d + off + dh].iter_mut().zip(krow)
                                {
                                    *o += ds * x;
                                }
                                for (o, x) in
                                    gk.data[s * d + off..s * d + off + dh].iter_mut().zip(qrow)
                                {
                                    *o += ds * x;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::CrossEntropySum {
                    logits,
                    targets,
                    softmax,
                } => {
                    let scale = g.scalar();
                    let mut gl = Mat::zeros(softmax.rows, softmax.cols);
                    for (r, target) in targets.iter().enumerate() {
                        if let Some(t) = *target {
                            let row = gl.row_mut(r);
                            row.copy_from_slice(softmax.row(r));
                            row[t] -= 1.0;
                            row.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        acc(&mut grads, t, g.clone());
                    }
                }
                Op::Scale(a, factor) => {
                    let data = g.data.iter().map(|x| x * factor).collect();
                    acc(&mut grads, *a, Mat::from_vec(g.rows, g.cols, data));
                }
            }
        }
        out
    }
}
