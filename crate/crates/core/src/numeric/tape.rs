//! Reverse-mode differentiation over 2-D matrices.
//!
//! Every value on the tape is a `rows × cols` row-major matrix. Ops are
//! recorded in creation order, so the tape is already topologically sorted
//! and `backward` walks it in reverse.

use std::rc::Rc;

use rand::Rng;

use super::kernels::{
    bce_with_logits, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, softmax_row,
    softmax_row_backward,
};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which rows of a stacked `[batch·seq_len × d]` matrix may be attended to.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq_len: usize,
    pub mask: Rc<[bool]>,
}

impl AttentionLayout {
    pub fn new(batch: usize, seq_len: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != batch * seq_len {
            return Err(Error::Shape(format!(
                "mask has {} entries for batch {batch} × length {seq_len}",
                mask.len()
            )));
        }
        for b in 0..batch {
            if !mask[b * seq_len..(b + 1) * seq_len].iter().any(|&m| m) {
                return Err(Error::data(format!("batch row {b} has no attendable key")));
            }
        }
        Ok(AttentionLayout {
            batch,
            seq_len,
            mask: mask.into(),
        })
    }

    /// A single sequence with every position attendable.
    pub fn dense(seq_len: usize) -> Self {
        AttentionLayout {
            batch: 1,
            seq_len,
            mask: vec![true; seq_len].into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskedSoftmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        index: Vec<Option<usize>>,
    },
    Time2Vec {
        omega: Var,
        phi: Var,
        tau: Vec<f64>,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    Bce {
        logits: Var,
        targets: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "constant {rows}×{cols} given {} values",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    /// A differentiable leaf; its gradient is reported under `name`.
    pub fn leaf(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "leaf `{name}` {rows}×{cols} given {} values",
                data.len()
            )));
        }
        let v = self.push(rows, cols, data, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Loads a named parameter from the store as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t: &Tensor = store.require(name)?;
        let (r, c) = t.matrix_dims();
        self.leaf(name, r, c, t.data.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul of {m}×{k} by {k2}×{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, Op::MatMul(a, b), ng))
    }

    /// Adds a `1 × cols` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != c {
            return Err(Error::Shape(format!(
                "bias {br}×{bc} cannot broadcast over {r}×{c}"
            )));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(r, c, out, Op::AddBias(x, bias), ng))
    }

    /// `x·w + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(r, c, out, Op::Add(a, b), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Relu(x), ng)
    }

    /// Row-wise layer normalisation followed by the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, c) {
                return Err(Error::Shape(format!(
                    "layer-norm affine {:?} for rows of width {c}",
                    self.shape(p)
                )));
            }
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Softmax over each row, restricted to columns where `mask` is true.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(x);
        let out = super::kernels::masked_softmax(self.value(x), r, c, mask)?;
        let ng = self.needs(x);
        Ok(self.push(
            r,
            c,
            out,
            Op::MaskedSoftmax(x),
            ng,
        ))
    }

    /// Scaled dot-product attention for every (batch row, head) pair.
    ///
    /// `q`, `k`, `v` are `[batch·seq_len × d]` with heads laid out as
    /// contiguous column blocks of width `d / heads`. Masked keys receive zero
    /// weight. Masked query rows produce zero output.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: &AttentionLayout,
    ) -> Result<Var> {
        let (rows, d) = self.shape(q);
        if self.shape(k) != (rows, d) || self.shape(v) != (rows, d) {
            return Err(Error::Shape(format!(
                "attention inputs {:?}, {:?}, {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if rows != layout.rows() {
            return Err(Error::Shape(format!(
                "attention over {rows} rows with layout {}×{}",
                layout.batch, layout.seq_len
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let l = layout.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; layout.batch * heads * l * l];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; l];
        for b in 0..layout.batch {
            let mask = &layout.mask[b * l..(b + 1) * l];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..l {
                    if !mask[i] {
                        continue;
                    }
                    let qi = &qv[(b * l + i) * d + off..(b * l + i) * d + off + dh];
                    for j in 0..l {
                        scores[j] = if mask[j] {
                            let kj = &kv[(b * l + j) * d + off..(b * l + j) * d + off + dh];
                            super::kernels::dot(qi, kj) * scale
                        } else {
                            0.0
                        };
                    }
                    let base = ((b * heads + h) * l + i) * l;
                    let p = &mut probs[base..base + l];
                    softmax_row(&scores, mask, p);
                    let o = &mut out[(b * l + i) * d + off..(b * l + i) * d + off + dh];
                    for j in 0..l {
                        let pj = p[j];
                        if pj == 0.0 {
                            continue;
                        }
                        let vj = &vv[(b * l + j) * d + off..(b * l + j) * d + off + dh];
                        o.iter_mut().zip(vj).for_each(|(a, x)| *a += pj * x);
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            rows,
            d,
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout: layout.clone(),
                probs,
            },
            ng,
        ))
    }

    /// Builds a matrix whose row `r` is `table[index[r]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, table: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let (tr, c) = self.shape(table);
        let tv = self.value(table);
        let mut out = vec![0.0; index.len() * c];
        for (r, ix) in index.iter().enumerate() {
            if let Some(i) = *ix {
                if i >= tr {
                    return Err(Error::Shape(format!("row {i} of a {tr}-row table")));
                }
                out[r * c..(r + 1) * c].copy_from_slice(&tv[i * c..(i + 1) * c]);
            }
        }
        let ng = self.needs(table);
        Ok(self.push(index.len(), c, out, Op::Gather { table, index }, ng))
    }

    /// Time2Vec: column 0 is `ω₀τ + φ₀`, column `i ≥ 1` is `sin(ωᵢτ + φᵢ)`.
    pub fn time2vec(&mut self, tau: &[f64], omega: Var, phi: Var) -> Result<Var> {
        let (or, c) = self.shape(omega);
        if or != 1 || self.shape(phi) != (1, c) || c == 0 {
            return Err(Error::Shape(format!(
                "time2vec parameters {:?} and {:?}",
                self.shape(omega),
                self.shape(phi)
            )));
        }
        let out = super::super::encodings::time2vec_values(tau, self.value(omega), self.value(phi));
        let ng = self.needs(omega) || self.needs(phi);
        Ok(self.push(
            tau.len(),
            c,
            out,
            Op::Time2Vec {
                omega,
                phi,
                tau: tau.to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout; identity when `rate` is zero.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let (r, c) = self.shape(x);
        let keep = 1.0 - rate;
        let scale: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&scale)
            .map(|(v, s)| v * s)
            .collect();
        let ng = self.needs(x);
        self.push(r, c, out, Op::Dropout { x, scale }, ng)
    }

    /// Mean binary cross-entropy over a column of logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if c != 1 || r != targets.len() || r == 0 {
            return Err(Error::Shape(format!(
                "logits {r}×{c} against {} targets",
                targets.len()
            )));
        }
        let loss = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&z, &y)| bce_with_logits(z, y))
            .sum::<f64>()
            / r as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(1, 1, vec![s], Op::Sum(x), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from a non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of every named leaf, in leaf-creation order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Vec<f64>)> {
        self.params
            .iter()
            .map(|(name, v)| {
                let n = self.node(*v);
                let g = grads
                    .get(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; n.rows * n.cols]);
                (name.clone(), g)
            })
            .collect()
    }

    /// Runs backward from `loss` and adds every named leaf's gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, g) in self.param_grads(&grads) {
            store.accumulate_grad(&name, &g)?;
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    matmul_bt_acc(g, self.value(*b), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    matmul_at_acc(self.value(*a), g, gb, m, k, n);
                }
            }
            Op::AddBias(x, bias) => {
                let c = node.cols;
                if self.needs(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.needs(*bias) {
                    let gb = slot(grads, *bias, c);
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Relu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let gx = slot(grads, *x, g.len());
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = (node.rows, node.cols);
                if self.needs(*gamma) {
                    let gg = slot(grads, *gamma, c);
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = slot(grads, *beta, c);
                    for grow in g.chunks(c) {
                        add_into(gb, grow);
                    }
                }
                if self.needs(*x) {
                    let gam = self.value(*gamma).to_vec();
                    let gx = slot(grads, *x, r * c);
                    let mut dh = vec![0.0; c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let hrow = &xhat[i * c..(i + 1) * c];
                        for j in 0..c {
                            dh[j] = grow[j] * gam[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        let out = &mut gx[i * c..(i + 1) * c];
                        for j in 0..c {
                            out[j] += rstd[i] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                if self.needs(*x) {
                    let c = node.cols;
                    let gx = slot(grads, *x, g.len());
                    for ((prow, grow), out) in node
                        .value
                        .chunks(c)
                        .zip(g.chunks(c))
                        .zip(gx.chunks_mut(c))
                    {
                        softmax_row_backward(prow, grow, out);
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            } => self.attention_backward(node, g, grads, (*q, *k, *v), *heads, layout, probs),
            Op::Gather { table, index } => {
                if self.needs(*table) {
                    let (tr, c) = self.shape(*table);
                    let gt = slot(grads, *table, tr * c);
                    for (r, ix) in index.iter().enumerate() {
                        if let Some(i) = *ix {
                            add_into(&mut gt[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                        }
                    }
                }
            }
            Op::Time2Vec { omega, phi, tau } => {
                let c = node.cols;
                let om = self.value(*omega);
                let ph = self.value(*phi);
                let mut d_omega = vec![0.0; c];
                let mut d_phi = vec![0.0; c];
                for (r, &t) in tau.iter().enumerate() {
                    let grow = &g[r * c..(r + 1) * c];
                    d_omega[0] += grow[0] * t;
                    d_phi[0] += grow[0];
                    for i in 1..c {
                        let cs = (om[i] * t + ph[i]).cos();
                        d_omega[i] += grow[i] * cs * t;
                        d_phi[i] += grow[i] * cs;
                    }
                }
                if self.needs(*omega) {
                    add_into(slot(grads, *omega, c), &d_omega);
                }
                if self.needs(*phi) {
                    add_into(slot(grads, *phi, c), &d_phi);
                }
            }
            Op::Dropout { x, scale } => {
                if self.needs(*x) {
                    let gx = slot(grads, *x, g.len());
                    for ((o, gi), s) in gx.iter_mut().zip(g).zip(scale) {
                        *o += gi * s;
                    }
                }
            }
            Op::Bce { logits, targets } => {
                if self.needs(*logits) {
                    let n = targets.len() as f64;
                    let z = self.value(*logits).to_vec();
                    let gz = slot(grads, *logits, targets.len());
                    for ((o, zi), y) in gz.iter_mut().zip(z).zip(targets) {
                        *o += g[0] * (sigmoid(zi) - y) / n;
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let gx = slot(grads, *x, self.value(*x).len());
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        layout: &AttentionLayout,
        probs: &[f64],
    ) {
        let d = node.cols;
        let dh = d / heads;
        let l = layout.seq_len;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let rows = node.rows;
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = vec![0.0; l];
        let mut ds = vec![0.0; l];
        for b in 0..layout.batch {
            let mask = &layout.mask[b * l..(b + 1) * l];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..l {
                    if !mask[i] {
                        continue;
                    }
                    let base = ((b * heads + h) * l + i) * l;
                    let p = &probs[base..base + l];
                    let gi = &g[(b * l + i) * d + off..(b * l + i) * d + off + dh];
                    for j in 0..l {
                        if !mask[j] {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = (b * l + j) * d + off;
                        dp[j] = super::kernels::dot(gi, &vv[vrow..vrow + dh]);
                        let pj = p[j];
                        dv[vrow..vrow + dh]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(o, x)| *o += pj * x);
                    }
                    ds.iter_mut().for_each(|x| *x = 0.0);
                    softmax_row_backward(p, &dp, &mut ds);
                    let qrow = (b * l + i) * d + off;
                    for j in 0..l {
                        let s = ds[j] * scale;
                        if !mask[j] || s == 0.0 {
                            continue;
                        }
                        let krow = (b * l + j) * d + off;
                        for t in 0..dh {
                            dq[qrow + t] += s * kv[krow + t];
                            dk[krow + t] += s * qv[qrow + t];
                        }
                    }
                }
            }
        }
        for (var, d_) in [(q, dq), (k, dk), (v, dv)] {
            if self.needs(var) {
                add_into(slot(grads, var, rows * d), &d_);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
