use super::kernels::{self, add_into};
use super::{AutodiffError, Tensor};
use crate::real::Real;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p, F> {
    Owned(Tensor<F>),
    Borrowed(&'p Tensor<F>),
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, shared_rhs: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Gelu { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: F },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<F>, total: F },
    Scale { x: Var, factor: F },
    Transpose { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize, end: usize },
    Sum { x: Var },
}

struct Node<'p, F> {
    value: Value<'p, F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Taped computation graph. `'p` is the lifetime of borrowed parameters.
pub struct Graph<'p, F> {
    nodes: Vec<Node<'p, F>>,
    grads: Vec<Option<Vec<F>>>,
    backward_done: bool,
}

impl<F: Real> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_COEF: f64 = 0.044_715;

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, message: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument {
        op,
        message: message.into(),
    }
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Owned leaf, e.g. an input or a tensor under test.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Borrowed leaf; gradients are tracked when `requires_grad` is set.
    pub fn bind(&mut self, value: &'p Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Accumulated gradient of the last backward pass, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// `a[..., m, k] · b[k, n]` or `a[..., m, k] · b[..., k, n]` with equal batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_rhs = sb.len() == 2;
        if k != k2 || (!shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * m * n);
        for bi in 0..batch {
            let a_blk = &va[bi * m * k..(bi + 1) * m * k];
            let b_blk = if shared_rhs {
                vb
            } else {
                &vb[bi * k * n..(bi + 1) * k * n]
            };
            out.extend(kernels::matmul(a_blk, b_blk, m, k, n));
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, shared_rhs }, rg))
    }

    /// Elementwise sum; `b`'s shape must equal a trailing suffix of `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", sa, sb));
        }
        let vb = self.value(b).data();
        let inner = vb.len().max(1);
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            add_into(chunk, vb);
        }
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let vb = self.value(b).data();
        let mut out = self.value(a).clone();
        for (x, &y) in out.data_mut().iter_mut().zip(vb) {
            *x *= y;
        }
        let rg = self.tracked(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let c = F::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
        let coef = F::from_f64_lossy(GELU_COEF);
        let half = F::from_f64_lossy(0.5);
        let out = self
            .value(x)
            .map(|v| half * v * (F::one() + (c * (v + coef * v * v * v)).tanh()));
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Gelu { x }, rg))
    }

    /// Softmax over the last axis after adding `mask` (0 or -inf entries),
    /// whose shape must be a trailing suffix of `x`'s shape.
    pub fn softmax(&mut self, x: Var, mask: Option<&Tensor<F>>) -> Result<Var, AutodiffError> {
        let sx = self.shape(x);
        if let Some(m) = mask {
            let sm = m.shape();
            if sm.len() > sx.len() || sm.is_empty() || sx[sx.len() - sm.len()..] != *sm {
                return Err(shape_err("softmax", sx, sm));
            }
        }
        let mut out = self.value(x).clone();
        let d = out.last_dim();
        let mask_data = mask.map(|m| m.data());
        for (r, row) in out.data_mut().chunks_mut(d.max(1)).enumerate() {
            if let Some(md) = mask_data {
                let off = (r * d) % md.len();
                add_into(row, &md[off..off + d]);
            }
            softmax_row(row);
        }
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: F,
    ) -> Result<Var, AutodiffError> {
        let d = self.value(x).last_dim();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(shape_err("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let mut out = self.value(x).clone();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(d.max(1)) {
            let (mean, rstd) = moments(row, eps);
            for ((v, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                *v = (*v - mean) * rstd * gi + bi;
            }
        }
        let rg = self.tracked(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, eps }, rg))
    }

    /// Gathers rows of a `[n, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(invalid("embedding", format!("table must be 2-D, got {st:?}")));
        }
        let (n, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(invalid("embedding", format!("id {bad} out of range for {n} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.tracked(&[table]);
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Weighted mean cross-entropy of `logits[n, vocab]` against `targets`.
    /// Rows with zero weight contribute nothing. The result is a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[F]>,
    ) -> Result<Var, AutodiffError> {
        let sl = self.shape(logits);
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(shape_err("cross_entropy", sl, &[targets.len()]));
        }
        let v = sl[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(invalid("cross_entropy", format!("target {bad} out of range for {v} classes")));
        }
        let weights = match weights {
            Some(w) if w.len() != targets.len() => {
                return Err(shape_err("cross_entropy", &[targets.len()], &[w.len()]))
            }
            Some(w) => w.to_vec(),
            None => vec![F::one(); targets.len()],
        };
        let total: F = weights.iter().copied().sum();
        if !(total > F::zero()) {
            return Err(invalid("cross_entropy", "weights must have a positive sum"));
        }
        let lv = self.value(logits);
        let mut loss = F::zero();
        for (r, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            if w == F::zero() {
                continue;
            }
            let row = lv.row(r);
            loss += w * (log_sum_exp(row) - row[t]);
        }
        loss /= total;
        let rg = self.tracked(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights,
            total,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Result<Var, AutodiffError> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.tracked(&[x]);
        Ok(self.push(out, Op::Scale { x, factor }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(invalid("transpose", format!("need at least 2 axes, got {s:?}")));
        }
        let out = transpose_last2(self.value(x).data(), &s);
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose { x }, rg))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let lead = self.shape(*first);
        let lead = lead[..lead.len().saturating_sub(1)].to_vec();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != *lead {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = self.tracked(parts);
        let op = Op::Concat {
            parts: parts.to_vec(),
        };
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Takes `start..end` along the last axis.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| invalid("slice", "scalar input"))?;
        if start >= end || end > d {
            return Err(invalid("slice", format!("range {start}..{end} invalid for last axis {d}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.rows() * (end - start));
        for r in 0..src.rows() {
            out.extend_from_slice(&src.row(r)[start..end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, start, end }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let total: F = self.value(x).data().iter().copied().sum();
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor::scalar(total), Op::Sum { x }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Every tracked node reachable from
    /// `loss` ends up with d loss / d node in [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::StaleGraph);
        }
        let sl = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(sl.to_vec()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.backprop(Var(i), &op, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => add_into(g, &delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&mut self, out: Var, op: &Op<F>, g: &[F]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul { a, b, shared_rhs } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b);
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                let mut da = self.wants(a).then(|| Vec::with_capacity(va.len()));
                let mut db = self.wants(b).then(|| vec![F::zero(); vb.len()]);
                for bi in 0..batch {
                    let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                    let a_blk = &va[bi * m * k..(bi + 1) * m * k];
                    let b_range = if shared_rhs {
                        0..k * n
                    } else {
                        bi * k * n..(bi + 1) * k * n
                    };
                    if let Some(da) = da.as_mut() {
                        da.extend(kernels::matmul_nt(g_blk, &vb[b_range.clone()], m, n, k));
                    }
                    if let Some(db) = db.as_mut() {
                        let part = kernels::matmul_tn(a_blk, g_blk, m, k, n);
                        add_into(&mut db[b_range], &part);
                    }
                }
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            &Op::Add { a, b } => {
                if self.wants(b) {
                    let inner = self.value(b).numel().max(1);
                    let mut db = vec![F::zero(); inner];
                    for chunk in g.chunks(inner) {
                        add_into(&mut db, chunk);
                    }
                    self.accumulate(b, db);
                }
                self.accumulate(a, g.to_vec());
            }
            &Op::Mul { a, b } => {
                let da = self.wants(a).then(|| {
                    self.value(b).data().iter().zip(g).map(|(&y, &gi)| y * gi).collect()
                });
                let db = self.wants(b).then(|| {
                    self.value(a).data().iter().zip(g).map(|(&x, &gi)| x * gi).collect()
                });
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            &Op::Gelu { x } => {
                let c = F::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
                let coef = F::from_f64_lossy(GELU_COEF);
                let three_coef = F::from_f64_lossy(3.0 * GELU_COEF);
                let half = F::from_f64_lossy(0.5);
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gi)| {
                        let t = (c * (v + coef * v * v * v)).tanh();
                        let dt = (F::one() - t * t) * c * (F::one() + three_coef * v * v);
                        gi * (half * (F::one() + t) + half * v * dt)
                    })
                    .collect();
                self.accumulate(x, dx);
            }
            &Op::Softmax { x } => {
                let y = self.value(out);
                let d = y.last_dim().max(1);
                let mut dx = Vec::with_capacity(g.len());
                for (yr, gr) in y.data().chunks(d).zip(g.chunks(d)) {
                    let s: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - s)));
                }
                self.accumulate(x, dx);
            }
            &Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(x);
                let d = xv.last_dim().max(1);
                let gv = self.value(gain).data();
                let df = F::from_usize(d).unwrap();
                let mut dx = Vec::with_capacity(g.len());
                let mut dgain = vec![F::zero(); d];
                let mut dbias = vec![F::zero(); d];
                let mut xhat = vec![F::zero(); d];
                let mut dxhat = vec![F::zero(); d];
                for (xr, gr) in xv.data().chunks(d).zip(g.chunks(d)) {
                    let (mean, rstd) = moments(xr, eps);
                    for j in 0..d {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<F>() / df;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<F>() / df;
                    dx.extend((0..d).map(|j| rstd * (dxhat[j] - m1 - xhat[j] * m2)));
                }
                self.accumulate(x, dx);
                self.accumulate(gain, dgain);
                self.accumulate(bias, dbias);
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                if self.wants(table) {
                    let st = self.shape(table);
                    let d = st[1];
                    let mut dt = vec![F::zero(); st[0] * d];
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                    self.accumulate(table, dt);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                total,
            } => {
                let logits = *logits;
                let lv = self.value(logits);
                let v = lv.last_dim();
                let mut dl = vec![F::zero(); lv.numel()];
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == F::zero() {
                        continue;
                    }
                    let scale = g[0] * w / *total;
                    let dst = &mut dl[r * v..(r + 1) * v];
                    dst.copy_from_slice(lv.row(r));
                    softmax_row(dst);
                    dst[t] -= F::one();
                    dst.iter_mut().for_each(|x| *x *= scale);
                }
                self.accumulate(logits, dl);
            }
            &Op::Scale { x, factor } => {
                self.accumulate(x, g.iter().map(|&v| v * factor).collect());
            }
            &Op::Transpose { x } => {
                let s = self.shape(out).to_vec();
                let dx = transpose_last2(g, &s);
                self.accumulate(x, dx);
            }
            Op::Concat { parts } => {
                let width = self.value(out).last_dim();
                let rows = g.len() / width.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            let base = r * width + offset;
                            dp.extend_from_slice(&g[base..base + w]);
                        }
                        self.accumulate(p, dp);
                    }
                    offset += w;
                }
            }
            &Op::Slice { x, start, end } => {
                let d = self.value(x).last_dim();
                let w = end - start;
                let mut dx = vec![F::zero(); self.value(x).numel()];
                for (r, gr) in g.chunks(w).enumerate() {
                    dx[r * d + start..r * d + end].copy_from_slice(gr);
                }
                self.accumulate(x, dx);
            }
            &Op::Sum { x } => {
                let n = self.value(x).numel();
                self.accumulate(x, vec![g[0]; n]);
            }
        }
    }
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_row<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

fn moments<F: Real>(row: &[F], eps: F) -> (F, F) {
    let n = F::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<F>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    (mean, (var + eps).sqrt().recip())
}

fn transpose_last2<F: Real>(data: &[F], shape: &[usize]) -> Vec<F> {
    let l = shape.len();
    let (r, c) = (shape[l - 2], shape[l - 1]);
    let mut out = vec![F::zero(); data.len()];
    for (blk_in, blk_out) in data.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                blk_out[j * r + i] = blk_in[i * c + j];
            }
        }
    }
    out
}
