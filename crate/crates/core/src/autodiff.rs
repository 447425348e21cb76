//! Define-by-run reverse-mode autodiff on an append-only tape.
//!
//! A [`Graph`] owns every node's value and gradient in two flat arenas, so a
//! training loop can rebuild the graph each step without reallocating
//! (`reset` keeps capacity). Appending order is a topological order, which
//! makes the backward sweep a single reverse pass that visits each node
//! exactly once.
//!
//! Broadcasting is deliberately restricted to exact-shape and scalar-vs-tensor
//! for the binary ops; anything else is a shape error.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Square(NodeId),
    Relu(NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    /// Add a column vector to every column of a matrix.
    AddCols(NodeId, NodeId),
    Sum(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows { src: NodeId, row0: u32 },
}

#[derive(Debug, Clone)]
struct NodeMeta {
    op: Op,
    rows: u32,
    cols: u32,
    off: u32,
}

impl NodeMeta {
    #[inline]
    fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }
    #[inline]
    fn range(&self) -> std::ops::Range<usize> {
        let off = self.off as usize;
        off..off + self.len()
    }
}

/// Computation tape: values are computed eagerly as ops are appended,
/// gradients are filled in by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<NodeMeta>,
    values: Vec<f64>,
    grads: Vec<f64>,
    scratch: Vec<f64>,
    /// A backward sweep has run since the grads were last known-clean;
    /// the next sweep must clear intermediate grads before seeding.
    swept: bool,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softplus: for large x, `ln(1+e^x) = x + ln(1+e^-x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Drop all nodes but keep the arena capacity for the next step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.grads.clear();
        self.swept = false;
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    fn off_len(&self, id: NodeId) -> (usize, usize) {
        let m = &self.nodes[id.0 as usize];
        (m.off as usize, m.len())
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let m = &self.nodes[id.0 as usize];
        &self.values[m.range()]
    }

    /// Value of a one-element node.
    pub fn value_scalar(&self, id: NodeId) -> f64 {
        let m = &self.nodes[id.0 as usize];
        debug_assert_eq!(m.len(), 1);
        self.values[m.off as usize]
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        let m = &self.nodes[id.0 as usize];
        &self.grads[m.range()]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let m = &self.nodes[id.0 as usize];
        (m.rows as usize, m.cols as usize)
    }

    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let (r, c) = self.shape(id);
        Tensor::new(vec![r, c], self.grad(id).to_vec()).expect("grad is well-formed")
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
        self.swept = false;
    }

    fn push(&mut self, rows: usize, cols: usize, op: Op) -> NodeId {
        let off = self.values.len();
        let len = rows * cols;
        self.values.resize(off + len, 0.0);
        self.grads.resize(off + len, 0.0);
        self.nodes.push(NodeMeta {
            op,
            rows: rows as u32,
            cols: cols as u32,
            off: off as u32,
        });
        NodeId((self.nodes.len() - 1) as u32)
    }

    /// New leaf from a tensor (copies the data).
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.dims2();
        self.leaf_slice(t.data(), r, c)
    }

    pub fn leaf_slice(&mut self, data: &[f64], rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        let id = self.push(rows, cols, Op::Leaf);
        let r = self.nodes[id.0 as usize].range();
        self.values[r].copy_from_slice(data);
        id
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf_slice(&[v], 1, 1)
    }

    pub fn zeros_leaf(&mut self, rows: usize, cols: usize) -> NodeId {
        self.push(rows, cols, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims disagree: [{m}x{ka}] . [{kb}x{n}]"
            )));
        }
        let id = self.push(m, n, Op::Matmul(a, b));
        let (ao, _) = self.off_len(a);
        let (bo, _) = self.off_len(b);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        let av = &pre[ao..ao + m * ka];
        let bv = &pre[bo..bo + ka * n];
        if n == 1 {
            for (row, o) in av.chunks_exact(ka).zip(out.iter_mut()) {
                *o = row.iter().zip(bv).map(|(a, b)| a * b).sum();
            }
        } else {
            for (a_row, out_row) in av.chunks_exact(ka).zip(out.chunks_exact_mut(n)) {
                for (&aip, b_row) in a_row.iter().zip(bv.chunks_exact(n)) {
                    if aip != 0.0 {
                        for (o, &b) in out_row.iter_mut().zip(b_row) {
                            *o += aip * b;
                        }
                    }
                }
            }
        }
        Ok(id)
    }

    /// Validate binary operand shapes: exact match, or either side scalar.
    fn binary_shape(&self, a: NodeId, b: NodeId, opname: &str) -> Result<(usize, usize)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let la = ra * ca;
        let lb = rb * cb;
        if la == lb {
            if (ra, ca) != (rb, cb) {
                return Err(Error::Shape(format!(
                    "{opname}: shapes [{ra}x{ca}] vs [{rb}x{cb}]"
                )));
            }
            Ok((ra, ca))
        } else if la == 1 {
            Ok((rb, cb))
        } else if lb == 1 {
            Ok((ra, ca))
        } else {
            Err(Error::Shape(format!(
                "{opname}: shapes [{ra}x{ca}] vs [{rb}x{cb}] (only exact or scalar broadcast)"
            )))
        }
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        opname: &str,
        make: fn(NodeId, NodeId) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (r, c) = self.binary_shape(a, b, opname)?;
        let id = self.push(r, c, make(a, b));
        let (ao, al) = self.off_len(a);
        let (bo, bl) = self.off_len(b);
        let (co, _) = self.off_len(id);
        let n = r * c;
        let (pre, out) = self.values.split_at_mut(co);
        if al == n && bl == n {
            let av = &pre[ao..ao + n];
            let bv = &pre[bo..bo + n];
            for ((o, &x), &y) in out.iter_mut().zip(av).zip(bv) {
                *o = f(x, y);
            }
        } else if al == 1 {
            let x = pre[ao];
            for (o, &y) in out.iter_mut().zip(&pre[bo..bo + n]) {
                *o = f(x, y);
            }
        } else {
            let y = pre[bo];
            for (o, &x) in out.iter_mut().zip(&pre[ao..ao + n]) {
                *o = f(x, y);
            }
        }
        Ok(id)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(b).iter().any(|&v| v == 0.0) {
            return Err(Error::Domain("div: zero divisor entry".into()));
        }
        self.binary(a, b, "div", Op::Div, |x, y| x / y)
    }

    fn unary(&mut self, a: NodeId, make: fn(NodeId) -> Op, f: fn(f64) -> f64) -> NodeId {
        let (r, c) = self.shape(a);
        let id = self.push(r, c, make(a));
        let (ao, al) = self.off_len(a);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        for (o, &x) in out.iter_mut().zip(&pre[ao..ao + al]) {
            *o = f(x);
        }
        id
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus, softplus)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        Ok(self.unary(a, Op::Log, f64::ln))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn add_scalar(&mut self, a: NodeId, cst: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let id = self.push(r, c, Op::AddScalar(a));
        let (ao, al) = self.off_len(a);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        for (o, &x) in out.iter_mut().zip(&pre[ao..ao + al]) {
            *o = x + cst;
        }
        id
    }

    pub fn mul_scalar(&mut self, a: NodeId, cst: f64) -> NodeId {
        let (r, c) = self.shape(a);
        let id = self.push(r, c, Op::MulScalar(a, cst));
        let (ao, al) = self.off_len(a);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        for (o, &x) in out.iter_mut().zip(&pre[ao..ao + al]) {
            *o = x * cst;
        }
        id
    }

    /// Broadcast-add a `[r,1]` column to every column of a `[r,c]` matrix.
    pub fn add_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if rb != r || cb != 1 {
            return Err(Error::Shape(format!(
                "add_cols: [{r}x{c}] needs a [{r}x1] column, got [{rb}x{cb}]"
            )));
        }
        let id = self.push(r, c, Op::AddCols(a, b));
        let (ao, _) = self.off_len(a);
        let (bo, _) = self.off_len(b);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        let av = &pre[ao..ao + r * c];
        let bv = &pre[bo..bo + r];
        for i in 0..r {
            let bi = bv[i];
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(&av[i * c..(i + 1) * c]) {
                *o = x + bi;
            }
        }
        Ok(id)
    }

    /// Reduce to a `[1,1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let id = self.push(1, 1, Op::Sum(a));
        let (ao, al) = self.off_len(a);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        out[0] = pre[ao..ao + al].iter().sum();
        id
    }

    /// Stack same-width blocks vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero nodes".into()));
        }
        let (_, c0) = self.shape(parts[0]);
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != c0 {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {c} vs {c0}"
                )));
            }
            rows += r;
        }
        let ranges: Vec<_> = parts
            .iter()
            .map(|&p| self.nodes[p.0 as usize].range())
            .collect();
        let id = self.push(rows, c0, Op::ConcatRows(parts.to_vec()));
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        let mut at = 0;
        for r in ranges {
            let src = &pre[r];
            out[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
        Ok(id)
    }

    /// Contiguous row slice `[row0, row0+rows)` of a node.
    pub fn slice_rows(&mut self, src: NodeId, row0: usize, rows: usize) -> Result<NodeId> {
        let (r, c) = self.shape(src);
        if row0 + rows > r {
            return Err(Error::Shape(format!(
                "slice_rows [{row0}, {}) out of {r} rows",
                row0 + rows
            )));
        }
        let id = self.push(
            rows,
            c,
            Op::SliceRows {
                src,
                row0: row0 as u32,
            },
        );
        let (so, _) = self.off_len(src);
        let (co, _) = self.off_len(id);
        let (pre, out) = self.values.split_at_mut(co);
        out.copy_from_slice(&pre[so + row0 * c..so + (row0 + rows) * c]);
        Ok(id)
    }

    /// Reverse sweep from a scalar root. Every leaf's grad accumulates
    /// d(root)/d(leaf); repeated calls without [`Graph::zero_grads`] keep
    /// accumulating. Intermediate (non-leaf) grads are scratch space owned by
    /// the sweep and are cleared on entry, so each call contributes exactly
    /// one d(root)/d(leaf) per leaf.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        {
            let rm = &self.nodes[root.0 as usize];
            if rm.len() != 1 {
                return Err(Error::Contract(format!(
                    "backward root must be scalar, got [{}x{}]",
                    rm.rows, rm.cols
                )));
            }
        }
        if self.swept {
            for idx in 0..self.nodes.len() {
                let meta = &self.nodes[idx];
                if !matches!(meta.op, Op::Leaf) {
                    let r = meta.range();
                    self.grads[r].fill(0.0);
                }
            }
        }
        self.swept = true;
        self.grads[self.nodes[root.0 as usize].off as usize] += 1.0;

        for idx in (0..=root.0 as usize).rev() {
            let meta = self.nodes[idx].clone();
            let n = meta.len();
            // Copy this node's grad out so parent grad ranges (which may alias
            // each other, e.g. x*x) can be updated freely below.
            self.scratch.clear();
            self.scratch.extend_from_slice(&self.grads[meta.range()]);
            if self.scratch.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &meta.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let (_, nn) = self.shape(*b);
                    let (ao, _) = self.off_len(*a);
                    let (bo, _) = self.off_len(*b);
                    if nn == 1 {
                        // dA += g . B^T is rank-1; dB += A^T . g is a row
                        // combination. Ranges of dA and dB may alias (a == b),
                        // so the two updates run sequentially.
                        {
                            let g = &self.scratch;
                            let bv = &self.values[bo..bo + k];
                            let da = &mut self.grads[ao..ao + m * k];
                            for (row, &gi) in da.chunks_exact_mut(k).zip(g.iter()) {
                                if gi != 0.0 {
                                    for (d, &bvp) in row.iter_mut().zip(bv) {
                                        *d += gi * bvp;
                                    }
                                }
                            }
                        }
                        {
                            let g = &self.scratch;
                            let av = &self.values[ao..ao + m * k];
                            let db = &mut self.grads[bo..bo + k];
                            for (row, &gi) in av.chunks_exact(k).zip(g.iter()) {
                                if gi != 0.0 {
                                    for (d, &avp) in db.iter_mut().zip(row) {
                                        *d += gi * avp;
                                    }
                                }
                            }
                        }
                    } else {
                        // dA += dC . B^T
                        {
                            let g = &self.scratch;
                            let bv = &self.values[bo..bo + k * nn];
                            let da = &mut self.grads[ao..ao + m * k];
                            for (g_row, da_row) in
                                g.chunks_exact(nn).zip(da.chunks_exact_mut(k))
                            {
                                for (d, b_row) in da_row.iter_mut().zip(bv.chunks_exact(nn)) {
                                    *d += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                        // dB += A^T . dC
                        {
                            let g = &self.scratch;
                            let av = &self.values[ao..ao + m * k];
                            let db = &mut self.grads[bo..bo + k * nn];
                            for (a_row, g_row) in av.chunks_exact(k).zip(g.chunks_exact(nn)) {
                                for (&aip, db_row) in
                                    a_row.iter().zip(db.chunks_exact_mut(nn))
                                {
                                    if aip != 0.0 {
                                        for (d, &gj) in db_row.iter_mut().zip(g_row) {
                                            *d += aip * gj;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => self.accumulate_binary(*a, *b, n, |_, _, g| (g, g)),
                Op::Sub(a, b) => self.accumulate_binary(*a, *b, n, |_, _, g| (g, -g)),
                Op::Mul(a, b) => self.accumulate_binary(*a, *b, n, |x, y, g| (g * y, g * x)),
                Op::Div(a, b) => {
                    self.accumulate_binary(*a, *b, n, |x, y, g| (g / y, -g * x / (y * y)))
                }
                Op::Sigmoid(a) => self.accumulate_unary_from_output(*a, meta.off as usize, n, |y, g| {
                    g * y * (1.0 - y)
                }),
                Op::Tanh(a) => self.accumulate_unary_from_output(*a, meta.off as usize, n, |y, g| {
                    g * (1.0 - y * y)
                }),
                Op::Softplus(a) => self.accumulate_unary_from_input(*a, n, |x, g| g * sigmoid(x)),
                Op::Log(a) => self.accumulate_unary_from_input(*a, n, |x, g| g / x),
                Op::Square(a) => self.accumulate_unary_from_input(*a, n, |x, g| 2.0 * x * g),
                Op::Relu(a) => {
                    self.accumulate_unary_from_input(*a, n, |x, g| if x > 0.0 { g } else { 0.0 })
                }
                Op::AddScalar(a) => self.accumulate_unary_from_input(*a, n, |_, g| g),
                Op::MulScalar(a, cst) => {
                    let cst = *cst;
                    self.accumulate_unary_from_input(*a, n, move |_, g| g * cst)
                }
                Op::AddCols(a, b) => {
                    let (r, c) = self.shape(*a);
                    let (ao, _) = self.off_len(*a);
                    let (bo, _) = self.off_len(*b);
                    for (d, &g) in self.grads[ao..ao + r * c].iter_mut().zip(&self.scratch) {
                        *d += g;
                    }
                    let db = &mut self.grads[bo..bo + r];
                    for i in 0..r {
                        db[i] += self.scratch[i * c..(i + 1) * c].iter().sum::<f64>();
                    }
                }
                Op::Sum(a) => {
                    let g = self.scratch[0];
                    let (ao, al) = self.off_len(*a);
                    for v in &mut self.grads[ao..ao + al] {
                        *v += g;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let (po, pl) = self.off_len(p);
                        for (d, &g) in self.grads[po..po + pl]
                            .iter_mut()
                            .zip(&self.scratch[at..at + pl])
                        {
                            *d += g;
                        }
                        at += pl;
                    }
                }
                Op::SliceRows { src, row0 } => {
                    let (_, c) = self.shape(*src);
                    let (so, _) = self.off_len(*src);
                    let base = so + *row0 as usize * c;
                    for (d, &g) in self.grads[base..base + n].iter_mut().zip(&self.scratch) {
                        *d += g;
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate binary-op parent grads; `vjp(x, y, g) -> (da, db)`.
    /// Indexed writes keep aliased parents (a == b) correct.
    fn accumulate_binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        n: usize,
        vjp: impl Fn(f64, f64, f64) -> (f64, f64),
    ) {
        let (ao, al) = self.off_len(a);
        let (bo, bl) = self.off_len(b);
        if al == n && bl == n {
            for i in 0..n {
                let (da, db) = vjp(self.values[ao + i], self.values[bo + i], self.scratch[i]);
                self.grads[ao + i] += da;
                self.grads[bo + i] += db;
            }
        } else {
            for i in 0..n {
                let ai = ao + if al == 1 { 0 } else { i };
                let bi = bo + if bl == 1 { 0 } else { i };
                let (da, db) = vjp(self.values[ai], self.values[bi], self.scratch[i]);
                self.grads[ai] += da;
                self.grads[bi] += db;
            }
        }
    }

    fn accumulate_unary_from_input(&mut self, a: NodeId, n: usize, vjp: impl Fn(f64, f64) -> f64) {
        let (ao, _) = self.off_len(a);
        for i in 0..n {
            let x = self.values[ao + i];
            self.grads[ao + i] += vjp(x, self.scratch[i]);
        }
    }

    fn accumulate_unary_from_output(
        &mut self,
        a: NodeId,
        out_off: usize,
        n: usize,
        vjp: impl Fn(f64, f64) -> f64,
    ) {
        let (ao, _) = self.off_len(a);
        for i in 0..n {
            let y = self.values[out_off + i];
            self.grads[ao + i] += vjp(y, self.scratch[i]);
        }
    }
}

/// Max relative disagreement between an analytic gradient and central finite
/// differences of `f` at `theta`:
/// `max_i |analytic_i - (f(θ+he_i) - f(θ-he_i))/2h| / max(1, |analytic_i|)`.
pub fn finite_diff_check<F>(mut f: F, theta: &[f64], step: f64, analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Contract(format!(
            "step must be positive, got {step}"
        )));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let fp = f(&probe)?;
        probe[i] = theta[i] - step;
        let fm = f(&probe)?;
        probe[i] = theta[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite objective value at probe {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[1.0, 0.0, 0.0, 1.0], 2, 2);
        let b = g.leaf_slice(&[3.0, 4.0], 2, 1);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_scalar_product_rule() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[2.0], 1, 1);
        let b = g.leaf_slice(&[5.0], 1, 1);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[10.0]);
        g.backward(c).unwrap();
        assert_eq!(g.grad(a), &[5.0]);
        assert_eq!(g.grad(b), &[2.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[1.0, 2.0], 1, 2);
        let b = g.leaf_slice(&[1.0], 1, 1);
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        // random-ish 3x4 by 4x2 against the finite-difference oracle
        let av: Vec<f64> = (0..12)
            .map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0)
            .collect();
        let bv: Vec<f64> = (0..8)
            .map(|i| ((i * 5 + 1) % 13) as f64 / 6.0 - 1.0)
            .collect();

        let eval = |theta: &[f64]| -> Result<f64> {
            let mut g = Graph::new();
            let a = g.leaf_slice(&theta[..12], 3, 4);
            let b = g.leaf_slice(&theta[12..], 4, 2);
            let c = g.matmul(a, b)?;
            let sq = g.square(c);
            let s = g.sum(sq);
            Ok(g.value_scalar(s))
        };

        let theta: Vec<f64> = av.iter().chain(bv.iter()).copied().collect();
        let mut g = Graph::new();
        let a = g.leaf_slice(&av, 3, 4);
        let b = g.leaf_slice(&bv, 4, 2);
        let c = g.matmul(a, b).unwrap();
        let sq = g.square(c);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        let analytic: Vec<f64> = g.grad(a).iter().chain(g.grad(b)).copied().collect();

        let err = finite_diff_check(eval, &theta, 1e-5, &analytic).unwrap();
        assert!(err < 1e-6, "matmul fd error {err}");
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.scalar(0.0);
        let s = g.sigmoid(x);
        assert_eq!(g.value_scalar(s), 0.5);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &[0.25]);

        let mut g = Graph::new();
        let x = g.scalar(0.0);
        let t = g.tanh(x);
        assert_eq!(g.value_scalar(t), 0.0);
        g.backward(t).unwrap();
        assert_eq!(g.grad(x), &[1.0]);
    }

    #[test]
    fn softplus_value_and_derivative_match_finite_differences() {
        let eval = |theta: &[f64]| -> Result<f64> {
            let mut g = Graph::new();
            let x = g.scalar(theta[0]);
            let y = g.softplus(x);
            Ok(g.value_scalar(y))
        };
        let mut g = Graph::new();
        let x = g.scalar(3.0);
        let y = g.softplus(x);
        assert_relative_eq!(g.value_scalar(y), (1.0 + 3.0f64.exp()).ln(), epsilon = 1e-12);
        g.backward(y).unwrap();
        let analytic = vec![g.grad(x)[0]];
        let err = finite_diff_check(eval, &[3.0], 1e-5, &analytic).unwrap();
        assert!(err < 1e-6, "softplus fd error {err}");
    }

    #[test]
    fn log_domain_error() {
        let mut g = Graph::new();
        let x = g.scalar(-1.0);
        assert!(matches!(g.log(x), Err(Error::Domain(_))));
        let z = g.scalar(0.0);
        assert!(matches!(g.log(z), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_sum_of_leaf_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf_slice(&[1.0, -2.0, 0.5], 3, 1);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_half_squared_norm_gives_x() {
        let mut g = Graph::new();
        let x = g.leaf_slice(&[1.0, -2.0, 0.5], 3, 1);
        let sq = g.square(x);
        let s = g.sum(sq);
        let half = g.mul_scalar(s, 0.5);
        g.backward(half).unwrap();
        assert_eq!(g.grad(x), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf_slice(&[1.0, 2.0], 2, 1);
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_without_reset() {
        let mut g = Graph::new();
        let x = g.scalar(3.0);
        let y = g.square(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), &[6.0]);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), &[12.0]);
        g.zero_grads();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), &[6.0]);
    }

    #[test]
    fn fan_out_sums_both_paths() {
        // f = x*x via two consumers of the same node equals 2x
        let mut g = Graph::new();
        let x = g.scalar(1.7);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_relative_eq!(g.grad(x)[0], 2.0 * 1.7, epsilon = 1e-15);
    }

    #[test]
    fn scalar_broadcast_binary_ops() {
        let mut g = Graph::new();
        let v = g.leaf_slice(&[1.0, 2.0, 3.0], 3, 1);
        let c = g.scalar(2.0);
        let p = g.mul(v, c).unwrap();
        assert_eq!(g.value(p), &[2.0, 4.0, 6.0]);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(v), &[2.0, 2.0, 2.0]);
        assert_eq!(g.grad(c), &[6.0]); // sum of the vector entries
    }

    #[test]
    fn broadcast_rejects_non_scalar_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[1.0, 2.0, 3.0], 3, 1);
        let b = g.leaf_slice(&[1.0, 2.0], 2, 1);
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_and_slice_round_trip_gradients() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[1.0, 2.0], 2, 1);
        let b = g.leaf_slice(&[3.0], 1, 1);
        let cat = g.concat_rows(&[a, b]).unwrap();
        assert_eq!(g.value(cat), &[1.0, 2.0, 3.0]);
        let sl = g.slice_rows(cat, 1, 2).unwrap();
        assert_eq!(g.value(sl), &[2.0, 3.0]);
        let sq = g.square(sl);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a), &[0.0, 4.0]);
        assert_eq!(g.grad(b), &[6.0]);
    }

    #[test]
    fn add_cols_broadcasts_and_accumulates() {
        let mut g = Graph::new();
        let a = g.leaf_slice(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let b = g.leaf_slice(&[10.0, 20.0], 2, 1);
        let c = g.add_cols(a, b).unwrap();
        assert_eq!(g.value(c), &[11.0, 12.0, 23.0, 24.0]);
        let sq = g.square(c);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        // d/db_i = sum_j 2 c_ij
        assert_eq!(g.grad(b), &[2.0 * (11.0 + 12.0), 2.0 * (23.0 + 24.0)]);
        assert_eq!(g.grad(a), &[22.0, 24.0, 46.0, 48.0]);

        let bad = g.leaf_slice(&[1.0, 2.0], 1, 2);
        assert!(matches!(g.add_cols(a, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn div_gradients_and_zero_divisor() {
        let mut g = Graph::new();
        let a = g.scalar(3.0);
        let b = g.scalar(2.0);
        let q = g.div(a, b).unwrap();
        g.backward(q).unwrap();
        assert_relative_eq!(g.grad(a)[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.grad(b)[0], -0.75, epsilon = 1e-15);

        let z = g.scalar(0.0);
        assert!(matches!(g.div(a, z), Err(Error::Domain(_))));
    }

    #[test]
    fn reset_reuses_arena() {
        let mut g = Graph::new();
        for _ in 0..3 {
            g.reset();
            let x = g.scalar(2.0);
            let y = g.square(x);
            g.backward(y).unwrap();
            assert_eq!(g.grad(x), &[4.0]);
        }
    }

    #[test]
    fn finite_diff_check_quadratic() {
        let f = |t: &[f64]| Ok(t[0] * t[0]);
        let err = finite_diff_check(f, &[3.0], 1e-5, &[6.0]).unwrap();
        assert!(err < 1e-9, "quadratic fd error {err}");
    }

    #[test]
    fn finite_diff_check_rejects_bad_args() {
        let f = |t: &[f64]| Ok(t[0]);
        assert!(matches!(
            finite_diff_check(f, &[1.0], 0.0, &[1.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            finite_diff_check(f, &[1.0], 1e-5, &[1.0, 2.0]),
            Err(Error::Shape(_))
        ));
        let bad = |t: &[f64]| Ok((t[0] - 1.0).ln()); // NaN just below 1
        assert!(matches!(
            finite_diff_check(bad, &[1.0], 1e-5, &[0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn values_and_gradients_finite_on_unit_inputs() {
        // inputs normalized to [0,1]: a chain through every op stays finite
        let xs: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        let mut g = Graph::new();
        let x = g.leaf_slice(&xs, 8, 1);
        let s = g.sigmoid(x);
        let t = g.tanh(s);
        let sp = g.softplus(t);
        let shifted = g.add_scalar(sp, 1.0);
        let l = g.log(shifted).unwrap();
        let sq = g.square(l);
        let r = g.relu(sq);
        let total = g.sum(r);
        g.backward(total).unwrap();
        assert!(g.value_scalar(total).is_finite());
        assert!(g.grad(x).iter().all(|v| v.is_finite()));
    }

    proptest::proptest! {
        #[test]
        fn elementwise_gradients_match_finite_differences(
            vals in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            // composite of add/mul/sub/sigmoid/tanh/softplus/square over random inputs
            let eval = |theta: &[f64]| -> Result<f64> {
                let mut g = Graph::new();
                let x = g.leaf_slice(theta, 4, 1);
                let s = g.sigmoid(x);
                let t = g.tanh(x);
                let m = g.mul(s, t)?;
                let sp = g.softplus(x);
                let a = g.add(m, sp)?;
                let d = g.sub(a, t)?;
                let sq = g.square(d);
                let total = g.sum(sq);
                Ok(g.value_scalar(total))
            };
            let mut g = Graph::new();
            let x = g.leaf_slice(&vals, 4, 1);
            let s = g.sigmoid(x);
            let t = g.tanh(x);
            let m = g.mul(s, t).unwrap();
            let sp = g.softplus(x);
            let a = g.add(m, sp).unwrap();
            let d = g.sub(a, t).unwrap();
            let sq = g.square(d);
            let total = g.sum(sq);
            g.backward(total).unwrap();
            let analytic = g.grad(x).to_vec();
            let err = finite_diff_check(eval, &vals, 1e-5, &analytic).unwrap();
            proptest::prop_assert!(err < 1e-4, "fd error {}", err);
        }
    }
}
