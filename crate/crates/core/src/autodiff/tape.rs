use std::sync::Arc;

use crate::dense::{gemm, gemm_into, DenseMat};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Guard against division by a vanishing row norm, as in `F.normalize`.
const NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    /// Dense product whose left operand's current value is sparse; the
    /// forward pass and the right operand's adjoint use the CSR copy.
    MatMulSparseLhs(Var, Var, Arc<CsrMatrix>),
    /// Constant sparse left operand.
    SpMatMul(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Matrix plus a broadcast `1 × c` row.
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    /// Slope is a learnable `1 × 1` value.
    Prelu(Var, Var),
    Elu(Var),
    RowL2Normalize { input: Var, norms: Vec<f64> },
    GcnNorm { input: Var, inv_sqrt: Vec<f64> },
    Transpose(Var),
    Sum(Var),
    /// Row-wise log-sum-exp across the column blocks of several equally
    /// tall matrices; blocks flagged `true` skip their diagonal entry.
    LogSumExpRows {
        parts: Vec<(Var, bool)>,
        /// Softmax weight of every entry, kept for the backward pass.
        weights: Vec<DenseMat>,
    },
    GatherRows(Var, Vec<usize>),
    Diag(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::MatMulSparseLhs(..) => "matmul_sparse_lhs",
            Op::SpMatMul(..) => "spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Hadamard(..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Prelu(..) => "prelu",
            Op::Elu(..) => "elu",
            Op::RowL2Normalize { .. } => "row_l2_normalize",
            Op::GcnNorm { .. } => "gcn_norm",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::LogSumExpRows { .. } => "logsumexp_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::Diag(..) => "diag",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: DenseMat,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation over dense matrices.
///
/// Leaves created with [`Tape::leaf`] receive gradients from
/// [`Tape::backward`]; constants do not. Every op checks operand shapes and,
/// in debug builds, that its output is finite.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: DenseMat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: DenseMat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &DenseMat {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: DenseMat, op: Op, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = gemm(self.value(a), false, self.value(b), false);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let out = gemm(self.value(a), false, self.value(b), true);
        self.push(out, Op::MatMulNt(a, b), &[a, b])
    }

    /// `a · b` where `a` is mostly zeros (a normalized adjacency): same
    /// value and gradients as [`Tape::matmul`], with the forward product and
    /// `b`'s adjoint computed through a CSR copy of `a`.
    pub fn matmul_sparse_lhs(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul_sparse_lhs", sa, sb));
        }
        let csr = Arc::new(CsrMatrix::from_dense(self.value(a)));
        let out = csr.matmul(self.value(b));
        self.push(out, Op::MatMulSparseLhs(a, b, csr), &[a, b])
    }

    /// Sparse constant times a recorded matrix.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, b: Var) -> Result<Var> {
        let sb = self.shape(b);
        if s.cols() != sb.0 {
            return Err(shape_err("spmm", (s.rows(), s.cols()), sb));
        }
        let out = s.matmul(self.value(b));
        self.push(out, Op::SpMatMul(s, b), &[b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Adds the `1 × c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != (1, sa.1) {
            return Err(shape_err("add_row", sa, sb));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).row(0).to_vec();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(&b) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("hadamard", sa, sb));
        }
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// `x` for positive entries, `slope · x` otherwise.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.shape(slope) != (1, 1) {
            return Err(shape_err("prelu", self.shape(a), self.shape(slope)));
        }
        let s = self.value(slope).get(0, 0);
        if !s.is_finite() {
            return Err(Error::NonFinite("prelu slope".into()));
        }
        let out = self.value(a).map(|x| if x > 0.0 { x } else { s * x });
        self.push(out, Op::Prelu(a, slope), &[a, slope])
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a), &[a])
    }

    /// Scales every row to unit Euclidean length.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
        }
        self.push(out, Op::RowL2Normalize { input: a, norms }, &[a])
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = 1 + Σ_j A_ij`, treating the
    /// entries of `A` as continuous variables.
    pub fn gcn_norm(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(shape_err("gcn_norm", (r, c), (r, c)));
        }
        let av = self.value(a);
        let mut inv_sqrt = Vec::with_capacity(r);
        for i in 0..r {
            let d = 1.0 + av.row(i).iter().sum::<f64>();
            if d <= 0.0 {
                return Err(Error::invalid(format!(
                    "gcn_norm: row {i} has non-positive degree {d}"
                )));
            }
            inv_sqrt.push(1.0 / d.sqrt());
        }
        let out = DenseMat::from_fn(r, r, |i, j| {
            let e = av.get(i, j) + if i == j { 1.0 } else { 0.0 };
            e * inv_sqrt[i] * inv_sqrt[j]
        });
        self.push(out, Op::GcnNorm { input: a, inv_sqrt }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Sum of all entries, as a `1 × 1` value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = DenseMat::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Row-wise `log Σ exp` over the concatenated columns of `parts`. A part
    /// flagged `true` must be square and contributes every entry except its
    /// diagonal. Uses max subtraction for stability.
    pub fn logsumexp_rows(&mut self, parts: &[(Var, bool)]) -> Result<Var> {
        let Some(&(first, _)) = parts.first() else {
            return Err(Error::invalid("logsumexp_rows needs at least one input"));
        };
        let rows = self.shape(first).0;
        for &(p, skip_diag) in parts {
            let s = self.shape(p);
            if s.0 != rows || (skip_diag && s.0 != s.1) {
                return Err(shape_err("logsumexp_rows", self.shape(first), s));
            }
        }
        let mut weights: Vec<DenseMat> = parts
            .iter()
            .map(|&(p, _)| DenseMat::zeros(rows, self.shape(p).1))
            .collect();
        let mut out = DenseMat::zeros(rows, 1);
        for i in 0..rows {
            let mut m = f64::NEG_INFINITY;
            for &(p, skip) in parts {
                for (j, &v) in self.value(p).row(i).iter().enumerate() {
                    if v > m && !(skip && j == i) {
                        m = v;
                    }
                }
            }
            let mut s = 0.0;
            for (&(p, skip), w) in parts.iter().zip(weights.iter_mut()) {
                for (j, (e, &v)) in w.row_mut(i).iter_mut().zip(self.value(p).row(i)).enumerate() {
                    if !(skip && j == i) {
                        *e = (v - m).exp();
                        s += *e;
                    }
                }
            }
            let inv = 1.0 / s;
            for w in weights.iter_mut() {
                for e in w.row_mut(i) {
                    *e *= inv;
                }
            }
            out.set(i, 0, m + s.ln());
        }
        let inputs: Vec<Var> = parts.iter().map(|&(p, _)| p).collect();
        let op = Op::LogSumExpRows {
            parts: parts.to_vec(),
            weights,
        };
        self.push(out, op, &inputs)
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let out = self.value(a).select_rows(index);
        self.push(out, Op::GatherRows(a, index.to_vec()), &[a])
    }

    /// Diagonal of a square matrix as an `n × 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(shape_err("diag", (r, c), (r, c)));
        }
        let v = self.value(a);
        let out = DenseMat::from_fn(r, 1, |i, _| v.get(i, i));
        self.push(out, Op::Diag(a), &[a])
    }

    /// Propagates adjoints from the scalar `loss` back to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<DenseMat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMat::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            // Interior adjoints are no longer needed once propagated.
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// The adjoint buffer of `v`, created as zeros on first use; `None`
    /// when `v` does not need a gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<DenseMat>], v: Var) -> Option<&'g mut DenseMat> {
        if !self.needs(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| DenseMat::zeros(r, c)))
    }

    /// Adds the contributions of one node's adjoint `g` to its inputs.
    fn propagate(&self, node: &Node, g: &DenseMat, grads: &mut [Option<DenseMat>]) {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_into(1.0, g, false, self.value(*b), true, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_into(1.0, self.value(*a), true, g, false, 1.0, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_into(1.0, g, false, self.value(*b), false, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_into(1.0, g, true, self.value(*a), false, 1.0, gb);
                }
            }
            Op::MatMulSparseLhs(a, b, csr) => {
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_into(1.0, g, false, self.value(*b), true, 1.0, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    csr.transpose_matmul_acc(g, gb);
                }
            }
            Op::SpMatMul(s, b) => {
                if let Some(gb) = self.slot(grads, *b) {
                    s.transpose_matmul_acc(g, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        gv.axpy(1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.axpy(-1.0, g);
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, g);
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    let col = gb.row_mut(0);
                    for i in 0..g.rows() {
                        for (c, &x) in col.iter_mut().zip(g.row(i)) {
                            *c += x;
                        }
                    }
                }
            }
            Op::Hadamard(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if let Some(gv) = self.slot(grads, v) {
                        let o = self.value(other).as_slice();
                        for ((d, &gi), &oi) in gv.as_mut_slice().iter_mut().zip(g.as_slice()).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(*c, g);
                }
            }
            Op::Prelu(a, slope) => {
                let x = self.value(*a).as_slice();
                let s = self.value(*slope).get(0, 0);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &xv), &gv) in ga.as_mut_slice().iter_mut().zip(x).zip(g.as_slice()) {
                        *d += if xv > 0.0 { gv } else { s * gv };
                    }
                }
                if let Some(gs) = self.slot(grads, *slope) {
                    let ds: f64 = x
                        .iter()
                        .zip(g.as_slice())
                        .filter(|(&xv, _)| xv <= 0.0)
                        .map(|(&xv, &gv)| xv * gv)
                        .sum();
                    gs.add_at(0, 0, ds);
                }
            }
            Op::Elu(a) => {
                let x = self.value(*a).as_slice();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &xv), &gv) in ga.as_mut_slice().iter_mut().zip(x).zip(g.as_slice()) {
                        *d += if xv > 0.0 { gv } else { gv * xv.exp() };
                    }
                }
            }
            Op::RowL2Normalize { input, norms } => {
                let y = &node.value;
                if let Some(gx) = self.slot(grads, *input) {
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let norm = norms[i];
                        // Below the clamp the op is a plain scaling by 1/eps.
                        let dot: f64 = if norm > NORM_EPS {
                            yr.iter().zip(gr).map(|(a, b)| a * b).sum()
                        } else {
                            0.0
                        };
                        for ((d, &yv), &gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *d += (gv - yv * dot) / norm;
                        }
                    }
                }
            }
            Op::GcnNorm { input, inv_sqrt } => {
                let a = self.value(*input);
                let n = a.rows();
                // r_i = Σ_l G_il Ã_il s_l + Σ_k G_ki Ã_ki s_k, with Ã = A + I.
                let mut r = vec![0.0; n];
                for i in 0..n {
                    let (gr, ar) = (g.row(i), a.row(i));
                    let mut own = 0.0;
                    for l in 0..n {
                        let t = gr[l] * (ar[l] + if i == l { 1.0 } else { 0.0 });
                        own += t * inv_sqrt[l];
                        r[l] += t * inv_sqrt[i];
                    }
                    r[i] += own;
                }
                if let Some(da) = self.slot(grads, *input) {
                    for i in 0..n {
                        // ∂s_i/∂d_i = -½ d_i^{-3/2} = -½ s_i³
                        let ds = -0.5 * inv_sqrt[i].powi(3) * r[i];
                        let si = inv_sqrt[i];
                        for ((d, &gv), &sj) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(inv_sqrt) {
                            *d += gv * si * sj + ds;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.axpy(1.0, &g.transpose());
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let s = g.get(0, 0);
                    for d in ga.as_mut_slice() {
                        *d += s;
                    }
                }
            }
            Op::LogSumExpRows { parts, weights } => {
                for (&(p, _), w) in parts.iter().zip(weights) {
                    if let Some(gp) = self.slot(grads, p) {
                        for i in 0..w.rows() {
                            let gi = g.get(i, 0);
                            for (d, &wv) in gp.row_mut(i).iter_mut().zip(w.row(i)) {
                                *d += gi * wv;
                            }
                        }
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, &i) in index.iter().enumerate() {
                        for (d, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Diag(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.rows() {
                        ga.add_at(i, i, g.get(i, 0));
                    }
                }
            }
        }
    }
}

/// Adjoints of every leaf with respect to the loss passed to
/// [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<DenseMat>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> DenseMat {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMat::zeros(r, c)
            }
        }
    }

    /// Moves the gradient for `v` out, leaving zero behind.
    pub fn take(&mut self, v: Var) -> DenseMat {
        self.grads[v.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            DenseMat::zeros(r, c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, sample_coordinates};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMat {
        DenseMat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn all(m: &DenseMat) -> Vec<(usize, usize)> {
        (0..m.rows()).flat_map(|i| (0..m.cols()).map(move |j| (i, j))).collect()
    }

    /// Reduces any matrix output to a scalar through a fixed random weighting
    /// so that every output entry contributes a distinct adjoint.
    fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = tape.value(v).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(random(r, c, &mut rng));
        let p = tape.hadamard(v, w)?;
        tape.sum(p)
    }

    fn check<F>(x: &DenseMat, f: F) -> f64
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        finite_difference_check(
            |t, v| {
                let out = f(t, v)?;
                weighted_sum(t, out, 99)
            },
            x,
            1e-6,
            &all(x),
        )
        .unwrap()
    }

    #[test]
    fn identity_matmul_gradient_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let i = t.constant(DenseMat::identity(3));
        let b = t.leaf(random(3, 4, &mut rng));
        let p = t.matmul(i, b).unwrap();
        assert_eq!(t.value(p), t.value(b));
        let s = t.sum(p).unwrap();
        assert_eq!(t.backward(s).unwrap().get(b), DenseMat::filled(3, 4, 1.0));
    }

    #[test]
    fn sum_gradient_and_disconnected_leaf() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMat::filled(2, 3, 0.5));
        let other = t.leaf(DenseMat::filled(4, 1, 2.0));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), DenseMat::filled(2, 3, 1.0));
        assert_eq!(g.get(other), DenseMat::zeros(4, 1));
    }

    #[test]
    fn row_normalize_example() {
        let x = DenseMat::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = t.row_l2_normalize(v).unwrap();
        assert!((t.value(y).get(0, 0) - 0.6).abs() < 1e-15);
        assert!((t.value(y).get(0, 1) - 0.8).abs() < 1e-15);
        let first = t.constant(DenseMat::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let picked = t.hadamard(y, first).unwrap();
        let s = t.sum(picked).unwrap();
        let g = t.backward(s).unwrap().get(v);
        // d(x0/|x|)/dx = (|x|² e0 − x0 x) / |x|³ = [16, -12] / 125
        assert!((g.get(0, 0) - 0.128).abs() < 1e-15);
        assert!((g.get(0, 1) + 0.096).abs() < 1e-15);
        let err = finite_difference_check(
            |t, v| {
                let y = t.row_l2_normalize(v)?;
                let w = t.constant(DenseMat::from_rows(&[vec![1.0, 0.0]])?);
                let p = t.hadamard(y, w)?;
                t.sum(p)
            },
            &x,
            1e-6,
            &all(&x),
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gcn_norm_two_node_path() {
        let a = DenseMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(a.clone());
        let h = t.gcn_norm(v).unwrap();
        for x in t.value(h).as_slice() {
            assert!((x - 0.5).abs() < 1e-15);
        }
        assert!(check(&a, |t, v| t.gcn_norm(v)) < 1e-5);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(4, 3, &mut rng);
        let b = random(3, 5, &mut rng);
        let c = random(4, 3, &mut rng);
        let sq = random(4, 4, &mut rng);
        let row = random(1, 3, &mut rng);
        let slope = DenseMat::scalar(0.25);
        let tol = 1e-5;

        let bv = b.clone();
        assert!(check(&a, |t, v| { let o = t.constant(bv.clone()); t.matmul(v, o) }) < tol);
        let av = a.clone();
        assert!(check(&b, |t, v| { let o = t.constant(av.clone()); t.matmul(o, v) }) < tol);
        let cv = c.clone();
        assert!(check(&a, |t, v| { let o = t.constant(cv.clone()); t.matmul_nt(v, o) }) < tol);
        assert!(check(&a, |t, v| { let o = t.constant(cv.clone()); t.matmul_nt(o, v) }) < tol);
        assert!(check(&a, |t, v| t.matmul_nt(v, v)) < tol);
        assert!(check(&a, |t, v| { let o = t.constant(cv.clone()); t.add(v, o) }) < tol);
        assert!(check(&a, |t, v| { let o = t.constant(cv.clone()); t.sub(o, v) }) < tol);
        assert!(check(&a, |t, v| { let o = t.constant(cv.clone()); t.hadamard(v, o) }) < tol);
        assert!(check(&a, |t, v| t.hadamard(v, v)) < tol);
        assert!(check(&a, |t, v| t.scale(v, -1.7)) < tol);
        let rv = row.clone();
        assert!(check(&a, |t, v| { let r = t.constant(rv.clone()); t.add_row(v, r) }) < tol);
        assert!(check(&row, |t, v| { let m = t.constant(av.clone()); t.add_row(m, v) }) < tol);
        let sl = slope.clone();
        assert!(check(&a, |t, v| { let s = t.constant(sl.clone()); t.prelu(v, s) }) < tol);
        assert!(check(&slope, |t, v| { let m = t.constant(av.clone()); t.prelu(m, v) }) < tol);
        assert!(check(&a, |t, v| t.elu(v)) < tol);
        assert!(check(&a, |t, v| t.row_l2_normalize(v)) < tol);
        let nonneg = sq.map(f64::abs);
        assert!(check(&nonneg, |t, v| t.gcn_norm(v)) < tol);
        assert!(check(&a, |t, v| t.transpose(v)) < tol);
        let sparse_sq = sq.map(|v| if v > 0.3 { v } else { 0.0 });
        let sp = sparse_sq.clone();
        assert!(check(&sparse_sq, |t, v| { let o = t.constant(av.clone()); t.matmul_sparse_lhs(v, o) }) < tol);
        assert!(check(&a, |t, v| { let s = t.constant(sp.clone()); t.matmul_sparse_lhs(s, v) }) < tol);
        assert!(check(&sq, |t, v| t.diag(v)) < tol);
        assert!(check(&a, |t, v| t.gather_rows(v, &[3, 0, 3, 1])) < tol);
        let sqv = sq.clone();
        assert!(check(&sq, |t, v| t.logsumexp_rows(&[(v, true)])) < tol);
        assert!(
            check(&sq, |t, v| {
                let o = t.constant(sqv.clone());
                t.logsumexp_rows(&[(o, false), (v, true)])
            }) < tol
        );
    }

    #[test]
    fn logsumexp_is_stable_and_skips_diagonal() {
        let x = DenseMat::from_rows(&[vec![1000.0, 1.0], vec![2.0, 1000.0]]).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(x);
        let all_entries = t.logsumexp_rows(&[(v, false)]).unwrap();
        assert!((t.value(all_entries).get(0, 0) - 1000.0).abs() < 1e-12);
        let off = t.logsumexp_rows(&[(v, true)]).unwrap();
        assert_eq!(t.value(off).get(0, 0), 1.0);
        assert_eq!(t.value(off).get(1, 0), 2.0);
    }

    #[test]
    fn gather_scatter_counts() {
        let mut t = Tape::new();
        let x = t.leaf(DenseMat::zeros(4, 2));
        let g = t.gather_rows(x, &[1, 1, 3]).unwrap();
        let s = t.sum(g).unwrap();
        let grad = t.backward(s).unwrap().get(x);
        let expect = DenseMat::from_rows(&[vec![0.0; 2], vec![2.0; 2], vec![0.0; 2], vec![1.0; 2]]).unwrap();
        assert_eq!(grad, expect);
    }

    #[test]
    fn three_layer_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(20, 8, &mut rng);
        let w1 = random(8, 8, &mut rng);
        let w2 = random(8, 8, &mut rng);
        let w3 = random(8, 8, &mut rng);
        let net = |t: &mut Tape, x: Var, w: [&DenseMat; 3], which: usize, leaf: Var| -> Result<Var> {
            let ws: Vec<Var> = (0..3)
                .map(|k| if k == which { leaf } else { t.constant(w[k].clone()) })
                .collect();
            let slope = t.constant(DenseMat::scalar(0.25));
            let h = t.matmul(x, ws[0])?;
            let h = t.prelu(h, slope)?;
            let h = t.matmul(h, ws[1])?;
            let h = t.elu(h)?;
            let h = t.matmul(h, ws[2])?;
            let h = t.row_l2_normalize(h)?;
            let s = t.matmul_nt(h, h)?;
            let l = t.logsumexp_rows(&[(s, true)])?;
            t.sum(l)
        };
        let ws = [&w1, &w2, &w3];
        for which in 0..3 {
            let err = finite_difference_check(
                |t, v| {
                    let xv = t.constant(x.clone());
                    net(t, xv, ws, which, v)
                },
                ws[which],
                1e-6,
                &all(ws[which]),
            )
            .unwrap();
            assert!(err < 1e-4, "layer {which}: {err}");
        }
        let err = finite_difference_check(
            |t, v| net(t, v, ws, 3, v),
            &x,
            1e-6,
            &sample_coordinates(20, 8, 60, &mut rng),
        )
        .unwrap();
        assert!(err < 1e-4, "input: {err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(5, 5, &mut rng);
        let err = finite_difference_check(|t, v| { let s = t.scale(v, 3.0)?; t.sum(s) }, &x, 1e-3, &all(&x)).unwrap();
        assert!(err < 1e-9);
        assert!(finite_difference_check(|t, v| t.sum(v), &x, 0.0, &all(&x)).is_err());
    }

    #[test]
    fn sparse_and_dense_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DenseMat::from_fn(6, 6, |_, _| if rng.random_bool(0.3) { rng.random() } else { 0.0 });
        let b = random(6, 3, &mut rng);
        let mut t = Tape::new();
        let bv = t.leaf(b);
        let dense = t.constant(s.clone());
        let d = t.matmul(dense, bv).unwrap();
        let sp = t.spmm(Arc::new(CsrMatrix::from_dense(&s)), bv).unwrap();
        let diff = t.value(d).zip_map(t.value(sp), |x, y| (x - y).abs()).max_abs();
        assert!(diff < 1e-14);
        let l1 = weighted_sum(&mut t, d, 7).unwrap();
        let g1 = t.backward(l1).unwrap().get(bv);
        let l2 = weighted_sum(&mut t, sp, 7).unwrap();
        let g2 = t.backward(l2).unwrap().get(bv);
        assert!(g1.zip_map(&g2, |x, y| (x - y).abs()).max_abs() < 1e-14);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::new();
        let a = t.leaf(DenseMat::zeros(2, 3));
        let b = t.leaf(DenseMat::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.gcn_norm(a), Err(Error::Shape(_))));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(DenseMat::filled(1, 1, 1e300));
        assert!(matches!(t.matmul(a, a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rerun_is_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut t = Tape::new();
            let x = t.leaf(random(10, 4, &mut rng));
            let h = t.row_l2_normalize(x).unwrap();
            let s = t.matmul_nt(h, h).unwrap();
            let l = t.logsumexp_rows(&[(s, true)]).unwrap();
            let l = t.sum(l).unwrap();
            t.backward(l).unwrap().get(x)
        };
        assert_eq!(run(), run());
    }
}
