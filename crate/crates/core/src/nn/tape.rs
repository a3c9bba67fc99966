//! Record-and-replay reverse-mode differentiation over a fixed set of
//! primitive operations.
//!
//! Activations are `(B·n) × F` matrices: the rows of sample `b` occupy
//! `b·n .. (b+1)·n`. Because nalgebra is column-major, that buffer is also an
//! `n × (F·B)` matrix, so a graph operator shifts a whole minibatch with one
//! [`CsrMatrix::mul_blocks`] call.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::nn::tensor::ParamSet;
use crate::sparse::CsrMatrix;

/// Work (stored entries × columns) below which shift fan-out stays serial.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Input,
    Param(usize),
    /// `S X` blockwise.
    Shift(&'a CsrMatrix, Var),
    /// `[S_1 X | S_2 X | …]` side by side.
    ShiftConcat(&'a [CsrMatrix], Var),
    /// `[S_1 X ; S_2 X ; …]` stacked vertically.
    ShiftStack(&'a [CsrMatrix], Var),
    /// `Σ_k S_k Y_k` where `Y = [Y_1 | Y_2 | …]`.
    ShiftSum(&'a [CsrMatrix], Var),
    MatMul(Var, Var),
    Sum(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Adds a `1 × F` row to every row.
    AddRow(Var, Var),
    Relu(Var),
    /// `(K·r) × c` vertical blocks rearranged into `r × (K·c)`.
    StackToRow(Var, usize),
    /// Sums `K` vertical blocks into one.
    BlockSum(Var, usize),
    Mse {
        pred: Var,
        target: DMatrix<f64>,
        row_weight: Vec<f64>,
        count: f64,
    },
    CrossEntropy {
        logits: Var,
        n: usize,
        candidates: Vec<usize>,
        labels: Vec<usize>,
        probs: Vec<Vec<f64>>,
    },
}

struct Node<'a> {
    value: DMatrix<f64>,
    op: Op<'a>,
    /// Whether any parameter feeds into this node.
    needs_grad: bool,
}

impl Op<'_> {
    fn args(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Shift(_, x)
            | Op::ShiftConcat(_, x)
            | Op::ShiftStack(_, x)
            | Op::ShiftSum(_, x)
            | Op::Relu(x)
            | Op::StackToRow(x, _)
            | Op::BlockSum(x, _) => vec![*x],
            Op::MatMul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Sum(v) | Op::ConcatCols(v) => v.clone(),
            Op::Mse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op<'a>) -> Var {
        let needs_grad = matches!(op, Op::Param(_))
            || op.args().iter().any(|a| self.nodes[a.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, params: &ParamSet, idx: usize) -> Var {
        self.push(params.get(idx).value.clone(), Op::Param(idx))
    }

    pub fn shift(&mut self, s: &'a CsrMatrix, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.nrows().is_multiple_of(s.ncols()) {
            return Err(shape_err(format!(
                "{} rows not a multiple of operator size {}",
                xv.nrows(),
                s.ncols()
            )));
        }
        let mut out = DMatrix::zeros(xv.nrows(), xv.ncols());
        s.mul_blocks(xv.as_slice(), out.as_mut_slice());
        Ok(self.push(out, Op::Shift(s, x)))
    }

    fn check_ops(&self, ops: &[CsrMatrix], rows: usize) -> Result<usize> {
        let n = ops
            .first()
            .map(|s| s.ncols())
            .ok_or_else(|| shape_err("empty operator list".into()))?;
        if !rows.is_multiple_of(n) {
            return Err(shape_err(format!("{rows} rows not a multiple of {n}")));
        }
        Ok(n)
    }

    pub fn shift_concat(&mut self, ops: &'a [CsrMatrix], x: Var) -> Result<Var> {
        let xv = self.value(x);
        self.check_ops(ops, xv.nrows())?;
        let block = xv.len();
        let mut out = DMatrix::zeros(xv.nrows(), xv.ncols() * ops.len());
        fan_out(ops, xv.as_slice(), out.as_mut_slice(), block, |s, x, o| {
            s.mul_blocks(x, o)
        });
        Ok(self.push(out, Op::ShiftConcat(ops, x)))
    }

    pub fn shift_stack(&mut self, ops: &'a [CsrMatrix], x: Var) -> Result<Var> {
        let xv = self.value(x);
        self.check_ops(ops, xv.nrows())?;
        let (r, c) = xv.shape();
        let k = ops.len();
        let mut out = DMatrix::zeros(r * k, c);
        let mut buf = vec![0.0; r * c];
        for (i, s) in ops.iter().enumerate() {
            s.mul_blocks(xv.as_slice(), &mut buf);
            for col in 0..c {
                out.column_mut(col)
                    .rows_mut(i * r, r)
                    .copy_from_slice(&buf[col * r..(col + 1) * r]);
            }
        }
        Ok(self.push(out, Op::ShiftStack(ops, x)))
    }

    pub fn shift_sum(&mut self, ops: &'a [CsrMatrix], y: Var) -> Result<Var> {
        let yv = self.value(y);
        self.check_ops(ops, yv.nrows())?;
        if !yv.ncols().is_multiple_of(ops.len()) {
            return Err(shape_err(format!(
                "{} columns not divisible into {} operator blocks",
                yv.ncols(),
                ops.len()
            )));
        }
        let f = yv.ncols() / ops.len();
        let block = yv.nrows() * f;
        let mut out = DMatrix::zeros(yv.nrows(), f);
        let mut buf = vec![0.0; block];
        for (i, s) in ops.iter().enumerate() {
            s.mul_blocks(&yv.as_slice()[i * block..(i + 1) * block], &mut buf);
            for (o, b) in out.as_mut_slice().iter_mut().zip(&buf) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::ShiftSum(ops, y)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = av * bv;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn sum(&mut self, vars: Vec<Var>) -> Result<Var> {
        let first = *vars
            .first()
            .ok_or_else(|| shape_err("sum of nothing".into()))?;
        let mut out = self.value(first).clone();
        for &v in &vars[1..] {
            let vv = self.value(v);
            if vv.shape() != out.shape() {
                return Err(shape_err(format!("sum {:?} + {:?}", out.shape(), vv.shape())));
            }
            out += vv;
        }
        Ok(self.push(out, Op::Sum(vars)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.sum(vec![a, b])
    }

    pub fn concat_cols(&mut self, vars: Vec<Var>) -> Result<Var> {
        let rows = vars
            .first()
            .map(|&v| self.value(v).nrows())
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let cols: usize = vars.iter().map(|&v| self.value(v).ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut off = 0;
        for &v in &vars {
            let vv = self.value(v);
            if vv.nrows() != rows {
                return Err(shape_err(format!("concat rows {} vs {rows}", vv.nrows())));
            }
            out.columns_mut(off, vv.ncols()).copy_from(vv);
            off += vv.ncols();
        }
        Ok(self.push(out, Op::ConcatCols(vars)))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(shape_err(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(bv[(0, j)]);
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn stack_to_row(&mut self, x: Var, blocks: usize) -> Result<Var> {
        let xv = self.value(x);
        if blocks == 0 || !xv.nrows().is_multiple_of(blocks) {
            return Err(shape_err(format!("{} rows into {blocks} blocks", xv.nrows())));
        }
        let r = xv.nrows() / blocks;
        let c = xv.ncols();
        let mut out = DMatrix::zeros(r, blocks * c);
        for k in 0..blocks {
            out.columns_mut(k * c, c).copy_from(&xv.rows(k * r, r));
        }
        Ok(self.push(out, Op::StackToRow(x, blocks)))
    }

    pub fn block_sum(&mut self, x: Var, blocks: usize) -> Result<Var> {
        let xv = self.value(x);
        if blocks == 0 || !xv.nrows().is_multiple_of(blocks) {
            return Err(shape_err(format!("{} rows into {blocks} blocks", xv.nrows())));
        }
        let r = xv.nrows() / blocks;
        let mut out = DMatrix::zeros(r, xv.ncols());
        for k in 0..blocks {
            out += xv.rows(k * r, r);
        }
        Ok(self.push(out, Op::BlockSum(x, blocks)))
    }

    /// Mean squared error over entries whose node (row modulo `n`) is
    /// selected by `mask`; all nodes when `mask` is `None`.
    pub fn mse(
        &mut self,
        pred: Var,
        target: DMatrix<f64>,
        n: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || !pv.nrows().is_multiple_of(n) {
            return Err(shape_err(format!(
                "mse pred {:?} target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: m.len(),
                });
            }
        }
        let row_weight: Vec<f64> = (0..pv.nrows())
            .map(|r| match mask {
                Some(m) if !m[r % n] => 0.0,
                _ => 1.0,
            })
            .collect();
        let count = row_weight.iter().sum::<f64>() * pv.ncols() as f64;
        if count == 0.0 {
            return Err(Error::EmptyMask);
        }
        let mut total = 0.0;
        for (j, col) in pv.column_iter().enumerate() {
            for (r, &p) in col.iter().enumerate() {
                let d = p - target[(r, j)];
                total += row_weight[r] * d * d;
            }
        }
        let out = DMatrix::from_element(1, 1, total / count);
        Ok(self.push(
            out,
            Op::Mse {
                pred,
                target,
                row_weight,
                count,
            },
        ))
    }

    /// Mean cross-entropy of per-sample logits restricted to `candidates`.
    /// `labels[b]` indexes into `candidates`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        n: usize,
        candidates: &[usize],
        labels: &[usize],
    ) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ncols() != 1 || lv.nrows() != n * labels.len() {
            return Err(shape_err(format!(
                "logits {:?} for {} samples of {n} nodes",
                lv.shape(),
                labels.len()
            )));
        }
        if candidates.is_empty() || labels.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(labels.len());
        for (b, &label) in labels.iter().enumerate() {
            if label >= candidates.len() {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: candidates.len(),
                });
            }
            let z: Vec<f64> = candidates.iter().map(|&c| lv[(b * n + c, 0)]).collect();
            let (loss, p) = softmax_xent(&z, label);
            total += loss;
            probs.push(p);
        }
        let out = DMatrix::from_element(1, 1, total / labels.len() as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                n,
                candidates: candidates.to_vec(),
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Propagates `d loss / d node` back through the tape and accumulates
    /// parameter gradients into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::NoForwardRecorded);
        }
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(a) => *a += g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let args = node.op.args();
            if !args.is_empty() && args.iter().all(|a| !self.nodes[a.0].needs_grad) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(p) => params.get_mut(*p).accumulate_grad(&g),
                Op::Shift(s, x) => {
                    let mut dx = DMatrix::zeros(g.nrows(), g.ncols());
                    s.tr_mul_blocks_acc(g.as_slice(), dx.as_mut_slice());
                    acc(&mut grads, *x, dx);
                }
                Op::ShiftConcat(ops, x) => {
                    let xv = self.value(*x);
                    let block = xv.len();
                    let mut dx = DMatrix::zeros(xv.nrows(), xv.ncols());
                    for (i, s) in ops.iter().enumerate() {
                        s.tr_mul_blocks_acc(
                            &g.as_slice()[i * block..(i + 1) * block],
                            dx.as_mut_slice(),
                        );
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ShiftStack(ops, x) => {
                    let xv = self.value(*x);
                    let (r, c) = xv.shape();
                    let mut dx = DMatrix::zeros(r, c);
                    let mut buf = vec![0.0; r * c];
                    for (i, s) in ops.iter().enumerate() {
                        for col in 0..c {
                            buf[col * r..(col + 1) * r]
                                .copy_from_slice(g.column(col).rows(i * r, r).as_slice());
                        }
                        s.tr_mul_blocks_acc(&buf, dx.as_mut_slice());
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ShiftSum(ops, y) => {
                    let yv = self.value(*y);
                    let block = g.len();
                    let mut dy = DMatrix::zeros(yv.nrows(), yv.ncols());
                    fan_out(ops, g.as_slice(), dy.as_mut_slice(), block, |s, g, o| {
                        o.fill(0.0);
                        s.tr_mul_blocks_acc(g, o)
                    });
                    acc(&mut grads, *y, dy);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = &g * self.value(*b).transpose();
                        acc(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = self.value(*a).transpose() * &g;
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Sum(vars) => {
                    for &v in vars {
                        acc(&mut grads, v, g.clone());
                    }
                }
                Op::ConcatCols(vars) => {
                    let mut off = 0;
                    for &v in vars {
                        let c = self.value(v).ncols();
                        acc(&mut grads, v, g.columns(off, c).into_owned());
                        off += c;
                    }
                }
                Op::AddRow(x, bias) => {
                    let db = DMatrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum());
                    acc(&mut grads, *bias, db);
                    acc(&mut grads, *x, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx = g.zip_map(xv, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                    acc(&mut grads, *x, dx);
                }
                Op::StackToRow(x, blocks) => {
                    let xv = self.value(*x);
                    let r = xv.nrows() / blocks;
                    let c = xv.ncols();
                    let mut dx = DMatrix::zeros(xv.nrows(), c);
                    for k in 0..*blocks {
                        dx.rows_mut(k * r, r).copy_from(&g.columns(k * c, c));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::BlockSum(x, blocks) => {
                    let r = g.nrows();
                    let mut dx = DMatrix::zeros(r * blocks, g.ncols());
                    for k in 0..*blocks {
                        dx.rows_mut(k * r, r).copy_from(&g);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Mse {
                    pred,
                    target,
                    row_weight,
                    count,
                } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g[(0, 0)] / count;
                    let dp = DMatrix::from_fn(pv.nrows(), pv.ncols(), |r, c| {
                        scale * row_weight[r] * (pv[(r, c)] - target[(r, c)])
                    });
                    acc(&mut grads, *pred, dp);
                }
                Op::CrossEntropy {
                    logits,
                    n,
                    candidates,
                    labels,
                    probs,
                } => {
                    let lv = self.value(*logits);
                    let scale = g[(0, 0)] / labels.len() as f64;
                    let mut dl = DMatrix::zeros(lv.nrows(), 1);
                    for (b, (&label, p)) in labels.iter().zip(probs).enumerate() {
                        for (j, &c) in candidates.iter().enumerate() {
                            let ind = if j == label { 1.0 } else { 0.0 };
                            dl[(b * n + c, 0)] += scale * (p[j] - ind);
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        Ok(())
    }
}

/// `-log softmax(z)[label]` with max subtraction, plus the softmax itself.
pub fn softmax_xent(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = -(z[label] - m - total.ln());
    (loss, exps.iter().map(|e| e / total).collect())
}

/// Runs `f(op_k, x, out_k)` for every operator on a shared input, writing
/// disjoint `block`-sized slices of `out`.
fn fan_out<F>(ops: &[CsrMatrix], x: &[f64], out: &mut [f64], block: usize, f: F)
where
    F: Fn(&CsrMatrix, &[f64], &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let work: usize = ops.iter().map(|s| s.nnz()).sum::<usize>()
            * (x.len() / ops[0].ncols().max(1)).max(1);
        if work >= PAR_MIN_WORK {
            use rayon::prelude::*;
            out.par_chunks_mut(block)
                .zip(ops.par_iter())
                .for_each(|(o, s)| f(s, x, o));
            return;
        }
    }
    for (o, s) in out.chunks_mut(block).zip(ops) {
        f(s, x, o);
    }
}
