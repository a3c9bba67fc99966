//! DCN, PDCN and the FB-GCNN / GCN / MLP baselines.
//!
//! Every model maps a `(B·n) × F_in` activation matrix to `(B·n) × F_out`
//! and records itself on a [`Tape`] so gradients come from one engine.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::gso::CausalGsoSet;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{ParamSet, Tensor2};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidParams(format!(
            "layer widths {widths:?} need at least input and output sizes, all positive"
        )));
    }
    Ok(())
}

fn check_input(tape: &Tape<'_>, x: Var, n: Option<usize>, f_in: usize) -> Result<()> {
    let v = tape.value(x);
    if v.ncols() != f_in || n.is_some_and(|n| !v.nrows().is_multiple_of(n)) {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} needs {f_in} features{}",
            v.shape(),
            n.map(|n| format!(" and a multiple of {n} rows"))
                .unwrap_or_default()
        )));
    }
    Ok(())
}

/// DAG convolutional network:
/// `X⁽ˡ⁾ = σ(Σ_k S_k X⁽ˡ⁻¹⁾ Θ_k⁽ˡ⁾)`.
///
/// Layer `l` stores its per-anchor matrices stacked vertically as one
/// `(K·F_i) × F_o` parameter, anchor order matching the GSO set.
#[derive(Debug, Clone)]
pub struct Dcn {
    ops: Vec<CsrMatrix>,
    n: usize,
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

impl Dcn {
    pub fn new(gsos: &CausalGsoSet, widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        Ok(Self {
            ops: gsos.members().iter().map(|m| m.matrix().clone()).collect(),
            n: gsos.n(),
            widths,
            hidden: Activation::Relu,
            output: Activation::Identity,
        })
    }

    pub fn with_activations(mut self, hidden: Activation, output: Activation) -> Self {
        self.hidden = hidden;
        self.output = output;
        self
    }

    pub fn anchors(&self) -> usize {
        self.ops.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let k = self.ops.len();
        let mut p = ParamSet::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            p.push(
                format!("layer{l}.theta"),
                Tensor2::glorot(k * w[0], w[1], k * w[0], w[1], rng),
            );
        }
        p
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        check_input(tape, x, Some(self.n), self.widths[0])?;
        let k = self.ops.len();
        let layers = self.widths.len() - 1;
        let mut h = x;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (f_in, f_out) = (w[0], w[1]);
            let theta = tape.param(params, l);
            if tape.value(theta).shape() != (k * f_in, f_out) {
                return Err(Error::ShapeMismatch(format!("layer{l}.theta")));
            }
            // pick the association that shifts the narrower signal
            let z = if f_in <= f_out {
                let shifted = tape.shift_concat(&self.ops, h)?;
                tape.matmul(shifted, theta)?
            } else {
                let wide = tape.stack_to_row(theta, k)?;
                let mixed = tape.matmul(h, wide)?;
                tape.shift_sum(&self.ops, mixed)?
            };
            let act = if l + 1 == layers { self.output } else { self.hidden };
            h = act.apply(tape, z);
        }
        Ok(h)
    }
}

/// Parallel DCN: one MLP, shared across branches, applied to every shifted
/// input `S_k X`; branch outputs are summed.
#[derive(Debug, Clone)]
pub struct Pdcn {
    ops: Vec<CsrMatrix>,
    n: usize,
    widths: Vec<usize>,
}

impl Pdcn {
    pub fn new(gsos: &CausalGsoSet, widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        Ok(Self {
            ops: gsos.members().iter().map(|m| m.matrix().clone()).collect(),
            n: gsos.n(),
            widths,
        })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        mlp_params(&self.widths, rng)
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        check_input(tape, x, Some(self.n), self.widths[0])?;
        let stacked = tape.shift_stack(&self.ops, x)?;
        let out = mlp_forward(tape, params, &self.widths, stacked)?;
        tape.block_sum(out, self.ops.len())
    }
}

/// Filterbank GCNN: `X⁽ˡ⁾ = σ(Σ_{r<R} Aʳ X⁽ˡ⁻¹⁾ Θ_r⁽ˡ⁾)` with powers applied
/// by repeated sparse shifts.
#[derive(Debug, Clone)]
pub struct FbGcnn {
    adjacency: CsrMatrix,
    order: usize,
    widths: Vec<usize>,
}

impl FbGcnn {
    pub fn new(adjacency: CsrMatrix, order: usize, widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        if order == 0 {
            return Err(Error::InvalidParams("filter order must be at least 1".into()));
        }
        Ok(Self {
            adjacency,
            order,
            widths,
        })
    }

    pub fn from_dag(d: &Dag, order: usize, widths: Vec<usize>) -> Result<Self> {
        Self::new(d.adjacency(), order, widths)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            p.push(
                format!("layer{l}.theta"),
                Tensor2::glorot(self.order * w[0], w[1], self.order * w[0], w[1], rng),
            );
        }
        p
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        check_input(tape, x, Some(self.adjacency.ncols()), self.widths[0])?;
        let layers = self.widths.len() - 1;
        let mut h = x;
        for l in 0..layers {
            let mut powers = vec![h];
            for _ in 1..self.order {
                let prev = *powers.last().unwrap();
                powers.push(tape.shift(&self.adjacency, prev)?);
            }
            let stacked = if powers.len() == 1 {
                h
            } else {
                tape.concat_cols(powers)?
            };
            let theta = tape.param(params, l);
            let z = tape.matmul(stacked, theta)?;
            h = if l + 1 == layers { z } else { tape.relu(z) };
        }
        Ok(h)
    }
}

/// Symmetrically normalized undirected operator with self loops,
/// `D̂^{-1/2} (A + Aᵀ + I) D̂^{-1/2}`, on the binary edge structure.
pub fn gcn_operator(d: &Dag) -> CsrMatrix {
    let n = d.n();
    let mut t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for e in d.edges() {
        t.push((e.target, e.source, 1.0));
        t.push((e.source, e.target, 1.0));
    }
    let s = CsrMatrix::from_triplets(n, n, &t);
    let deg: Vec<f64> = (0..n).map(|i| s.row(i).map(|(_, v)| v).sum()).collect();
    let scaled: Vec<_> = s
        .triplets()
        .map(|(i, j, v)| (i, j, v / (deg[i] * deg[j]).sqrt()))
        .collect();
    CsrMatrix::from_triplets(n, n, &scaled)
}

/// Graph convolutional network: `X⁽ˡ⁾ = σ(Â X⁽ˡ⁻¹⁾ Θ⁽ˡ⁾)`, direction-agnostic.
#[derive(Debug, Clone)]
pub struct Gcn {
    op: CsrMatrix,
    widths: Vec<usize>,
}

impl Gcn {
    pub fn new(d: &Dag, widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        Ok(Self {
            op: gcn_operator(d),
            widths,
        })
    }

    pub fn operator(&self) -> &CsrMatrix {
        &self.op
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            p.push(
                format!("layer{l}.weight"),
                Tensor2::glorot(w[0], w[1], w[0], w[1], rng),
            );
        }
        p
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        check_input(tape, x, Some(self.op.ncols()), self.widths[0])?;
        let layers = self.widths.len() - 1;
        let mut h = x;
        for (l, w) in self.widths.windows(2).enumerate() {
            let weight = tape.param(params, l);
            let z = if w[0] <= w[1] {
                let s = tape.shift(&self.op, h)?;
                tape.matmul(s, weight)?
            } else {
                let m = tape.matmul(h, weight)?;
                tape.shift(&self.op, m)?
            };
            h = if l + 1 == layers { z } else { tape.relu(z) };
        }
        Ok(h)
    }
}

fn mlp_params<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    for (l, w) in widths.windows(2).enumerate() {
        p.push(format!("layer{l}.weight"), Tensor2::glorot(w[0], w[1], w[0], w[1], rng));
        p.push(format!("layer{l}.bias"), Tensor2::zeros(1, w[1]));
    }
    p
}

fn mlp_forward(tape: &mut Tape<'_>, params: &ParamSet, widths: &[usize], x: Var) -> Result<Var> {
    let layers = widths.len() - 1;
    let mut h = x;
    for l in 0..layers {
        let w = tape.param(params, 2 * l);
        let b = tape.param(params, 2 * l + 1);
        let z = tape.matmul(h, w)?;
        let z = tape.add_row(z, b)?;
        h = if l + 1 == layers { z } else { tape.relu(z) };
    }
    Ok(h)
}

/// Row-wise MLP that ignores the graph.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        check_widths(&widths)?;
        Ok(Self { widths })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        mlp_params(&self.widths, rng)
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        check_input(tape, x, None, self.widths[0])?;
        mlp_forward(tape, params, &self.widths, x)
    }
}

/// Any trainable architecture.
#[derive(Debug, Clone)]
pub enum Model {
    Dcn(Dcn),
    Pdcn(Pdcn),
    FbGcnn(FbGcnn),
    Gcn(Gcn),
    Mlp(Mlp),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Dcn(_) => "dcn",
            Model::Pdcn(_) => "pdcn",
            Model::FbGcnn(_) => "fb_gcnn",
            Model::Gcn(_) => "gcn",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        match self {
            Model::Dcn(m) => m.init_params(rng),
            Model::Pdcn(m) => m.init_params(rng),
            Model::FbGcnn(m) => m.init_params(rng),
            Model::Gcn(m) => m.init_params(rng),
            Model::Mlp(m) => m.init_params(rng),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, params: &ParamSet, x: Var) -> Result<Var> {
        match self {
            Model::Dcn(m) => m.forward(tape, params, x),
            Model::Pdcn(m) => m.forward(tape, params, x),
            Model::FbGcnn(m) => m.forward(tape, params, x),
            Model::Gcn(m) => m.forward(tape, params, x),
            Model::Mlp(m) => m.forward(tape, params, x),
        }
    }

    /// Inference without keeping the tape.
    pub fn predict(&self, params: &ParamSet, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let out = self.forward(&mut tape, params, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Scalar-tap DCN on a single-feature signal:
/// `x⁽ˡ⁾ = σ(Σ_k θ_k⁽ˡ⁾ S_k x⁽ˡ⁻¹⁾)`, activation applied after every layer.
pub fn simple_dcn_forward(
    gsos: &CausalGsoSet,
    taps: &[Vec<f64>],
    activation: Activation,
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != gsos.n() {
        return Err(Error::ShapeMismatch(format!(
            "signal of length {} on {} nodes",
            x.len(),
            gsos.n()
        )));
    }
    let mut p = ParamSet::new();
    for (l, t) in taps.iter().enumerate() {
        if t.len() != gsos.len() {
            return Err(Error::ShapeMismatch(format!(
                "layer {l} has {} taps for {} operators",
                t.len(),
                gsos.len()
            )));
        }
        p.push(format!("layer{l}.theta"), Tensor2::new(DMatrix::from_column_slice(t.len(), 1, t)));
    }
    let dcn = Dcn::new(gsos, vec![1; taps.len() + 1])?.with_activations(activation, activation);
    let out = Model::Dcn(dcn).predict(&p, &DMatrix::from_column_slice(x.len(), 1, x))?;
    Ok(out.as_slice().to_vec())
}
