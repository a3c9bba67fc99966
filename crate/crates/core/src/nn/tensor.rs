use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A dense matrix with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub value: DMatrix<f64>,
    pub grad: Option<DMatrix<f64>>,
}

impl Tensor2 {
    pub fn new(value: DMatrix<f64>) -> Self {
        Self { value, grad: None }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(DMatrix::zeros(rows, cols))
    }

    /// Glorot-uniform entries in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::new(DMatrix::from_fn(rows, cols, |_, _| {
            rng.random_range(-bound..=bound)
        }))
    }

    pub fn rows(&self) -> usize {
        self.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.value.ncols()
    }

    pub fn accumulate_grad(&mut self, g: &DMatrix<f64>) {
        assert_eq!(g.shape(), self.value.shape(), "gradient shape mismatch");
        match &mut self.grad {
            Some(acc) => *acc += g,
            None => self.grad = Some(g.clone()),
        }
    }
}

/// Named learnable tensors of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor2>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor2) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor2 {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor2 {
        &mut self.tensors[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }

    /// Total number of scalar learnable entries.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            arrays: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| NamedArray {
                    name: name.clone(),
                    shape: [t.rows(), t.cols()],
                    values: t.value.transpose().as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

/// Serialized form of a parameter set: flat named arrays, row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub arrays: Vec<NamedArray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ParamSnapshot {
    pub fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for a in &self.arrays {
            let m = DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.values);
            p.push(a.name.clone(), Tensor2::new(m));
        }
        p
    }
}
