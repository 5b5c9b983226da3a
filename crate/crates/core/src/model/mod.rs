//! Teacher and student networks.
//!
//! Both are dense stacks: a hidden layer with relu followed by a linear
//! feature layer and a linear classifier. The student's feature layer is split
//! into two heads whose outputs `z1` (internally-invariant) and `z2`
//! (mutually-invariant) are concatenated, in that order, before the
//! classifier. The teacher's feature width equals the width of one student
//! head, so its features can be matched against `z1` directly.

mod checkpoint;

use std::cell::Cell;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::DiffError;
use crate::scalar::Scalar;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointHeader, InputKind, ModelKind, Network, FORMAT_VERSION,
};

thread_local! {
    static TEACHER_FORWARDS: Cell<u64> = const { Cell::new(0) };
}

/// Number of teacher forward passes run on the current thread.
pub fn teacher_forward_count() -> u64 {
    TEACHER_FORWARDS.with(Cell::get)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("feature dimension {0} must be even and at least 2")]
    OddFeatureDim(usize),
    #[error("layer widths must be positive: {0:?}")]
    ZeroWidth(Architecture),
    #[error("input has {got} columns, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Layer widths shared by teacher and student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    /// Student feature width `d`; each head and the teacher features are `d/2`.
    pub features: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(ModelError::ZeroWidth(*self));
        }
        if self.features < 2 || !self.features.is_multiple_of(2) {
            return Err(ModelError::OddFeatureDim(self.features));
        }
        Ok(())
    }

    pub fn head(&self) -> usize {
        self.features / 2
    }
}

/// Fully connected layer `y = xW + b` with `W: [in×out]`, `b: [1×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    /// Uniform initialisation in `±1/√fan_in` for weights and biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<S> { (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect() };
        let weight = Tensor::from_parts(vec![fan_in, fan_out], draw(fan_in * fan_out));
        let bias = Tensor::from_parts(vec![1, fan_out], draw(fan_out));
        Dense { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundDense {
        let leaf = |g: &mut Graph<S>, t: &Tensor<S>| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        BoundDense {
            weight: leaf(g, &self.weight),
            bias: leaf(g, &self.bias),
        }
    }
}

#[derive(Clone, Copy)]
struct BoundDense {
    weight: Var,
    bias: Var,
}

impl BoundDense {
    fn apply<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var, DiffError> {
        let xw = g.matmul(x, self.weight)?;
        g.add_bias(xw, self.bias)
    }
}

fn check_input<S: Scalar>(g: &Graph<S>, x: Var, expected: usize) -> Result<(), ModelError> {
    let shape = g.shape(x);
    let got = if shape.len() == 2 { shape[1] } else { 0 };
    if got != expected {
        return Err(ModelError::InputDim { expected, got });
    }
    Ok(())
}

/// Phase-input network trained first; its feature layer is the distillation target.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel<S> {
    pub arch: Architecture,
    pub hidden: Dense<S>,
    pub feature: Dense<S>,
    pub classifier: Dense<S>,
}

/// Graph nodes produced by [`TeacherModel::forward`].
#[derive(Clone, Debug)]
pub struct TeacherOutputs {
    pub features: Var,
    pub logits: Var,
    /// Parameter leaves in [`TeacherModel::params`] order.
    pub params: Vec<Var>,
}

impl<S: Scalar> TeacherModel<S> {
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(TeacherModel {
            arch,
            hidden: Dense::init(arch.input, arch.hidden, rng),
            feature: Dense::init(arch.hidden, arch.head(), rng),
            classifier: Dense::init(arch.head(), arch.classes, rng),
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(TeacherModel {
            arch,
            hidden: Dense::zeros(arch.input, arch.hidden),
            feature: Dense::zeros(arch.hidden, arch.head()),
            classifier: Dense::zeros(arch.head(), arch.classes),
        })
    }

    fn layers(&self) -> [&Dense<S>; 3] {
        [&self.hidden, &self.feature, &self.classifier]
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        [&mut self.hidden, &mut self.feature, &mut self.classifier]
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Forward pass on phase inputs `x̃: [B×m]`. With `trainable = false` the
    /// parameters enter the graph as constants.
    pub fn forward(&self, g: &mut Graph<S>, x: Var, trainable: bool) -> Result<TeacherOutputs, ModelError> {
        check_input(g, x, self.arch.input)?;
        TEACHER_FORWARDS.with(|c| c.set(c.get() + 1));
        let [h, f, c] = self.layers().map(|l| l.bind(g, trainable));
        let a = h.apply(g, x)?;
        let a = g.relu(a)?;
        let features = f.apply(g, a)?;
        let logits = c.apply(g, features)?;
        let params = [h, f, c].iter().flat_map(|b| [b.weight, b.bias]).collect();
        Ok(TeacherOutputs {
            features,
            logits,
            params,
        })
    }

    /// Feature-layer values for a batch, with no gradient tracking.
    pub fn features(&self, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, false)?;
        Ok(g.value(out.features).clone())
    }

    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, false)?;
        Ok(g.value(out.logits).clone())
    }
}

/// Raw-input network with the split feature layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel<S> {
    pub arch: Architecture,
    pub hidden: Dense<S>,
    /// Produces `z1`.
    pub internal: Dense<S>,
    /// Produces `z2`.
    pub mutual: Dense<S>,
    /// Consumes `[z1 ‖ z2]`.
    pub classifier: Dense<S>,
}

/// Graph nodes produced by [`StudentModel::forward`].
#[derive(Clone, Debug)]
pub struct StudentOutputs {
    pub z1: Var,
    pub z2: Var,
    pub logits: Var,
    /// Parameter leaves in [`StudentModel::params`] order.
    pub params: Vec<Var>,
}

impl<S: Scalar> StudentModel<S> {
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(StudentModel {
            arch,
            hidden: Dense::init(arch.input, arch.hidden, rng),
            internal: Dense::init(arch.hidden, arch.head(), rng),
            mutual: Dense::init(arch.hidden, arch.head(), rng),
            classifier: Dense::init(arch.features, arch.classes, rng),
        })
    }

    fn layers(&self) -> [&Dense<S>; 4] {
        [&self.hidden, &self.internal, &self.mutual, &self.classifier]
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        [
            &mut self.hidden,
            &mut self.internal,
            &mut self.mutual,
            &mut self.classifier,
        ]
        .into_iter()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
    }

    pub fn forward(&self, g: &mut Graph<S>, x: Var, trainable: bool) -> Result<StudentOutputs, ModelError> {
        check_input(g, x, self.arch.input)?;
        let [h, i, m, c] = self.layers().map(|l| l.bind(g, trainable));
        let a = h.apply(g, x)?;
        let a = g.relu(a)?;
        let z1 = i.apply(g, a)?;
        let z2 = m.apply(g, a)?;
        let joined = g.concat_cols(z1, z2)?;
        let logits = c.apply(g, joined)?;
        let params = [h, i, m, c].iter().flat_map(|b| [b.weight, b.bias]).collect();
        Ok(StudentOutputs { z1, z2, logits, params })
    }

    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>, ModelError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, false)?;
        Ok(g.value(out.logits).clone())
    }

    /// Predicted class per row of `x`.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Vec<usize>, ModelError> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
