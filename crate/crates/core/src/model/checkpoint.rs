//! Checkpoint file: an 8-byte magic, a little-endian `u32` header length, a
//! JSON header, then every parameter array in declaration order as 64-bit
//! little-endian floats. Loading validates every shape against the header's
//! architecture.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Architecture, Dense, ModelError, StudentModel, TeacherModel};
use crate::diffcore::Tensor;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DIFEXCKP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("array {index} has shape {found:?}, expected {expected:?}")]
    Shape {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: ModelKind, found: ModelKind },
    #[error("trailing bytes after parameter data")]
    Trailing,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Student,
    Teacher,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Student => "student",
            ModelKind::Teacher => "teacher",
        })
    }
}

/// Which representation of a sample the network consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Raw,
    /// Per-channel Fourier phase of the raw signal.
    Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: ModelKind,
    pub input: InputKind,
    /// `[input, hidden, d, C]`.
    pub layer_sizes: [usize; 4],
    pub d: usize,
    pub classes: usize,
    pub seed: u64,
    pub arrays: Vec<Vec<usize>>,
}

impl CheckpointHeader {
    pub fn arch(&self) -> Architecture {
        let [input, hidden, features, classes] = self.layer_sizes;
        Architecture {
            input,
            hidden,
            features,
            classes,
        }
    }
}

/// A network that can be written to a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum Network<S> {
    Student(StudentModel<S>),
    Teacher(TeacherModel<S>),
}

impl<S: Scalar> Network<S> {
    fn kind(&self) -> ModelKind {
        match self {
            Network::Student(_) => ModelKind::Student,
            Network::Teacher(_) => ModelKind::Teacher,
        }
    }

    fn arch(&self) -> Architecture {
        match self {
            Network::Student(m) => m.arch,
            Network::Teacher(m) => m.arch,
        }
    }

    fn params(&self) -> Vec<&Tensor<S>> {
        match self {
            Network::Student(m) => m.params(),
            Network::Teacher(m) => m.params(),
        }
    }

    pub fn into_student(self) -> Result<StudentModel<S>, CheckpointError> {
        match self {
            Network::Student(m) => Ok(m),
            other => Err(CheckpointError::Kind {
                expected: ModelKind::Student,
                found: other.kind(),
            }),
        }
    }

    pub fn into_teacher(self) -> Result<TeacherModel<S>, CheckpointError> {
        match self {
            Network::Teacher(m) => Ok(m),
            other => Err(CheckpointError::Kind {
                expected: ModelKind::Teacher,
                found: other.kind(),
            }),
        }
    }
}

fn expected_shapes(kind: ModelKind, a: &Architecture) -> Vec<Vec<usize>> {
    let dense = |i: usize, o: usize| [vec![i, o], vec![1, o]];
    let layers = match kind {
        ModelKind::Student => vec![
            dense(a.input, a.hidden),
            dense(a.hidden, a.head()),
            dense(a.hidden, a.head()),
            dense(a.features, a.classes),
        ],
        ModelKind::Teacher => vec![
            dense(a.input, a.hidden),
            dense(a.hidden, a.head()),
            dense(a.head(), a.classes),
        ],
    };
    layers.into_iter().flatten().collect()
}

pub fn save_checkpoint<S: Scalar, W: Write>(
    mut w: W,
    model: &Network<S>,
    input: InputKind,
    seed: u64,
) -> Result<(), CheckpointError> {
    let arch = model.arch();
    let params = model.params();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        kind: model.kind(),
        input,
        layer_sizes: [arch.input, arch.hidden, arch.features, arch.classes],
        d: arch.features,
        classes: arch.classes,
        seed,
        arrays: params.iter().map(|p| p.shape().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for p in params {
        for v in p.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<(CheckpointHeader, Network<S>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version(header.format_version));
    }
    let arch = header.arch();
    arch.validate()?;
    let expected = expected_shapes(header.kind, &arch);
    for (index, exp) in expected.iter().enumerate() {
        let found = header.arrays.get(index).cloned().unwrap_or_default();
        if &found != exp {
            return Err(CheckpointError::Shape {
                index,
                expected: exp.clone(),
                found,
            });
        }
    }
    if header.arrays.len() != expected.len() {
        return Err(CheckpointError::Shape {
            index: expected.len(),
            expected: vec![],
            found: header.arrays[expected.len()].clone(),
        });
    }

    let mut tensors = Vec::with_capacity(expected.len());
    for shape in &expected {
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| S::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data).map_err(ModelError::from)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Trailing);
    }

    let mut it = tensors.into_iter();
    let mut dense = || Dense {
        weight: it.next().expect("validated count"),
        bias: it.next().expect("validated count"),
    };
    let model = match header.kind {
        ModelKind::Student => Network::Student(StudentModel {
            arch,
            hidden: dense(),
            internal: dense(),
            mutual: dense(),
            classifier: dense(),
        }),
        ModelKind::Teacher => Network::Teacher(TeacherModel {
            arch,
            hidden: dense(),
            feature: dense(),
            classifier: dense(),
        }),
    };
    Ok((header, model))
}
