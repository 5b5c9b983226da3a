//! Labelled, domain-tagged signals: the synthetic benchmark, CSV storage and
//! the leave-one-domain-out split.

mod bench;
mod csv_io;

use thiserror::Error;

use crate::fourier;
use crate::Tensor;

pub use bench::{generate, BenchConfig, BenchParams, PatternBin};
pub use csv_io::{load_csv, read_csv, save_csv, write_csv};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unknown header: {0}")]
    Header(String),
    #[error("target domain {target} not among {available:?}")]
    BadTarget { target: usize, available: Vec<usize> },
    #[error("need at least {needed} domains, got {got}")]
    TooFewDomains { needed: usize, got: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("sample {index} has {got} values, expected {expected}")]
    Width { index: usize, expected: usize, got: usize },
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One labelled multichannel signal, `x` laid out channel-major (`[C_ch × N]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
    pub domain: usize,
}

/// All samples of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain: usize,
    pub channels: usize,
    pub length: usize,
    pub samples: Vec<Sample>,
}

impl DomainDataset {
    pub fn new(domain: usize, channels: usize, length: usize, samples: Vec<Sample>) -> Result<Self, DataError> {
        let ds = DomainDataset {
            domain,
            channels,
            length,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let width = self.width();
        if width == 0 {
            return Err(DataError::Config("channels and length must be positive".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != width {
                return Err(DataError::Width {
                    index: i,
                    expected: width,
                    got: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite(i));
            }
        }
        Ok(())
    }

    /// Flattened feature width `C_ch · N`.
    pub fn width(&self) -> usize {
        self.channels * self.length
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// A copy keeping only the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            domain: self.domain,
            channels: self.channels,
            length: self.length,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Raw signals as a `[n × C_ch·N]` matrix.
    pub fn raw_matrix(&self) -> Result<Tensor, DataError> {
        stack(self.samples.iter().map(|s| s.x.clone()), self.width())
    }

    /// Per-channel Fourier phase of every sample, `[n × C_ch·N]`.
    pub fn phase_matrix(&self) -> Result<Tensor, DataError> {
        let shape = [self.channels, self.length];
        let rows = self
            .samples
            .iter()
            .map(|s| fourier::per_channel_phase(&s.x, &shape).expect("validated width"));
        stack(rows, self.width())
    }

    /// Per-channel Fourier amplitude of every sample, `[n × C_ch·N]`.
    pub fn amplitude_matrix(&self) -> Result<Tensor, DataError> {
        let shape = [self.channels, self.length];
        let rows = self
            .samples
            .iter()
            .map(|s| fourier::per_channel_amplitude(&s.x, &shape).expect("validated width"));
        stack(rows, self.width())
    }
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Result<Tensor, DataError> {
    let data: Vec<f64> = rows.flatten().collect();
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    Tensor::matrix(data.len() / width, width, data).map_err(|e| DataError::Config(e.to_string()))
}

/// Number of classes spanned by the labels of `sets` (max label + 1).
pub fn class_count(sets: &[DomainDataset]) -> usize {
    sets.iter()
        .flat_map(|d| d.samples.iter().map(|s| s.y + 1))
        .max()
        .unwrap_or(0)
}

/// Splits off the domain whose id is `target`; the rest are the sources.
pub fn leave_one_out(
    domains: &[DomainDataset],
    target: usize,
) -> Result<(Vec<DomainDataset>, DomainDataset), DataError> {
    if domains.len() < 2 {
        return Err(DataError::TooFewDomains {
            needed: 2,
            got: domains.len(),
        });
    }
    let Some(pos) = domains.iter().position(|d| d.domain == target) else {
        return Err(DataError::BadTarget {
            target,
            available: domains.iter().map(|d| d.domain).collect(),
        });
    };
    let mut sources = domains.to_vec();
    let held_out = sources.remove(pos);
    Ok((sources, held_out))
}
