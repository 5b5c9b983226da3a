//! Stratified train/validation split, pseudo-domain assignment and
//! domain-balanced batching.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::data::DomainDataset;

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Split,
    Virtual,
    StudentInit,
    StudentBatches,
    TeacherInit,
    TeacherBatches,
}

pub fn rng_for(seed: u64, stream: Stream, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = match stream {
        Stream::Split => 1,
        Stream::Virtual => 2,
        Stream::StudentInit => 3,
        Stream::StudentBatches => 4,
        Stream::TeacherInit => 5,
        Stream::TeacherBatches => 6,
    };
    rng.set_stream((base << 32) | sub);
    rng
}

/// Splits one domain into train and validation parts, class by class, so
/// every class keeps (to within one sample) its share in both parts.
pub fn train_val_split(
    ds: &DomainDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset), TrainError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(TrainError::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if ds.len() < 5 {
        return Err(TrainError::Config(format!(
            "domain {} has {} samples; a split needs at least 5",
            ds.domain,
            ds.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class.entry(s.y).or_default().push(i);
    }
    let mut rng = rng_for(seed, Stream::Split, ds.domain as u64);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(TrainError::Config(format!(
                "domain {}: class {class} has {} sample(s); a split needs at least 2",
                ds.domain,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * (1.0 - train_fraction)).round() as usize;
        let n_val = n_val.clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Randomly relabels a single domain into `k` non-empty pseudo-domains
/// `0..k`. Draws are repeated on a fresh stream until no group is empty.
pub fn assign_virtual_domains(ds: &DomainDataset, k: usize, seed: u64) -> Result<Vec<DomainDataset>, TrainError> {
    if k < 2 {
        return Err(TrainError::Config("virtual domain count must be >= 2".into()));
    }
    if k > ds.len() {
        return Err(TrainError::Config(format!(
            "{k} virtual domains requested for {} samples",
            ds.len()
        )));
    }
    for attempt in 0.. {
        let mut rng = rng_for(seed, Stream::Virtual, attempt);
        let labels: Vec<usize> = (0..ds.len()).map(|_| rng.random_range(0..k)).collect();
        let mut groups = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            groups[l].push(i);
        }
        if groups.iter().any(Vec::is_empty) {
            continue;
        }
        return Ok(groups
            .into_iter()
            .enumerate()
            .map(|(d, idx)| {
                let mut part = ds.subset(&idx);
                part.domain = d;
                part.samples.iter_mut().for_each(|s| s.domain = d);
                part
            })
            .collect());
    }
    unreachable!("the attempt counter is unbounded")
}

/// Row references of one batch: `(source position, sample index)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub rows: Vec<(usize, usize)>,
}

impl BatchPlan {
    pub fn per_source_counts(&self, sources: usize) -> Vec<usize> {
        let mut counts = vec![0; sources];
        for &(s, _) in &self.rows {
            counts[s] += 1;
        }
        counts
    }
}

/// One epoch of domain-balanced batches.
///
/// Each batch takes `⌊batch_size / M⌋` samples from every one of the `M`
/// sources. Every source is walked through fresh random permutations without
/// replacement; the epoch lasts until the largest source has been covered, so
/// smaller sources wrap into a new permutation.
pub fn make_batches<R: Rng>(sizes: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<BatchPlan>, TrainError> {
    let m = sizes.len();
    if m == 0 {
        return Err(TrainError::Empty);
    }
    let quota = batch_size / m;
    if quota < 2 {
        return Err(TrainError::Config(format!(
            "batch size {batch_size} gives {quota} sample(s) per domain for {m} domains; need at least 2"
        )));
    }
    if let Some(pos) = sizes.iter().position(|&n| n < 2) {
        return Err(TrainError::Config(format!(
            "source {pos} has {} training sample(s); need at least 2",
            sizes[pos]
        )));
    }
    let largest = *sizes.iter().max().expect("non-empty");
    let steps = largest.div_ceil(quota);
    let mut streams: Vec<Vec<usize>> = Vec::with_capacity(m);
    for &n in sizes {
        let mut stream = Vec::with_capacity(steps * quota + n);
        while stream.len() < steps * quota {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            stream.extend(perm);
        }
        streams.push(stream);
    }
    Ok((0..steps)
        .map(|b| BatchPlan {
            rows: (0..m)
                .flat_map(|s| streams[s][b * quota..(b + 1) * quota].iter().map(move |&i| (s, i)))
                .collect(),
        })
        .collect())
}
