use super::sampling::{assign_virtual_domains, make_batches, rng_for, train_val_split, Stream};
use super::{AblationMode, EpochMetrics, TrainConfig, TrainError};
use crate::data::{class_count, DomainDataset};
use crate::losses::{total_objective, LossTerms, ObjectiveInputs};
use crate::model::{Architecture, InputKind};
use crate::{Graph, OptimState, StudentModel, TeacherModel, Tensor};

/// A trained teacher that can only be read. Stage two takes this type, so a
/// teacher still being optimised cannot be passed in.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTeacher {
    model: TeacherModel,
}

impl FrozenTeacher {
    pub fn new(model: TeacherModel) -> Self {
        FrozenTeacher { model }
    }

    pub fn model(&self) -> &TeacherModel {
        &self.model
    }

    pub fn into_inner(self) -> TeacherModel {
        self.model
    }

    pub fn features(&self, phase: &Tensor) -> Result<Tensor, TrainError> {
        Ok(self.model.features(phase)?)
    }
}

#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub teacher: FrozenTeacher,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Snapshot from the epoch with the highest validation accuracy.
    pub model: StudentModel,
    pub input: InputKind,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub target_acc: Option<f64>,
}

fn input_matrix(ds: &DomainDataset, kind: InputKind) -> Result<Tensor, TrainError> {
    Ok(match kind {
        InputKind::Raw => ds.raw_matrix()?,
        InputKind::Phase => ds.phase_matrix()?,
    })
}

/// Stacks the referenced rows of `mats` (one matrix per source).
pub fn gather_rows(mats: &[Tensor], rows: &[(usize, usize)]) -> Tensor {
    let cols = mats[0].cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &(s, i) in rows {
        data.extend_from_slice(mats[s].row(i));
    }
    Tensor::matrix(rows.len(), cols, data).expect("rows share one width")
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Target-domain accuracy of a student that reads `input` features.
pub fn evaluate_student(model: &StudentModel, input: InputKind, ds: &DomainDataset) -> Result<f64, TrainError> {
    let x = input_matrix(ds, input)?;
    Ok(accuracy(&model.predict(&x)?, &ds.labels()))
}

struct Prepared {
    train: Vec<DomainDataset>,
    inputs: Vec<Tensor>,
    val_x: Tensor,
    val_y: Vec<usize>,
    arch: Architecture,
}

fn prepare(sources: &[DomainDataset], cfg: &TrainConfig, kind: InputKind) -> Result<Prepared, TrainError> {
    cfg.validate()?;
    if sources.is_empty() || sources.iter().all(DomainDataset::is_empty) {
        return Err(TrainError::Empty);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for ds in sources {
        let (t, v) = train_val_split(ds, 1.0 - cfg.val_fraction, cfg.seed)?;
        train.push(t);
        val.push(v);
    }
    let pooled_val: Vec<&DomainDataset> = val.iter().collect();
    let val_x = {
        let mats = pooled_val
            .iter()
            .map(|d| input_matrix(d, kind))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<(usize, usize)> = mats
            .iter()
            .enumerate()
            .flat_map(|(s, m)| (0..m.rows()).map(move |i| (s, i)))
            .collect();
        gather_rows(&mats, &rows)
    };
    let val_y = val.iter().flat_map(DomainDataset::labels).collect();
    let inputs = train
        .iter()
        .map(|d| input_matrix(d, kind))
        .collect::<Result<Vec<_>, _>>()?;
    let arch = Architecture {
        input: sources[0].width(),
        hidden: cfg.hidden,
        features: cfg.features,
        classes: class_count(sources),
    };
    Ok(Prepared {
        train,
        inputs,
        val_x,
        val_y,
        arch,
    })
}

#[derive(Default)]
struct TermSums {
    n: usize,
    cls: f64,
    mse: Option<f64>,
    align: Option<f64>,
    exp: Option<f64>,
    total: f64,
}

impl TermSums {
    fn add(&mut self, t: &LossTerms) {
        let acc = |slot: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *slot = Some(slot.unwrap_or(0.0) + v);
            }
        };
        self.n += 1;
        self.cls += t.cls;
        acc(&mut self.mse, t.mse);
        acc(&mut self.align, t.align);
        acc(&mut self.exp, t.exp);
        self.total += t.total;
    }

    fn finish(&self, epoch: usize, val_acc: f64) -> EpochMetrics {
        let n = self.n.max(1) as f64;
        EpochMetrics {
            epoch,
            cls: self.cls / n,
            mse: self.mse.map(|v| v / n),
            align: self.align.map(|v| v / n),
            exp: self.exp.map(|v| v / n),
            total: self.total / n,
            val_acc,
        }
    }
}

fn check_params<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Result<(), TrainError> {
    if params.into_iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        Err(TrainError::NonFinite("parameters after optimizer step".into()))
    }
}

/// Stage one: a classifier on per-channel phase, pooled over all sources.
pub fn train_teacher(sources: &[DomainDataset], cfg: &TrainConfig) -> Result<TeacherRun, TrainError> {
    let prep = prepare(sources, cfg, InputKind::Phase)?;
    let mut model = TeacherModel::init(prep.arch, &mut rng_for(cfg.seed, Stream::TeacherInit, 0))?;
    let mut opt = OptimState::new(cfg.lr, cfg.weight_decay);
    let mut batch_rng = rng_for(cfg.seed, Stream::TeacherBatches, 0);
    let sizes: Vec<usize> = prep.train.iter().map(DomainDataset::len).collect();

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let (mut best, mut best_epoch, mut best_acc) = (model.clone(), 0, f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs {
        let mut sums = TermSums::default();
        for plan in make_batches(&sizes, cfg.batch_size, &mut batch_rng)? {
            let x = gather_rows(&prep.inputs, &plan.rows);
            let labels: Vec<usize> = plan.rows.iter().map(|&(s, i)| prep.train[s].samples[i].y).collect();
            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv, true)?;
            let loss = g.softmax_cross_entropy(out.logits, &labels)?;
            let grads = g.backward(loss)?;
            let gs: Vec<Tensor> = out.params.iter().map(|&p| grads.wrt(&g, p)).collect();
            opt.step(&mut model.params_mut(), &gs)?;
            check_params(model.params())?;
            let v = g.value(loss).item();
            sums.add(&LossTerms {
                cls: v,
                total: v,
                ..LossTerms::default()
            });
        }
        let logits = model.logits(&prep.val_x)?;
        let pred: Vec<usize> = (0..logits.rows())
            .map(|r| crate::model::argmax(logits.row(r)))
            .collect();
        let val_acc = accuracy(&pred, &prep.val_y);
        if val_acc > best_acc {
            (best, best_epoch, best_acc) = (model.clone(), epoch, val_acc);
        }
        metrics.push(sums.finish(epoch, val_acc));
    }
    Ok(TeacherRun {
        teacher: FrozenTeacher::new(best),
        metrics,
        best_epoch,
        best_val_acc: best_acc,
    })
}

/// Stage two; see [`train_student_observed`].
pub fn train_student(
    sources: &[DomainDataset],
    teacher: Option<&FrozenTeacher>,
    target: Option<&DomainDataset>,
    cfg: &TrainConfig,
) -> Result<RunResult, TrainError> {
    train_student_observed(sources, teacher, target, cfg, |_, _, _| {})
}

/// Trains the student under the combined objective, with the terms disabled
/// by `cfg.mode` left out. `observe` sees the model and the loss terms after
/// every optimizer step (steps are numbered from 1).
pub fn train_student_observed<F>(
    sources: &[DomainDataset],
    teacher: Option<&FrozenTeacher>,
    target: Option<&DomainDataset>,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<RunResult, TrainError>
where
    F: FnMut(u64, &StudentModel, &LossTerms),
{
    let weights = cfg.effective_weights();
    let input = match cfg.mode {
        AblationMode::PhaseOnly => InputKind::Phase,
        _ => InputKind::Raw,
    };
    if weights.lambda1 > 0.0 && teacher.is_none() {
        return Err(TrainError::MissingTeacher);
    }
    if cfg.virtual_domains.is_some() && sources.len() != 1 {
        return Err(TrainError::Config(format!(
            "virtual domains replace the labels of a single source; got {} sources",
            sources.len()
        )));
    }
    if weights.lambda2 > 0.0 && sources.len() < 2 && cfg.virtual_domains.is_none() {
        return Err(TrainError::Config(
            "alignment needs at least 2 source domains or virtual domains".into(),
        ));
    }

    let mut prep = prepare(sources, cfg, input)?;
    if let Some(k) = cfg.virtual_domains {
        prep.train = assign_virtual_domains(&prep.train[0], k, cfg.seed)?;
        prep.inputs = prep
            .train
            .iter()
            .map(|d| input_matrix(d, input))
            .collect::<Result<Vec<_>, _>>()?;
    }
    let teacher_feats = match (weights.lambda1 > 0.0, teacher) {
        (true, Some(t)) => Some(
            prep.train
                .iter()
                .map(|d| t.features(&d.phase_matrix()?))
                .collect::<Result<Vec<_>, TrainError>>()?,
        ),
        _ => None,
    };

    let mut model = StudentModel::init(prep.arch, &mut rng_for(cfg.seed, Stream::StudentInit, 0))?;
    let mut opt = OptimState::new(cfg.lr, cfg.weight_decay);
    let mut batch_rng = rng_for(cfg.seed, Stream::StudentBatches, 0);
    let sizes: Vec<usize> = prep.train.iter().map(DomainDataset::len).collect();

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let (mut best, mut best_epoch, mut best_acc) = (model.clone(), 0, f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs {
        let mut sums = TermSums::default();
        for plan in make_batches(&sizes, cfg.batch_size, &mut batch_rng)? {
            let x = gather_rows(&prep.inputs, &plan.rows);
            let labels: Vec<usize> = plan.rows.iter().map(|&(s, i)| prep.train[s].samples[i].y).collect();
            let domains: Vec<usize> = plan.rows.iter().map(|&(s, _)| prep.train[s].domain).collect();
            let t = teacher_feats.as_ref().map(|f| gather_rows(f, &plan.rows));

            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv, true)?;
            let inputs = ObjectiveInputs {
                logits: out.logits,
                labels: &labels,
                z1: out.z1,
                z2: out.z2,
                domains: &domains,
                teacher: t.as_ref(),
            };
            let obj = total_objective(&mut g, &inputs, &weights)?;
            let grads = g.backward(obj.total)?;
            let gs: Vec<Tensor> = out.params.iter().map(|&p| grads.wrt(&g, p)).collect();
            opt.step(&mut model.params_mut(), &gs)?;
            check_params(model.params())?;
            let terms = obj.terms(&g);
            sums.add(&terms);
            observe(opt.steps(), &model, &terms);
        }
        let val_acc = accuracy(&model.predict(&prep.val_x)?, &prep.val_y);
        if val_acc > best_acc {
            (best, best_epoch, best_acc) = (model.clone(), epoch, val_acc);
        }
        metrics.push(sums.finish(epoch, val_acc));
    }
    let target_acc = target.map(|t| evaluate_student(&best, input, t)).transpose()?;
    Ok(RunResult {
        model: best,
        input,
        metrics,
        best_epoch,
        best_val_acc: best_acc,
        target_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, leave_one_out, BenchConfig, BenchParams};
    use crate::losses::LossWeights;

    fn small() -> Vec<DomainDataset> {
        let cfg = BenchConfig::standard(&BenchParams {
            classes: 3,
            samples_per_class: 10,
            length: 16,
            domains: 3,
            carrier_gains: Vec::new(),
            ..BenchParams::default()
        })
        .unwrap();
        generate(&cfg).unwrap()
    }

    fn quick(mode: AblationMode) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 12,
            hidden: 8,
            features: 4,
            mode,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn distillation_without_teacher_is_rejected() {
        let data = small();
        let err = train_student(&data, None, None, &quick(AblationMode::Full)).unwrap_err();
        assert!(matches!(err, TrainError::MissingTeacher));
        assert!(train_student(&data, None, None, &quick(AblationMode::NoIntern)).is_ok());
    }

    #[test]
    fn selected_epoch_has_max_val_acc() {
        let (sources, target) = leave_one_out(&small(), 0).unwrap();
        let cfg = quick(AblationMode::Full);
        let teacher = train_teacher(&sources, &cfg).unwrap().teacher;
        let run = train_student(&sources, Some(&teacher), Some(&target), &cfg).unwrap();
        let max = run.metrics.iter().map(|m| m.val_acc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(run.best_val_acc, max);
        assert_eq!(run.metrics[run.best_epoch].val_acc, max);
        assert!(run.target_acc.is_some());
        let m = &run.metrics[0];
        assert!(m.mse.is_some() && m.align.is_some() && m.exp.is_some());
    }

    #[test]
    fn erm_logs_only_classification() {
        let data = small();
        let run = train_student(&data, None, None, &quick(AblationMode::Erm)).unwrap();
        assert!(run
            .metrics
            .iter()
            .all(|m| m.mse.is_none() && m.align.is_none() && m.exp.is_none()));
        assert!(run.metrics.iter().all(|m| m.cls == m.total));
    }

    #[test]
    fn alignment_needs_two_domains() {
        let data = small();
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda1: 0.0,
                ..LossWeights::default()
            },
            ..quick(AblationMode::Full)
        };
        assert!(matches!(
            train_student(&data[..1], None, None, &cfg),
            Err(TrainError::Config(_))
        ));
        let virt = TrainConfig {
            virtual_domains: Some(2),
            ..cfg.clone()
        };
        assert!(train_student(&data[..1], None, None, &virt).is_ok());
        assert!(matches!(
            train_student(&data, None, None, &virt),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn exploding_lr_reports_non_finite() {
        let data = small();
        let cfg = TrainConfig {
            lr: 1e300,
            ..quick(AblationMode::Erm)
        };
        assert!(matches!(
            train_student(&data, None, None, &cfg),
            Err(TrainError::NonFinite(_))
        ));
    }
}
