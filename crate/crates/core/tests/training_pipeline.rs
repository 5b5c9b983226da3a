use std::time::Instant;

use difex::data::{self, BenchConfig, BenchParams, DomainDataset};
use difex::losses::LossWeights;
use difex::model::{self, Architecture, InputKind};
use difex::training::{
    self, assign_virtual_domains, gather_rows, make_batches, rng_for, train_val_split, AblationMode, Stream,
    TrainConfig, TrainError,
};
use difex::{fourier, Graph, OptimState, StudentModel, Tensor};

fn bench(domains: usize, spc: usize, seed: u64) -> Vec<DomainDataset> {
    let cfg = BenchConfig::standard(&BenchParams {
        domains,
        samples_per_class: spc,
        carrier_gains: if domains == 4 {
            vec![8.0, 1.0, 0.3, 3.0]
        } else {
            Vec::new()
        },
        seed,
        ..BenchParams::default()
    })
    .unwrap();
    data::generate(&cfg).unwrap()
}

fn quick(mode: AblationMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 24,
        hidden: 16,
        features: 8,
        mode,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn snapshot(m: &StudentModel) -> Vec<u64> {
    m.params()
        .iter()
        .flat_map(|p| p.data().iter().map(|v| v.to_bits()))
        .collect()
}

/// Plain cross-entropy training written against the building blocks only.
fn baseline_trajectory(sources: &[DomainDataset], cfg: &TrainConfig) -> Vec<Vec<u64>> {
    let train: Vec<DomainDataset> = sources
        .iter()
        .map(|d| train_val_split(d, 1.0 - cfg.val_fraction, cfg.seed).unwrap().0)
        .collect();
    let inputs: Vec<Tensor> = train.iter().map(|d| d.raw_matrix().unwrap()).collect();
    let arch = Architecture {
        input: sources[0].width(),
        hidden: cfg.hidden,
        features: cfg.features,
        classes: data::class_count(sources),
    };
    let mut model = StudentModel::init(arch, &mut rng_for(cfg.seed, Stream::StudentInit, 0)).unwrap();
    let mut opt = OptimState::new(cfg.lr, cfg.weight_decay);
    let mut rng = rng_for(cfg.seed, Stream::StudentBatches, 0);
    let sizes: Vec<usize> = train.iter().map(DomainDataset::len).collect();
    let mut traj = Vec::new();
    for _ in 0..cfg.epochs {
        for plan in make_batches(&sizes, cfg.batch_size, &mut rng).unwrap() {
            let x = gather_rows(&inputs, &plan.rows);
            let y: Vec<usize> = plan.rows.iter().map(|&(s, i)| train[s].samples[i].y).collect();
            let mut g = Graph::new();
            let xv = g.constant(x);
            let out = model.forward(&mut g, xv, true).unwrap();
            let loss = g.softmax_cross_entropy(out.logits, &y).unwrap();
            let grads = g.backward(loss).unwrap();
            let gs: Vec<Tensor> = out.params.iter().map(|&p| grads.wrt(&g, p)).collect();
            opt.step(&mut model.params_mut(), &gs).unwrap();
            traj.push(snapshot(&model));
        }
    }
    traj
}

fn pipeline_trajectory(sources: &[DomainDataset], cfg: &TrainConfig) -> Vec<Vec<u64>> {
    let mut traj = Vec::new();
    training::train_student_observed(sources, None, None, cfg, |step, m, _| {
        assert_eq!(step as usize, traj.len() + 1);
        traj.push(snapshot(m));
    })
    .unwrap();
    traj
}

#[test]
fn erm_pipeline_matches_standalone_baseline_bitwise() {
    let (sources, _) = data::leave_one_out(&bench(4, 12, 1), 2).unwrap();
    let cfg = quick(AblationMode::Erm, 3);
    let want = baseline_trajectory(&sources, &cfg);
    assert!(!want.is_empty());
    assert_eq!(pipeline_trajectory(&sources, &cfg), want);

    // All weights at zero in FULL mode is the same objective.
    let zero = TrainConfig {
        mode: AblationMode::Full,
        weights: LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..LossWeights::default()
        },
        ..cfg
    };
    assert_eq!(pipeline_trajectory(&sources, &zero), want);
}

#[test]
fn active_terms_change_the_first_step() {
    let (sources, _) = data::leave_one_out(&bench(4, 12, 1), 0).unwrap();
    let cfg = quick(AblationMode::Full, 1);
    let teacher = training::train_teacher(&sources, &cfg).unwrap().teacher;
    let mut full = Vec::new();
    training::train_student_observed(&sources, Some(&teacher), None, &cfg, |_, m, t| {
        full.push((snapshot(m), *t));
    })
    .unwrap();
    let erm = pipeline_trajectory(
        &sources,
        &TrainConfig {
            mode: AblationMode::Erm,
            ..cfg
        },
    );
    assert_ne!(full[0].0, erm[0]);
    let terms = full[0].1;
    assert!(terms.mse.is_some() && terms.align.is_some() && terms.exp.is_some());
}

#[test]
fn teacher_is_untouched_by_stage_two() {
    let (sources, target) = data::leave_one_out(&bench(4, 12, 2), 1).unwrap();
    let cfg = quick(AblationMode::Full, 2);
    let teacher = training::train_teacher(&sources, &cfg).unwrap().teacher;
    let before = teacher.model().clone();
    let run = training::train_student(&sources, Some(&teacher), Some(&target), &cfg).unwrap();
    assert_eq!(teacher.model(), &before);
    let acc = run.target_acc.unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn same_seed_same_run() {
    let (sources, target) = data::leave_one_out(&bench(4, 10, 4), 3).unwrap();
    let cfg = quick(AblationMode::NoIntern, 2);
    let a = training::train_student(&sources, None, Some(&target), &cfg).unwrap();
    let b = training::train_student(&sources, None, Some(&target), &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn exploding_learning_rate_is_reported() {
    let (sources, _) = data::leave_one_out(&bench(4, 10, 0), 0).unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        ..quick(AblationMode::NoIntern, 2)
    };
    let err = training::train_student(&sources, None, None, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite(_)), "{err}");
}

#[test]
fn single_source_with_virtual_domains_trains() {
    let data = bench(4, 12, 5);
    let cfg = TrainConfig {
        virtual_domains: Some(2),
        ..quick(AblationMode::NoIntern, 2)
    };
    let run = training::train_student(&data[..1], None, Some(&data[1]), &cfg).unwrap();
    assert!(run.metrics.iter().all(|m| m.align.is_some()));
    let none = TrainConfig {
        virtual_domains: None,
        ..cfg.clone()
    };
    assert!(matches!(
        training::train_student(&data[..1], None, None, &none),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn virtual_labels_keep_the_class_mix() {
    // Chi-square of the class × pseudo-domain table against independence.
    let ds = &bench(1, 100, 8)[0];
    for seed in 0..5 {
        let parts = assign_virtual_domains(ds, 2, seed).unwrap();
        let classes = 6;
        let n = ds.len() as f64;
        let mut stat = 0.0;
        for c in 0..classes {
            let row: f64 = ds.samples.iter().filter(|s| s.y == c).count() as f64;
            for p in &parts {
                let obs = p.samples.iter().filter(|s| s.y == c).count() as f64;
                let exp = row * p.len() as f64 / n;
                stat += (obs - exp).powi(2) / exp;
            }
        }
        // 5 degrees of freedom, p = 0.001.
        assert!(stat < 20.52, "seed {seed}: chi-square {stat}");
        let sizes: Vec<usize> = parts.iter().map(DomainDataset::len).collect();
        assert!(sizes.iter().all(|&s| (240..=360).contains(&s)), "{sizes:?}");
    }
}

#[test]
fn predict_runs_no_transform_and_no_teacher() {
    let (sources, target) = data::leave_one_out(&bench(4, 10, 6), 0).unwrap();
    let cfg = quick(AblationMode::Full, 1);
    let teacher = training::train_teacher(&sources, &cfg).unwrap().teacher;
    let run = training::train_student(&sources, Some(&teacher), None, &cfg).unwrap();
    let x = target.raw_matrix().unwrap();
    let (f0, t0) = (fourier::transform_count(), model::teacher_forward_count());
    let pred = run.model.predict(&x).unwrap();
    assert_eq!(pred.len(), target.len());
    assert_eq!(fourier::transform_count(), f0);
    assert_eq!(model::teacher_forward_count(), t0);
}

#[test]
fn phase_only_student_reads_phase() {
    let (sources, target) = data::leave_one_out(&bench(4, 10, 6), 1).unwrap();
    let run = training::train_student(&sources, None, Some(&target), &quick(AblationMode::PhaseOnly, 2)).unwrap();
    assert_eq!(run.input, InputKind::Phase);
    assert!(run
        .metrics
        .iter()
        .all(|m| m.mse.is_none() && m.align.is_none() && m.exp.is_none()));
}

#[test]
fn full_run_on_four_by_four_hundred_is_fast() {
    // 4 domains × 400 samples, 50 epochs, default widths, all terms on.
    let data = {
        let cfg = BenchConfig::standard(&BenchParams {
            samples_per_class: 67,
            ..BenchParams::default()
        })
        .unwrap();
        data::generate(&cfg).unwrap()
    };
    let data: Vec<DomainDataset> = data.iter().map(|d| d.subset(&(0..400).collect::<Vec<_>>())).collect();
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let teacher = training::train_teacher(&data, &cfg).unwrap().teacher;
    training::train_student(&data, Some(&teacher), None, &cfg).unwrap();
    let took = start.elapsed();
    assert!(took.as_secs_f64() < 60.0, "took {took:?}");
}
