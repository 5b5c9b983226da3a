mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use difex::data::{self, BenchConfig, DataError, DomainDataset};
use difex::fourier;
use difex::losses::Exploration;
use difex::model::{self, InputKind, Network};
use difex::training::{self, AblationMode, FrozenTeacher, RunResult, TrainConfig, TrainError};

use config::Config;

const BUILD_ID: &str = concat!("difex ", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(name = "difex", version, about = "Fourier-phase domain generalization toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark as one CSV per domain.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave one domain out, train teacher and student, score the held-out domain.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value = "full")]
        mode: AblationMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        exploration: Option<Exploration>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved student on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Restrict to one domain; all domains are pooled otherwise.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Full target × arm × seed grid with mean ± std summaries.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds; the config's `seeds` otherwise.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        exploration: Option<Exploration>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw, amplitude, phase and phase-only reconstruction of chosen samples.
    Motivate {
        #[arg(long)]
        data: PathBuf,
        /// `domain:index` pairs, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        samples: Vec<SampleId>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug)]
struct SampleId {
    domain: usize,
    index: usize,
}

impl std::str::FromStr for SampleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (d, i) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `domain:index`, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
        Ok(SampleId {
            domain: parse(d)?,
            index: parse(i)?,
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failure, 2 for everything else that reaches here.
fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<TrainError>(), Some(TrainError::NonFinite(_))));
    if numeric {
        3
    } else {
        2
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { config, seed, out } => cmd_generate(config.as_deref(), seed, &out),
        Command::Train {
            data,
            target,
            mode,
            seed,
            exploration,
            config,
            out,
        } => cmd_train(&data, target, mode, seed, exploration, config.as_deref(), &out),
        Command::Eval {
            checkpoint,
            data,
            target,
        } => cmd_eval(&checkpoint, &data, target),
        Command::Ablate {
            data,
            seeds,
            exploration,
            config,
            out,
        } => cmd_ablate(&data, seeds, exploration, config.as_deref(), &out),
        Command::Motivate { data, samples, out } => cmd_motivate(&data, &samples, &out),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DataFile {
    domain: usize,
    file: String,
    rows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DataManifest {
    build: String,
    channels: usize,
    length: usize,
    files: Vec<DataFile>,
    params: data::BenchParams,
    bench: BenchConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_generate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = Config::load(config)?;
    let seed = match seed {
        Some(s) => s,
        None => cfg.get("seed")?,
    };
    let params = cfg.bench_params(seed)?;
    let bench = BenchConfig::standard(&params)?;
    let domains = data::generate(&bench)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut files = Vec::new();
    for ds in &domains {
        let file = format!("domain_{}.csv", ds.domain);
        data::save_csv(ds, out.join(&file))?;
        files.push(DataFile {
            domain: ds.domain,
            file,
            rows: ds.len(),
        });
    }
    write_json(
        &out.join("manifest.json"),
        &DataManifest {
            build: BUILD_ID.into(),
            channels: bench.channels,
            length: bench.length,
            files,
            params,
            bench,
        },
    )?;
    println!("wrote {} domains to {}", domains.len(), out.display());
    Ok(())
}

fn load_data(dir: &Path) -> Result<(DataManifest, Vec<DomainDataset>)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: DataManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut domains = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let ds = data::load_csv(dir.join(&f.file), manifest.channels).with_context(|| format!("loading {}", f.file))?;
        if ds.domain != f.domain || ds.length != manifest.length {
            bail!("{} does not match its manifest entry", f.file);
        }
        domains.push(ds);
    }
    Ok((manifest, domains))
}

fn save_network(path: &Path, net: &Network<f64>, input: InputKind, seed: u64) -> Result<()> {
    let mut w = create(path)?;
    model::save_checkpoint(&mut w, net, input, seed)?;
    Ok(())
}

fn save_metrics(path: &Path, rows: &[training::EpochMetrics]) -> Result<()> {
    let mut w = create(path)?;
    training::write_metrics(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

/// Trains the teacher when the run's objective uses distillation.
fn maybe_teacher(sources: &[DomainDataset], cfg: &TrainConfig) -> Result<Option<training::TeacherRun>> {
    if !cfg.mode.needs_teacher(cfg.weights) {
        return Ok(None);
    }
    Ok(Some(training::train_teacher(sources, cfg)?))
}

#[derive(Serialize)]
struct RunSummary {
    target: usize,
    seed: u64,
    mode: String,
    best_epoch: usize,
    best_val_acc: f64,
    target_acc: f64,
    teacher_best_val_acc: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data_dir: &Path,
    target: usize,
    mode: AblationMode,
    seed: Option<u64>,
    exploration: Option<Exploration>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg_file = Config::load(config)?;
    let seed = match seed {
        Some(s) => s,
        None => cfg_file.get("seed")?,
    };
    let mut cfg = cfg_file.train_config(seed, exploration)?;
    cfg.mode = mode;
    cfg.validate()?;
    let (manifest, domains) = load_data(data_dir)?;
    let (sources, held_out) = data::leave_one_out(&domains, target)?;

    let teacher = maybe_teacher(&sources, &cfg)?;
    let frozen = teacher.as_ref().map(|t| &t.teacher);
    let run = training::train_student(&sources, frozen, Some(&held_out), &cfg)?;
    let target_acc = run.target_acc.expect("target was supplied");

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_network(
        &out.join("student.ckpt"),
        &Network::Student(run.model.clone()),
        run.input,
        seed,
    )?;
    save_metrics(&out.join("metrics.csv"), &run.metrics)?;
    if let Some(t) = &teacher {
        save_network(
            &out.join("teacher.ckpt"),
            &Network::Teacher(t.teacher.model().clone()),
            InputKind::Phase,
            seed,
        )?;
        save_metrics(&out.join("teacher_metrics.csv"), &t.metrics)?;
    }
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "build": BUILD_ID,
            "train": cfg,
            "bench": manifest.bench,
            "seeds": [seed],
            "runs": [RunSummary {
                target,
                seed,
                mode: mode.to_string(),
                best_epoch: run.best_epoch,
                best_val_acc: run.best_val_acc,
                target_acc,
                teacher_best_val_acc: teacher.as_ref().map(|t| t.best_val_acc),
            }],
        }),
    )?;
    println!("target {target} mode {mode} seed {seed}: target accuracy {target_acc:?}");
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data_dir: &Path, target: Option<usize>) -> Result<()> {
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let (header, net) = model::load_checkpoint::<f64, _>(std::io::BufReader::new(file))
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let student = net.into_student()?;
    let (_, domains) = load_data(data_dir)?;
    let ds = match target {
        Some(t) => domains
            .iter()
            .find(|d| d.domain == t)
            .cloned()
            .ok_or_else(|| DataError::BadTarget {
                target: t,
                available: domains.iter().map(|d| d.domain).collect(),
            })?,
        None => pooled(&domains)?,
    };
    let acc = training::evaluate_student(&student, header.input, &ds)?;
    println!("accuracy {acc:?}");
    Ok(())
}

fn pooled(domains: &[DomainDataset]) -> Result<DomainDataset> {
    let first = domains.first().ok_or(DataError::Empty)?;
    let samples = domains.iter().flat_map(|d| d.samples.iter().cloned()).collect();
    Ok(DomainDataset::new(first.domain, first.channels, first.length, samples)?)
}

#[derive(Clone, Debug, Serialize)]
struct Cell {
    target: usize,
    seed: u64,
    mode: AblationMode,
    best_epoch: usize,
    best_val_acc: f64,
    target_acc: f64,
}

#[derive(Clone, Debug, Serialize)]
struct Aggregate {
    target: String,
    mode: AblationMode,
    mean: f64,
    std: f64,
    n: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("DIFEX_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow!("DIFEX_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("DIFEX_THREADS must be a positive integer, got `{v}`");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn cmd_ablate(
    data_dir: &Path,
    seeds: Option<Vec<u64>>,
    exploration: Option<Exploration>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg_file = Config::load(config)?;
    let seeds = match seeds {
        Some(s) => s,
        None => cfg_file.list("seeds")?,
    };
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    let base = cfg_file.train_config(seeds[0], exploration)?;
    base.validate()?;
    let (manifest, domains) = load_data(data_dir)?;
    let targets: Vec<usize> = domains.iter().map(|d| d.domain).collect();
    let pool = thread_pool()?;

    // Teachers do not depend on the arm, so each (target, seed) trains one.
    let pairs: Vec<(usize, u64)> = targets
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let need_teacher = AblationMode::GRID.iter().any(|m| m.needs_teacher(base.weights));
    let teachers: Vec<Option<FrozenTeacher>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(t, s)| -> Result<Option<FrozenTeacher>> {
                if !need_teacher {
                    return Ok(None);
                }
                let (sources, _) = data::leave_one_out(&domains, t)?;
                let cfg = TrainConfig {
                    seed: s,
                    ..base.clone()
                };
                Ok(Some(training::train_teacher(&sources, &cfg)?.teacher))
            })
            .collect::<Result<_>>()
    })?;

    let jobs: Vec<(usize, AblationMode)> = (0..pairs.len())
        .flat_map(|p| AblationMode::GRID.iter().map(move |&m| (p, m)))
        .collect();
    let cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, mode)| -> Result<Cell> {
                let (target, seed) = pairs[p];
                let (sources, held_out) = data::leave_one_out(&domains, target)?;
                let cfg = TrainConfig {
                    seed,
                    mode,
                    ..base.clone()
                };
                let teacher = if mode.needs_teacher(cfg.weights) {
                    teachers[p].as_ref()
                } else {
                    None
                };
                let run: RunResult = training::train_student(&sources, teacher, Some(&held_out), &cfg)
                    .with_context(|| format!("target {target}, seed {seed}, mode {mode}"))?;
                Ok(Cell {
                    target,
                    seed,
                    mode,
                    best_epoch: run.best_epoch,
                    best_val_acc: run.best_val_acc,
                    target_acc: run.target_acc.expect("target was supplied"),
                })
            })
            .collect::<Result<_>>()
    })?;

    let mut cells = cells;
    cells.sort_by_key(|c| (c.target, AblationMode::GRID.iter().position(|&m| m == c.mode), c.seed));

    let mut aggregates = Vec::new();
    let groups = targets
        .iter()
        .map(|t| (t.to_string(), Some(*t)))
        .chain([("all".to_string(), None)]);
    for (label, t) in groups {
        for &mode in AblationMode::GRID.iter() {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| c.mode == mode && t.is_none_or(|t| c.target == t))
                .map(|c| c.target_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            aggregates.push(Aggregate {
                target: label.clone(),
                mode,
                mean,
                std,
                n: accs.len(),
            });
        }
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create(&out.join("grid.csv"))?;
    writeln!(w, "target,seed,mode,best_epoch,best_val_acc,target_acc")?;
    for c in &cells {
        writeln!(
            w,
            "{},{},{},{},{:?},{:?}",
            c.target, c.seed, c.mode, c.best_epoch, c.best_val_acc, c.target_acc
        )?;
    }
    w.flush()?;
    let mut w = create(&out.join("summary.csv"))?;
    writeln!(w, "target,mode,mean,std,n")?;
    for a in &aggregates {
        writeln!(w, "{},{},{:?},{:?},{}", a.target, a.mode, a.mean, a.std, a.n)?;
    }
    w.flush()?;
    let table = summary_table(&aggregates);
    fs::write(out.join("summary.txt"), &table)?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "build": BUILD_ID,
            "train": base,
            "bench": manifest.bench,
            "seeds": seeds,
            "runs": cells,
            "aggregate": aggregates,
        }),
    )?;
    print!("{table}");
    Ok(())
}

/// Aligned mean ± std table, one row per target, one column per arm.
fn summary_table(aggs: &[Aggregate]) -> String {
    let mut s = format!("{:<8}", "target");
    for m in AblationMode::GRID {
        s.push_str(&format!("{:>18}", m.as_str()));
    }
    s.push('\n');
    let mut labels: Vec<&str> = Vec::new();
    for a in aggs {
        if !labels.contains(&a.target.as_str()) {
            labels.push(&a.target);
        }
    }
    for label in labels {
        s.push_str(&format!("{label:<8}"));
        for m in AblationMode::GRID {
            let a = aggs
                .iter()
                .find(|a| a.target == label && a.mode == m)
                .expect("every (target, arm) is aggregated");
            s.push_str(&format!("{:>18}", format!("{:.4} ± {:.4}", a.mean, a.std)));
        }
        s.push('\n');
    }
    s
}

fn cmd_motivate(data_dir: &Path, ids: &[SampleId], out: &Path) -> Result<()> {
    let (manifest, domains) = load_data(data_dir)?;
    let shape = [manifest.channels, manifest.length];
    let mut header = vec!["index".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for id in ids {
        let ds = domains
            .iter()
            .find(|d| d.domain == id.domain)
            .ok_or_else(|| anyhow!("no domain {} in {}", id.domain, data_dir.display()))?;
        let sample = ds
            .samples
            .get(id.index)
            .ok_or_else(|| anyhow!("domain {} has no sample {}", id.domain, id.index))?;
        let spec = fourier::per_channel_spectrum(&sample.x, &shape)?;
        let phase_only: Vec<f64> = sample
            .x
            .chunks(manifest.length)
            .map(|ch| fourier::fft(ch).map(|s| fourier::reconstruct_phase_only(&s)))
            .collect::<Result<Vec<_>, _>>()?
            .concat();
        let tag = format!("d{}_i{}_y{}", id.domain, id.index, sample.y);
        for (name, col) in [
            ("raw", sample.x.clone()),
            ("amplitude", fourier::amplitude(&spec)),
            ("phase", fourier::phase(&spec)),
            ("phase_only", phase_only),
        ] {
            header.push(format!("{tag}_{name}"));
            columns.push(col);
        }
    }
    let mut w = create(out)?;
    writeln!(w, "{}", header.join(","))?;
    for r in 0..manifest.channels * manifest.length {
        let mut line = r.to_string();
        for c in &columns {
            line.push_str(&format!(",{:?}", c[r]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    println!("wrote {} sample(s) to {}", ids.len(), out.display());
    Ok(())
}
