use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fs2net::classifier::{build_default_set, classify_all, load_default_set, save_default_set, PredictionTable};
use fs2net::eval::{attach_truth, compute_metrics, run_protocol, NamedDataset, Protocol, ProtocolConfig};
use fs2net::fiber::parse_dataset;
use fs2net::nn::AdamConfig;
use fs2net::preprocess::{is_processed_text, parse_processed, preprocess_dataset, save_processed};
use fs2net::siamese::{tiny_gradcheck, TowerConfig};
use fs2net::trainer::{load_checkpoint, save_checkpoint, LogEntry, TrainConfig, Trainer};
use fs2net::{
    generate_corpus, load_dataset, rotate_fiber, save_dataset, FiberDataset, FineLabel, GenConfig, Level,
    ProcessedFiber, TaggedRotation,
};

/// Fiber structural similarity network: synthetic data, preprocessing,
/// Siamese training and default-set classification.
#[derive(Parser, Debug)]
#[command(name = "fs2net", version)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FS2NET_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Gen(GenArgs),
    /// Prune and pad a raw dataset to 100×3 features.
    Preprocess(PreprocessArgs),
    /// Train a Siamese model and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Build a labeled default (reference) set, optionally rotation-augmented.
    Defaultset(DefaultSetArgs),
    /// Classify fibers against a default set.
    Classify(ClassifyArgs),
    /// Score a prediction table against ground truth.
    Eval(EvalArgs),
    /// Run an intra, inter or merged experiment end to end.
    Protocol(ProtocolArgs),
    /// Finite-difference gradient check on tiny random models.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Fibers per white tract.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0.9)]
    grey_fraction: f64,
    /// Gaussian jitter per coordinate (mm).
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 36)]
    min_len: usize,
    #[arg(long, default_value_t = 120)]
    max_len: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TowerArgs {
    #[arg(long, default_value_t = 32)]
    blstm_hidden: usize,
    #[arg(long, default_value_t = 64)]
    lstm_hidden: usize,
    #[arg(long, default_value_t = 64)]
    dense_hidden: usize,
    #[arg(long, default_value_t = 32)]
    embedding: usize,
}

impl TowerArgs {
    fn config(&self) -> TowerConfig {
        TowerConfig {
            blstm_hidden: self.blstm_hidden,
            lstm_hidden: self.lstm_hidden,
            dense_hidden: self.dense_hidden,
            embedding: self.embedding,
        }
    }
}

#[derive(Args, Debug)]
struct OptimArgs {
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta1)]
    beta1: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta2)]
    beta2: f64,
    #[arg(long, default_value_t = AdamConfig::default().eps)]
    eps: f64,
    /// Pairs per iteration; must be a multiple of 11 (default 11).
    #[arg(long, default_value_t = 11)]
    batch_size: usize,
    #[command(flatten)]
    tower: TowerArgs,
}

impl OptimArgs {
    fn train_config(&self, level: Level, seed: u64) -> TrainConfig {
        TrainConfig {
            level,
            iterations: self.iters,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            seed,
            tower: self.tower.config(),
            data_path: None,
            checkpoint_path: None,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    level: Level,
    /// Raw or processed dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Loss log (TSV). Defaults to the checkpoint path with a `.log.tsv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint until `--iters` total iterations.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct DefaultSetArgs {
    /// Raw labeled dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    level: Level,
    #[arg(long, default_value_t = fs2net::classifier::DEFAULT_PER_CLASS)]
    per_class: usize,
    /// Comma-separated rotations such as `z:10,z:-10`, or `none`.
    #[arg(long, default_value = "z:10,z:-10,z:20,z:-20,z:30,z:-30")]
    rotations: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    defaults: PathBuf,
    /// Raw or processed fibers to classify.
    #[arg(long = "in")]
    input: PathBuf,
    /// Rotate raw input fibers first, e.g. `z:30`.
    #[arg(long)]
    rotate: Option<TaggedRotation>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Raw or processed dataset holding the true labels.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    level: Level,
    /// Text report; a key-value copy goes next to it with a `.kv` extension.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Debug)]
struct ProtocolArgs {
    #[arg(long)]
    kind: Protocol,
    /// Raw datasets. Inter: the first trains, the rest are tested.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "coarse,fine")]
    levels: Vec<Level>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Intra training fraction.
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    /// Merged per-file training quota.
    #[arg(long, default_value_t = 4000)]
    quota: usize,
    #[arg(long, default_value_t = fs2net::classifier::DEFAULT_PER_CLASS)]
    per_class: usize,
    #[arg(long, default_value = "z:10,z:-10,z:20,z:-20,z:30,z:-30")]
    rotations: String,
    /// Rotate every raw test fiber, e.g. `z:30`.
    #[arg(long)]
    test_rotation: Option<TaggedRotation>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Number of random tiny models.
    #[arg(long, default_value_t = 20)]
    models: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Fail when the maximum relative error exceeds this.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

fn parse_rotations(s: &str) -> Result<Vec<TaggedRotation>> {
    if s == "none" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|r| r.trim().parse::<TaggedRotation>().map_err(anyhow::Error::msg))
        .collect()
}

enum Input {
    Raw(FiberDataset),
    Processed(Vec<ProcessedFiber>),
}

fn read_input(path: &Path) -> Result<Input> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if is_processed_text(&text) {
        Input::Processed(parse_processed(&text)?)
    } else {
        Input::Raw(parse_dataset(&text)?)
    };
    Ok(parsed)
}

fn read_processed(path: &Path) -> Result<Vec<ProcessedFiber>> {
    Ok(match read_input(path).with_context(|| format!("loading {}", path.display()))? {
        Input::Processed(p) => p,
        Input::Raw(ds) => preprocess_dataset(&ds)?,
    })
}

fn write_log(log: &[LogEntry], path: &Path, append: bool) -> Result<()> {
    let mut text = fs2net::trainer::render_log(log);
    if append && path.exists() {
        text = text.split_once('\n').map(|(_, rest)| rest.to_string()).unwrap_or_default();
        let mut old = fs::read_to_string(path)?;
        old.push_str(&text);
        text = old;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.tsv")
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        per_white_class: a.per_class,
        grey_fraction: a.grey_fraction,
        noise_sigma: a.noise,
        seed: a.seed,
        length_range: (a.min_len, a.max_len),
    };
    let ds = generate_corpus(&cfg)?;
    save_dataset(&ds, &a.out)?;
    println!(
        "wrote {} fibers ({} white, {} grey) to {}",
        ds.len(),
        cfg.white_count(),
        cfg.grey_count(),
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let out = preprocess_dataset(&ds)?;
    save_processed(&out, &a.out)?;
    println!("preprocessed {} fibers to {}", out.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let fibers = read_processed(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config.level != a.level {
                bail!("checkpoint is {}-level, --level is {}", ckpt.config.level, a.level);
            }
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.set_iterations(a.optim.iters);
            t
        }
        None => {
            let mut cfg = a.optim.train_config(a.level, a.seed);
            cfg.data_path = Some(a.data.display().to_string());
            cfg.checkpoint_path = Some(a.out.display().to_string());
            Trainer::new(cfg)?
        }
    };
    if trainer.config().is_override() {
        eprintln!("warning: batch size {} differs from the 11-pair setting", trainer.config().batch_size);
    }
    let total = trainer.config().iterations;
    let log = trainer.run(&fibers, |e| {
        if e.iteration % 100 == 0 || e.iteration == total {
            eprintln!("iteration {:>5}  loss {:.6}", e.iteration, e.loss);
        }
    })?;
    save_checkpoint(&trainer.checkpoint(), &a.out)?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    write_log(&log, &log_path, a.resume.is_some())?;
    let last = log.last().map_or(f64::NAN, |e| e.loss);
    println!(
        "trained {} level to iteration {} (last loss {last:.6}); checkpoint {}, log {}",
        trainer.config().level,
        trainer.iteration(),
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn defaultset(a: DefaultSetArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let rotations = parse_rotations(&a.rotations)?;
    let set = build_default_set(&ds, a.level, a.per_class, &rotations, a.seed)?;
    save_default_set(&set, &a.out)?;
    println!(
        "wrote {} default entries ({} per class × {} orientations) to {}",
        set.len(),
        a.per_class,
        1 + rotations.len(),
        a.out.display()
    );
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?.model;
    let defaults = load_default_set(&a.defaults, model.level)?;
    let fibers = match (read_input(&a.input)?, &a.rotate) {
        (Input::Raw(ds), Some(r)) => {
            let rotated = ds
                .fibers
                .iter()
                .map(|f| rotate_fiber(f, &r.rotation))
                .collect::<fs2net::Result<Vec<_>>>()?;
            preprocess_dataset(&FiberDataset::new(rotated, ds.provenance)?)?
        }
        (Input::Raw(ds), None) => preprocess_dataset(&ds)?,
        (Input::Processed(_), Some(_)) => bail!("--rotate needs raw (unprocessed) input"),
        (Input::Processed(p), None) => p,
    };
    let table = classify_all(&model, &defaults, &fibers)?;
    table.save(&a.out)?;
    println!(
        "classified {} fibers at {} level against {} references; predictions in {}",
        table.rows.len(),
        model.level,
        defaults.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let table = PredictionTable::load(&a.pred, a.level)?;
    let labels: HashMap<String, Option<FineLabel>> = match read_input(&a.truth)? {
        Input::Raw(ds) => ds.fibers.into_iter().map(|f| (f.id, f.label)).collect(),
        Input::Processed(p) => p.into_iter().map(|f| (f.id, f.label)).collect(),
    };
    let joined = attach_truth(&table, &labels)?;
    let mut report = compute_metrics(&joined)?;
    report.test = a.truth.display().to_string();
    report.save(&a.report)?;
    println!(
        "accuracy {:.2}% recall {} over {} fibers; report {}",
        report.accuracy,
        report.recall.map_or("n/a".into(), |r| format!("{r:.2}%")),
        report.total,
        a.report.display()
    );
    Ok(())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn protocol(a: ProtocolArgs) -> Result<()> {
    let inputs = a
        .data
        .iter()
        .map(|p| {
            Ok(NamedDataset {
                name: dataset_name(p),
                dataset: load_dataset(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = ProtocolConfig {
        protocol: a.kind,
        levels: a.levels.clone(),
        train: a.optim.train_config(Level::Coarse, a.seed),
        seed: a.seed,
        fraction: a.fraction,
        quota: a.quota,
        per_class: a.per_class,
        augmentation: parse_rotations(&a.rotations)?,
        test_rotation: a.test_rotation.clone(),
    };
    let runs = run_protocol(&cfg, &inputs)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for run in &runs {
        let r = &run.report;
        let stem = format!("{}-{}-{}", r.protocol, r.level, r.test);
        let path = |ext: &str| a.out_dir.join(format!("{stem}.{ext}"));
        save_checkpoint(&run.checkpoint, path("ckpt"))?;
        write_log(&run.log, &path("log.tsv"), false)?;
        run.predictions.save(path("pred.tsv"))?;
        r.save(path("report.txt"))?;
        println!(
            "{stem}: accuracy {:.2}% recall {} ({} fibers)",
            r.accuracy,
            r.recall.map_or("n/a".into(), |v| format!("{v:.2}%")),
            r.total
        );
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    for k in 0..a.models {
        let seed = a.seed.wrapping_add(k);
        let err = tiny_gradcheck(seed, a.eps)?;
        eprintln!("model seed {seed}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    println!("max relative error {worst:.3e} over {} models", a.models);
    if worst >= a.tolerance {
        bail!("gradient check failed: {worst:.3e} >= {:.1e}", a.tolerance);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Defaultset(a) => defaultset(a),
        Command::Classify(a) => classify(a),
        Command::Eval(a) => eval(a),
        Command::Protocol(a) => protocol(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
