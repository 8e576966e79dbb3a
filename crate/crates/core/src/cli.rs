//! The `misd` command line.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::augment::{CropConfig, CropSchedule, ViewStrategy, DEFAULT_CROPS};
use crate::data_io::{self, ImageDataset, ScoresFile, SynthConfig, SynthGeometry};
use crate::gradcheck::{self, GradCheckOptions};
use crate::losses::{LossConfig, NegativeMode, DEFAULT_LAMBDA_NEG, DEFAULT_LAMBDA_ORTH, DEFAULT_TEMPERATURE};
use crate::metrics::{full_report, MisDReport, ScoresKind, REPORT_FIELDS};
use crate::trainer::{self, Backbone, TrainConfig, TrainedModel};
use crate::{MisdError, Result};

pub const TRAIN_IMAGES: &str = "train.misdimg";
pub const VAL_IMAGES: &str = "val.misdimg";
pub const TRAIN_EMBEDDINGS: &str = "train.misdemb";
pub const VAL_EMBEDDINGS: &str = "val.misdemb";
pub const BACKBONE: &str = "backbone.json";
pub const MANIFEST: &str = "manifest.json";
pub const MODEL: &str = "model.json";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const REPORT: &str = "report.json";
pub const SCORES: &str = "scores.csv";
pub const SWEEP_TABLE: &str = "sweep.csv";
pub const SWEEP_RUNS: &str = "runs.csv";

#[derive(Debug, Parser)]
#[command(name = "misd", version, about = "Few-shot misclassification detection with learned prompts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark (images and embeddings for both splits)
    GenSynth(GenSynthArgs),
    /// Train prompts on a dataset
    Train(TrainArgs),
    /// Score a validation split with a trained model
    Eval(EvalArgs),
    /// Compute the metric report for a scores file
    Metrics(MetricsArgs),
    /// Train and evaluate over shots x seeds and aggregate the reports
    Sweep(SweepArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Views per training sample in the embedding file
    #[arg(long, default_value_t = DEFAULT_CROPS)]
    pub crops: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Backbone file (defaults to backbone.json next to the data)
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    #[arg(long, default_value_t = trainer::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_NEG)]
    pub lambda_neg: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_ORTH)]
    pub lambda_orth: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_NEGATIVE_PROMPTS)]
    pub neg_prompts: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_CONTEXT_LEN)]
    pub context_len: usize,
    #[arg(long, default_value_t = DEFAULT_CROPS)]
    pub crops: usize,
    /// adaptive | static
    #[arg(long, default_value = "adaptive")]
    pub crop_schedule: CropSchedule,
    /// global | local | global-local
    #[arg(long, default_value = "global")]
    pub negative_mode: NegativeMode,
    /// random-crop | cutout | gaussian-noise
    #[arg(long, default_value = "random-crop")]
    pub augment: ViewStrategy,
}

impl TrainingFlags {
    pub fn config(&self, shots: usize) -> TrainConfig {
        TrainConfig {
            shots,
            epochs: self.epochs,
            lr: self.lr,
            loss: LossConfig {
                temperature: self.temperature,
                lambda_neg: self.lambda_neg,
                lambda_orth: self.lambda_orth,
                negative_mode: self.negative_mode,
            },
            context_len: self.context_len,
            negative_prompts: self.neg_prompts,
            crop: CropConfig { k: self.crops, schedule: self.crop_schedule, strategy: self.augment, ..CropConfig::default() },
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// A gen-synth directory, an image file or a multi-view embedding file
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = trainer::DEFAULT_SHOTS)]
    pub shots: usize,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Frozen backbone: `--backbone` if given, else `backbone.json` next to the
/// data, else the unaligned default.
fn resolve_backbone(flag: Option<&Path>, data: &Path) -> Result<Backbone> {
    if let Some(path) = flag {
        return trainer::read_backbone(path);
    }
    let dir = if data.is_dir() { Some(data) } else { data.parent() };
    match dir.map(|d| d.join(BACKBONE)).filter(|p| p.is_file()) {
        Some(path) => trainer::read_backbone(&path),
        None => Ok(Backbone::default()),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A gen-synth directory (its validation split), an image file or a k = 1 embedding file
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Report path; the scores file and manifest are written next to it
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// A gen-synth directory
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub shots: Vec<usize>,
    /// Number of seeds per shot count, starting at --seed
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, env = "MISD_JOBS")]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = gradcheck::DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Added to every analytic gradient coordinate (harness self-test)
    #[arg(long, default_value_t = 0.0, hide = true)]
    pub perturb: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub wall_time_seconds: f64,
}

struct Run {
    command: &'static str,
    started: Instant,
    dir: PathBuf,
}

impl Run {
    fn start(command: &'static str, out: Option<PathBuf>) -> Self {
        let dir = out.unwrap_or_else(|| {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
            PathBuf::from(format!("{command}-{stamp}"))
        });
        Self { command, started: Instant::now(), dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish(self, config: Value, seed: u64, inputs: Vec<PathBuf>, mut outputs: Vec<PathBuf>) -> Result<PathBuf> {
        let path = self.path(MANIFEST);
        outputs.push(path.clone());
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_text(&path, &text)?;
        Ok(self.dir)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MisdError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| MisdError::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

/// Parses `args` and runs the command, writing progress to stdout.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        // help and version requests are not failures
        if !e.use_stderr() {
            e.exit();
        }
        MisdError::Config(e.to_string())
    })?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Metrics(a) => metrics(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    if a.classes < 2 {
        return Err(MisdError::DegenerateTask(format!("{} class(es) requested, at least 2 are needed", a.classes)));
    }
    let run = Run::start("gen-synth", a.out);
    let synth = SynthConfig { classes: a.classes, per_class: a.per_class, seed: a.seed, geometry: SynthGeometry::default() };
    let crops = CropConfig { k: a.crops, ..CropConfig::default() };
    crops.validate()?;
    let backbone = trainer::synthetic_backbone(&synth)?;
    let encoder = backbone.vision_encoder()?;
    let train = data_io::gen_synth(&synth, "train")?;
    let val = data_io::gen_synth(&synth, "val")?;
    let train_emb = data_io::embed_dataset(&train, &encoder, &crops, crate::seed::derive(a.seed, &["train-views"]))?;
    let val_emb = trainer::embed_for_eval(&val, &backbone)?;
    let outputs = vec![
        run.path(TRAIN_IMAGES),
        run.path(VAL_IMAGES),
        run.path(TRAIN_EMBEDDINGS),
        run.path(VAL_EMBEDDINGS),
        run.path(BACKBONE),
    ];
    data_io::write_images(&outputs[0], &train)?;
    data_io::write_images(&outputs[1], &val)?;
    data_io::write_embeddings(&outputs[2], &train_emb)?;
    data_io::write_embeddings(&outputs[3], &val_emb)?;
    trainer::write_backbone(&outputs[4], &backbone)?;
    let config = json!({ "synth": to_value(&synth), "crops": to_value(&crops) });
    let dir = run.finish(config, a.seed, vec![], outputs)?;
    println!(
        "wrote {} train and {} val images over {} classes to {}",
        train.len(),
        val.len(),
        a.classes,
        dir.display()
    );
    Ok(())
}

enum TrainData {
    Images(ImageDataset),
    Embeddings(data_io::EmbeddingDataset),
}

fn is_embedding_file(path: &Path) -> Result<bool> {
    let bytes = data_io_head(path)?;
    Ok(bytes.as_slice() == data_io::EMBEDDING_MAGIC)
}

fn data_io_head(path: &Path) -> Result<Vec<u8>> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| MisdError::io(path, e))?;
    let mut head = Vec::with_capacity(8);
    f.by_ref().take(8).read_to_end(&mut head).map_err(|e| MisdError::io(path, e))?;
    Ok(head)
}

fn load_train_data(path: &Path) -> Result<TrainData> {
    let file = if path.is_dir() { path.join(TRAIN_IMAGES) } else { path.to_path_buf() };
    if is_embedding_file(&file)? {
        Ok(TrainData::Embeddings(data_io::read_embeddings(&file)?))
    } else {
        Ok(TrainData::Images(data_io::read_images(&file)?))
    }
}

fn fit(data: &TrainData, config: &TrainConfig, backbone: &Backbone) -> Result<TrainedModel> {
    match data {
        TrainData::Images(ds) => trainer::train(ds, config, backbone),
        TrainData::Embeddings(ds) => trainer::train_embeddings(ds, config, backbone),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.training.config(a.shots);
    config.validate()?;
    let data = load_train_data(&a.data)?;
    let backbone = resolve_backbone(a.training.backbone.as_deref(), &a.data)?;
    let model = fit(&data, &config, &backbone)?;
    let run = Run::start("train", a.out);
    let outputs = vec![run.path(MODEL), run.path(LOSS_TRACE)];
    trainer::write_model(&outputs[0], &model)?;
    write_text(&outputs[1], &trainer::loss_trace_csv(&model.trace))?;
    let resolved = json!({ "train": to_value(&config), "backbone": to_value(&model.backbone) });
    let dir = run.finish(resolved, config.seed, vec![a.data], outputs)?;
    match model.trace.last() {
        Some(last) => println!("trained {} epochs, final loss {:.6}; wrote {}", config.epochs, last.total, dir.display()),
        None => println!("wrote untrained model to {}", dir.display()),
    }
    Ok(())
}

fn load_eval_data(path: &Path, model: &TrainedModel) -> Result<data_io::EmbeddingDataset> {
    let file = if path.is_dir() { path.join(VAL_IMAGES) } else { path.to_path_buf() };
    if is_embedding_file(&file)? {
        data_io::read_embeddings(&file)
    } else {
        trainer::embed_for_eval(&data_io::read_images(&file)?, &model.backbone)
    }
}

fn evaluate(model: &TrainedModel, data: &data_io::EmbeddingDataset) -> Result<(ScoresFile, MisDReport)> {
    let predictions = trainer::score_embeddings(model, data)?;
    let report = full_report(&predictions, ScoresKind::Classified)?;
    Ok((ScoresFile { kind: ScoresKind::Classified, predictions }, report))
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = trainer::read_model(&a.model)?;
    let data = load_eval_data(&a.data, &model)?;
    let (scores, report) = evaluate(&model, &data)?;
    let report_path = a.report.unwrap_or_else(|| Run::start("eval", None).path(REPORT));
    let dir = report_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let run = Run::start("eval", Some(dir));
    let outputs = vec![report_path.clone(), run.path(SCORES)];
    data_io::write_report(&outputs[0], &report)?;
    data_io::write_scores(&outputs[1], &scores)?;
    run.finish(json!({ "model": to_value(&model.config) }), model.config.seed, vec![a.data, a.model], outputs)?;
    print!("{}", report.to_json());
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let scores = data_io::read_scores(&a.scores)?;
    let report = full_report(&scores.predictions, scores.kind)?;
    if let Some(path) = &a.report {
        data_io::write_report(path, &report)?;
    }
    print!("{}", report.to_json());
    Ok(())
}

/// Mean and sample standard deviation of every report field.
pub fn aggregate(reports: &[MisDReport]) -> Vec<(Option<f64>, Option<f64>)> {
    (0..REPORT_FIELDS.len())
        .map(|f| {
            let values: Option<Vec<f64>> = reports.iter().map(|r| r.values()[f]).collect();
            match values {
                Some(v) if !v.is_empty() => {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std = if v.len() > 1 {
                        Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
                    } else {
                        None
                    };
                    (Some(mean), std)
                }
                _ => (None, None),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn sweep_table(rows: &[(usize, Vec<MisDReport>)]) -> String {
    let mut out = String::from("shots,runs");
    for f in REPORT_FIELDS {
        out.push_str(&format!(",{f}_mean,{f}_std"));
    }
    out.push('\n');
    for (shots, reports) in rows {
        out.push_str(&format!("{shots},{}", reports.len()));
        for (mean, std) in aggregate(reports) {
            out.push_str(&format!(",{},{}", cell(mean), cell(std)));
        }
        out.push('\n');
    }
    out
}

fn sweep(a: SweepArgs) -> Result<()> {
    if a.shots.is_empty() || a.seeds == 0 {
        return Err(MisdError::Config("sweep needs at least one shot count and one seed".into()));
    }
    let data = load_train_data(&a.data)?;
    let backbone = resolve_backbone(a.training.backbone.as_deref(), &a.data)?;
    let jobs = a.jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| MisdError::Config(format!("thread pool: {e}")))?;
    let cells: Vec<(usize, u64)> =
        a.shots.iter().flat_map(|&s| (0..a.seeds).map(move |i| (s, i))).collect();
    let base = a.training.seed;
    let results: Vec<Result<MisDReport>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(shots, i)| {
                let mut flags = a.training.clone();
                flags.seed = base + i;
                let model = fit(&data, &flags.config(shots), &backbone)?;
                let val = load_eval_data(&a.data, &model)?;
                Ok(evaluate(&model, &val)?.1)
            })
            .collect()
    });
    let mut runs = String::from("shots,seed,");
    runs.push_str(&MisDReport::csv_header());
    runs.push('\n');
    let mut rows: Vec<(usize, Vec<MisDReport>)> = Vec::new();
    for (&(shots, i), result) in cells.iter().zip(results) {
        let report = result?;
        runs.push_str(&format!("{shots},{},{}\n", base + i, report.csv_row()));
        match rows.iter_mut().find(|(s, _)| *s == shots) {
            Some((_, v)) => v.push(report),
            None => rows.push((shots, vec![report])),
        }
    }
    let table = sweep_table(&rows);
    let run = Run::start("sweep", a.out);
    let outputs = vec![run.path(SWEEP_TABLE), run.path(SWEEP_RUNS)];
    write_text(&outputs[0], &table)?;
    write_text(&outputs[1], &runs)?;
    let config = json!({
        "shots": a.shots,
        "seeds": a.seeds,
        "jobs": jobs,
        "train": to_value(&a.training.config(0)),
    });
    run.finish(config, base, vec![a.data], outputs)?;
    print!("{table}");
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let options = GradCheckOptions { trials: a.trials, seed: a.seed, perturbation: a.perturb, ..Default::default() };
    let report = gradcheck::run(&options)?;
    let w = &report.worst;
    println!(
        "checked {} coordinates over {} trials; worst relative error {:.3e} ({} gradient, trial {}, coordinate {})",
        report.checked, report.trials, w.relative_error, w.component, w.trial, w.coordinate
    );
    if let Some(out) = a.out {
        let run = Run::start("gradcheck", Some(out));
        let path = run.path("gradcheck.json");
        write_text(&path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
        run.finish(to_value(&json!({ "trials": a.trials, "perturb": a.perturb })), a.seed, vec![], vec![path])?;
    }
    if !report.passed() {
        return Err(MisdError::GradCheck(format!(
            "{} gradient, trial {}, coordinate {}: analytic {:.6e} vs numeric {:.6e}",
            w.component, w.trial, w.coordinate, w.analytic, w.numeric
        )));
    }
    Ok(())
}
