//! `afsd` command-line entry point.
//!
//! Exit status: 0 on success, 1 when the configuration or arguments fail
//! validation (or `gradcheck` exceeds its tolerance), 2 on runtime failure.

mod plots;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use afsd::config::Config;
use afsd::eval::{mean_ap, pr_curve};
use afsd::model::{load_model, save_model, Afsd, ModelMeta, ModelSpec};
use afsd::pipeline::clips::{clip_grid, ClipSample, Mode};
use afsd::pipeline::dataset::ANNOTATION_FILE;
use afsd::pipeline::{
    infer_videos, load_detections, load_videos, predict_clip, save_detections, synth_dataset, train_model,
    AnnotationDoc, StepRecord, Stream, VideoRecord,
};
use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tensorcore::Tensor;

const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Parser)]
#[command(name = "afsd", version, about = "Anchor-free temporal action localization")]
struct Cli {
    /// TOML config file; the built-in THUMOS profile when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config value, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Sets both the training seed and the initialisation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where outputs (and the resolved config) are written.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = StreamArg::Rgb)]
    stream: StreamArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StreamArg {
    Rgb,
    Flow,
    Both,
}

impl StreamArg {
    fn streams(self) -> Vec<Stream> {
        match self {
            StreamArg::Rgb => vec![Stream::Rgb],
            StreamArg::Flow => vec![Stream::Flow],
            StreamArg::Both => vec![Stream::Rgb, Stream::Flow],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generates a synthetic dataset (seeded by `train.seed`).
    Synth,
    /// Trains one model per selected stream.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        subset: String,
    },
    /// Writes detections for a subset.
    Infer {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of a `train` run.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Scores a detections file against the annotations.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// Checks analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Measures inference throughput in clips per second.
    Bench {
        /// Output directory of a `train` run; a fresh model when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        clips: usize,
    },
    /// Renders training curves and precision-recall curves as SVG.
    Report {
        /// Training log (`train_log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, requires = "data")]
        detections: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        subset: String,
    },
}

enum Failure {
    Invalid(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<afsd::AfsdError> for Failure {
    fn from(e: afsd::AfsdError) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_config(cli: &Cli) -> Outcome<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?,
        None => Config::thumos(),
    };
    for s in &cli.set {
        cfg.set(s).map_err(|e| Failure::Invalid(format!("--set {s}: {e}")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.model.init_seed = seed;
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        let lines: Vec<String> = errors.iter().map(|e| format!("  {e}")).collect();
        return Err(Failure::Invalid(format!("invalid config:\n{}", lines.join("\n"))));
    }
    Ok(cfg)
}

fn write_resolved(dir: &Path, cfg: &Config) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(RESOLVED_CONFIG), cfg.resolved_toml())?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome<()> {
    let cfg = resolve_config(cli)?;
    write_resolved(&cli.out_dir, &cfg)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Synth => synth(&cfg, out),
        Command::Train { data, subset } => train(&cfg, data, subset, cli.stream, out),
        Command::Infer {
            data,
            checkpoint,
            subset,
        } => infer(&cfg, data, checkpoint, subset, cli.stream, out),
        Command::Eval {
            data,
            detections,
            subset,
        } => eval(&cfg, data, detections, subset, out),
        Command::Gradcheck { tolerance } => gradcheck(*tolerance, cfg.model.init_seed, out),
        Command::Bench { checkpoint, clips } => bench(&cfg, checkpoint.as_deref(), *clips, cli.stream, out),
        Command::Report {
            log,
            detections,
            data,
            subset,
        } => report(
            &cfg,
            log.as_deref(),
            detections.as_deref(),
            data.as_deref(),
            subset,
            out,
        ),
    }
}

fn synth(cfg: &Config, out: &Path) -> Outcome<()> {
    let data = synth_dataset(cfg.train.seed, &cfg.synth)?;
    data.write(out)?;
    let n = data.doc.videos.values().map(|v| v.instances.len()).sum::<usize>();
    println!(
        "wrote {} videos with {n} actions to {}",
        data.doc.videos.len(),
        out.display()
    );
    Ok(())
}

fn load_doc(data: &Path) -> Outcome<AnnotationDoc> {
    let path = data.join(ANNOTATION_FILE);
    Ok(AnnotationDoc::load(&path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_stream(data: &Path, doc: &AnnotationDoc, subset: &str, stream: Stream) -> Outcome<Vec<VideoRecord>> {
    let videos = load_videos(data, doc, Some(subset), stream)
        .with_context(|| format!("loading {} features from {}", stream.name(), data.display()))?;
    if videos.is_empty() {
        return Err(Failure::Invalid(format!("subset `{subset}` has no videos")));
    }
    Ok(videos)
}

fn train(cfg: &Config, data: &Path, subset: &str, streams: StreamArg, out: &Path) -> Outcome<()> {
    let doc = load_doc(data)?;
    for stream in streams.streams() {
        let videos = load_stream(data, &doc, subset, stream)?;
        let dir = out.join(stream.name());
        std::fs::create_dir_all(&dir).map_err(anyhow::Error::from)?;
        let meta = ModelMeta {
            input_dim: videos[0].features.channels(),
            classes: doc.num_classes(),
            labels: doc.labels.clone(),
            stream: stream.name().to_string(),
            config: cfg.resolved_toml(),
        };
        let mut log = BufWriter::new(File::create(dir.join("train_log.jsonl")).map_err(anyhow::Error::from)?);
        let t0 = Instant::now();
        let on_step = |r: &StepRecord| -> afsd::Result<()> {
            serde_json::to_writer(&mut log, r)?;
            log.write_all(b"\n")?;
            Ok(())
        };
        let on_epoch = |epoch: usize, model: &Afsd| -> afsd::Result<()> {
            log::info!(
                "{}: epoch {} done after {:.1}s",
                stream.name(),
                epoch + 1,
                t0.elapsed().as_secs_f64()
            );
            save_model(&dir.join(format!("epoch_{:03}.ckpt", epoch + 1)), model, &meta)
        };
        let (model, outcome) = train_model(cfg, &videos, doc.num_classes(), on_step, on_epoch)?;
        log.flush().map_err(anyhow::Error::from)?;
        drop(log);
        save_model(&dir.join("model.ckpt"), &model, &meta)?;
        std::fs::write(
            dir.join("train_summary.json"),
            serde_json::to_string_pretty(&outcome).map_err(anyhow::Error::from)? + "\n",
        )
        .map_err(anyhow::Error::from)?;
        log::info!(
            "{}: {} steps over {} epochs, {} eligible samples for consistency learning, {} clips without actions skipped",
            stream.name(),
            outcome.steps,
            outcome.epochs,
            outcome.bcl_steps,
            outcome.skipped_clips
        );
        println!(
            "{}: model written to {}",
            stream.name(),
            dir.join("model.ckpt").display()
        );
    }
    Ok(())
}

fn load_trained(checkpoint: &Path, stream: Stream) -> Outcome<(Afsd, ModelMeta)> {
    let path = checkpoint.join(stream.name()).join("model.ckpt");
    if !path.is_file() {
        return Err(Failure::Runtime(anyhow!("no checkpoint at {}", path.display())));
    }
    Ok(load_model(&path).with_context(|| format!("loading {}", path.display()))?)
}

fn infer(cfg: &Config, data: &Path, checkpoint: &Path, subset: &str, streams: StreamArg, out: &Path) -> Outcome<()> {
    let doc = load_doc(data)?;
    let mut models = Vec::new();
    let mut videos = Vec::new();
    let mut run_cfg = None;
    for stream in streams.streams() {
        let (model, meta) = load_trained(checkpoint, stream)?;
        if meta.labels != doc.labels {
            return Err(Failure::Invalid(format!(
                "checkpoint labels {:?} differ from the dataset's {:?}",
                meta.labels, doc.labels
            )));
        }
        // Clip layout and score composition follow the training run;
        // post-processing follows the current config.
        let mut trained = Config::from_toml_str(&meta.config)?;
        trained.infer = cfg.infer.clone();
        trained.eval = cfg.eval.clone();
        if run_cfg.as_ref().is_some_and(|c: &Config| c.data != trained.data) {
            return Err(Failure::Invalid(
                "the two streams were trained with different clip layouts".into(),
            ));
        }
        run_cfg = Some(trained);
        models.push(model);
        videos.push(load_stream(data, &doc, subset, stream)?);
    }
    let run_cfg = run_cfg.expect("at least one stream");
    let pairs: Vec<(&Afsd, &[VideoRecord])> = models.iter().zip(&videos).map(|(m, v)| (m, v.as_slice())).collect();
    let dets = infer_videos(&pairs, &run_cfg)?;
    let path = out.join("detections.jsonl");
    save_detections(&path, &dets, &doc)?;
    println!(
        "{} detections for {} videos written to {}",
        dets.len(),
        videos[0].len(),
        path.display()
    );
    Ok(())
}

fn eval(cfg: &Config, data: &Path, detections: &Path, subset: &str, out: &Path) -> Outcome<()> {
    let doc = load_doc(data)?;
    let gts = doc.ground_truth(Some(subset))?;
    if gts.is_empty() {
        return Err(Failure::Invalid(format!("subset `{subset}` has no videos")));
    }
    let dets = load_detections(detections, &doc).with_context(|| format!("reading {}", detections.display()))?;
    let report = mean_ap(&dets, &gts, &doc.labels, &cfg.eval.thresholds);
    std::fs::write(out.join("report.json"), report.to_json()).map_err(anyhow::Error::from)?;
    let table = report.table();
    std::fs::write(out.join("report.txt"), &table).map_err(anyhow::Error::from)?;
    print!("{table}");
    Ok(())
}

fn gradcheck(tolerance: f64, seed: u64, out: &Path) -> Outcome<()> {
    let t0 = Instant::now();
    let mut checks = tensorcore::suite::kernel_suite().map_err(anyhow::Error::from)?;
    checks.push((
        "afsd head (32x16 clip)".to_string(),
        afsd::verify::composite_gradcheck(seed)?,
    ));
    let seconds = t0.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (name, r) in &checks {
        let pass = r.passes(tolerance);
        worst = worst.max(r.max_rel_error);
        println!(
            "{:<6} {name}: max rel err {:.3e} over {} coords ({} excluded)",
            if pass { "ok" } else { "FAIL" },
            r.max_rel_error,
            r.checked,
            r.excluded
        );
        rows.push(json!({
            "name": name,
            "max_rel_error": r.max_rel_error,
            "checked": r.checked,
            "excluded": r.excluded,
            "pass": pass,
        }));
    }
    println!("max relative error {worst:.3e} (tolerance {tolerance:e}) in {seconds:.1}s");
    let doc = json!({ "tolerance": tolerance, "max_rel_error": worst, "checks": rows });
    std::fs::write(
        out.join("gradcheck.json"),
        serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)? + "\n",
    )
    .map_err(anyhow::Error::from)?;
    let failed = checks.iter().filter(|(_, r)| !r.passes(tolerance)).count();
    if failed > 0 {
        return Err(Failure::Invalid(format!(
            "{failed} gradient checks exceed {tolerance:e}"
        )));
    }
    Ok(())
}

fn bench(cfg: &Config, checkpoint: Option<&Path>, clips: usize, streams: StreamArg, out: &Path) -> Outcome<()> {
    let (model, run_cfg) = match checkpoint {
        Some(dir) => {
            let stream = streams.streams()[0];
            let (model, meta) = load_trained(dir, stream)?;
            (model, Config::from_toml_str(&meta.config)?)
        }
        None => {
            let spec = ModelSpec::from_config(cfg, cfg.synth.feature_dim, cfg.synth.classes);
            (Afsd::new(spec, cfg.model.init_seed)?, cfg.clone())
        }
    };
    let fps_step = run_cfg.synth.frames_per_step;
    let (steps, _) = clip_grid(&run_cfg.data, fps_step, Mode::Test);
    let dim = model.spec.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(run_cfg.train.seed);
    let features = Tensor::matrix(
        steps,
        dim,
        (0..steps * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .map_err(anyhow::Error::from)?;
    let clip = ClipSample {
        video: "bench".into(),
        origin_frame: 0.0,
        scale: 1.0,
        frames_per_step: fps_step,
        features,
        valid_steps: steps,
        instances: Vec::new(),
    };
    let t0 = Instant::now();
    for _ in 0..clips.max(1) {
        predict_clip(&model, &clip, run_cfg.loss.quality)?;
    }
    let secs = t0.elapsed().as_secs_f64();
    let rate = clips.max(1) as f64 / secs;
    println!(
        "{} clips of {steps} steps in {secs:.2}s: {rate:.1} clips/s",
        clips.max(1)
    );
    let doc = json!({ "clips": clips.max(1), "clip_steps": steps, "seconds": secs, "clips_per_second": rate });
    std::fs::write(
        out.join("bench.json"),
        serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)? + "\n",
    )
    .map_err(anyhow::Error::from)?;
    Ok(())
}

fn report(
    cfg: &Config,
    log: Option<&Path>,
    detections: Option<&Path>,
    data: Option<&Path>,
    subset: &str,
    out: &Path,
) -> Outcome<()> {
    if log.is_none() && detections.is_none() {
        return Err(Failure::Invalid(
            "nothing to render: pass --log and/or --detections".into(),
        ));
    }
    if let Some(log) = log {
        let text = std::fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
        let records: Vec<StepRecord> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing {}", log.display()))?;
        let path = out.join("loss_curves.svg");
        plots::loss_curves(&path, &records)?;
        println!("wrote {}", path.display());
    }
    if let (Some(dets), Some(data)) = (detections, data) {
        let doc = load_doc(data)?;
        let gts = doc.ground_truth(Some(subset))?;
        let dets = load_detections(dets, &doc)?;
        let threshold = cfg
            .eval
            .thresholds
            .iter()
            .copied()
            .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()))
            .unwrap_or(0.5);
        let curves: Vec<(String, afsd::eval::PrCurve)> = doc
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), pr_curve(&dets, &gts, i + 1, threshold)))
            .collect();
        let path = out.join("pr_curves.svg");
        plots::pr_curves(&path, threshold, &curves)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
