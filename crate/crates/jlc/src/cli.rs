//! Operator surface: train, sweep, compress, decompress, eval, bdrate,
//! bsjnd, plotdata and synth-jnd subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! Machine-readable results go to stdout as `key=value` lines (CSV for the
//! report commands); human prose goes to stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::codec::bitstream::{decode_bitstream, encode_bitstream, Bitstream};
use crate::codec::transforms::{analyze, quantize, synthesize};
use crate::codec::types::QuantizeMode;
use crate::data::io::{load_image, save_image};
use crate::data::manifest::{load_pair, DatasetManifest, ManifestEntry, SourceKind, SplitKind};
use crate::data::proxy::synth_jnd_proxy;
use crate::data::synth;
use crate::error::{Error, Result};
use crate::losses::distortion::DistortionFamily;
use crate::losses::jnd::LossVariant;
use crate::metrics::bd::{bd_rate, bs_jnd};
use crate::metrics::rd::{JndLabel, QualityMetric, RdResults};
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;
use crate::train::evaluate::evaluate_sweep;
use crate::train::harness::{sweep as run_sweep, train as run_train, TrainData};
use crate::util::write_atomic;

#[derive(Parser)]
#[command(
    name = "jlc",
    about = "Desk-scale learned image compression lab with JND-based losses",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model at one lambda
    Train(TrainArgs),
    /// Train the full lambda grid (one checkpoint per lambda)
    Sweep(SweepArgs),
    /// Compress an image into a .jlc bitstream
    Compress(CompressArgs),
    /// Decompress a .jlc bitstream back into an image
    Decompress(DecompressArgs),
    /// Evaluate checkpoints over an eval manifest into an RD results file
    Eval(EvalArgs),
    /// BD-rate of a test results file against an anchor
    Bdrate(BdrateArgs),
    /// JND-level bitrate saving of a proposed results file vs a baseline
    Bsjnd(BsjndArgs),
    /// Merge results files into a long-format CSV for plotting
    Plotdata(PlotdataArgs),
    /// Generate synthetic JND-proxy images and a labeled manifest
    SynthJnd(SynthJndArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Training config TOML; omit to start from a preset
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset when no config file is given
    #[arg(long, default_value = "desk-mse")]
    preset: String,
    /// Loss variant override: baseline|pwl|iwl|fwl
    #[arg(long)]
    variant: Option<String>,
    /// Distortion family override: mse|msssim
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// FWL pixel/feature balance
    #[arg(long)]
    omega: Option<f64>,
    /// Clamp the image-wise loss at zero
    #[arg(long)]
    iwl_clamp: bool,
    /// Feature extractor id for FWL (seeded_random:<seed> | pretrained:<path>)
    #[arg(long)]
    feature_extractor: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load_toml(path)?,
            None => TrainConfig::preset(&self.preset)?,
        };
        if let Some(v) = &self.variant {
            cfg.loss.variant = match v.as_str() {
                "baseline" => LossVariant::Baseline,
                "pwl" => LossVariant::Pwl,
                "iwl" => LossVariant::Iwl,
                "fwl" => LossVariant::Fwl,
                other => return Err(Error::Argument(format!("unknown variant '{other}'"))),
            };
        }
        if let Some(f) = &self.family {
            cfg.loss.family = match f.as_str() {
                "mse" => DistortionFamily::Mse,
                "msssim" | "one_minus_msssim" => DistortionFamily::OneMinusMsssim,
                other => return Err(Error::Argument(format!("unknown family '{other}'"))),
            };
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.patch_size {
            cfg.train.patch_size = v;
        }
        if let Some(v) = self.patches_per_image {
            cfg.train.patches_per_image = v;
        }
        if let Some(v) = self.omega {
            cfg.loss.omega = v;
        }
        if self.iwl_clamp {
            cfg.loss.iwl_clamp = true;
        }
        if let Some(id) = &self.feature_extractor {
            cfg.loss.feature_extractor_id = Some(id.clone());
        }
        if cfg.loss.variant == LossVariant::Fwl && cfg.loss.feature_extractor_id.is_none() {
            cfg.loss.feature_extractor_id = Some("seeded_random:7".into());
            eprintln!("fwl: defaulting feature extractor to seeded_random:7");
        }
        if let Some(t) = self.threads {
            cfg.train.threads = t;
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Training manifest (JSON lines)
    #[arg(long)]
    train_manifest: PathBuf,
    /// Optional unlabeled manifest mixed in per epoch
    #[arg(long)]
    unlabeled_manifest: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<TrainData> {
        let main = DatasetManifest::load_jsonl(&self.train_manifest, SplitKind::Train)?;
        let mut data = TrainData::default();
        for e in &main.entries {
            let pair = load_pair(e)?;
            match e.source {
                SourceKind::JndLabeled => data.labeled.push(pair),
                SourceKind::UnlabeledProxy => data.unlabeled.push(pair),
            }
        }
        if let Some(extra) = &self.unlabeled_manifest {
            let m = DatasetManifest::load_jsonl(extra, SplitKind::Train)?;
            for e in &m.entries {
                data.unlabeled.push(load_pair(&ManifestEntry {
                    source: SourceKind::UnlabeledProxy,
                    path_j: None,
                    ..e.clone()
                })?);
            }
        }
        eprintln!(
            "loaded {} labeled and {} unlabeled image(s)",
            data.labeled.len(),
            data.unlabeled.len()
        );
        Ok(data)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Lambda for this run (defaults to the first grid entry)
    #[arg(long)]
    lambda: Option<f64>,
    /// Warm-start checkpoint
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines)
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for per-lambda checkpoints and logs
    #[arg(long)]
    out_dir: PathBuf,
    /// Initialize each run from the previous lambda's checkpoint
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint files, or directories scanned for *.jlck
    #[arg(required = true)]
    checkpoints: Vec<PathBuf>,
    /// Evaluation manifest (JSON lines)
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "local")]
    dataset_id: String,
    /// Results JSON output
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV mirror
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BdrateArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// psnr | msssim | both
    #[arg(long, default_value = "both")]
    metric: String,
}

#[derive(Args)]
struct BsjndArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    proposed: PathBuf,
    /// JND labels JSON (defaults to the proposed file's embedded labels)
    #[arg(long)]
    jnd: Option<PathBuf>,
    #[arg(long, default_value = "psnr")]
    metric: String,
}

#[derive(Args)]
struct PlotdataArgs {
    /// RD results JSON files
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthJndArgs {
    /// An image file or a directory of PNG/PPM images
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Degradation level 1..=10 (0 keeps the original)
    #[arg(long, default_value_t = 3)]
    level: u32,
    /// Also emit N synthetic textured images when no input exists yet
    #[arg(long)]
    generate: Option<usize>,
    /// Edge length of generated images
    #[arg(long, default_value_t = 64)]
    generate_size: usize,
}

/// Entry point used by the `jlc` binary; returns the process exit code.
pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            if e.use_stderr() {
                eprint!("{e}");
                return 1;
            }
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) | Error::Config(_) => 1,
        Error::Io(_) | Error::Image(_) | Error::Json(_) | Error::Format(_) | Error::Shape(_) => 2,
        Error::Numeric(_) | Error::Mode(_) | Error::Decode(_) => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bdrate(a) => cmd_bdrate(a),
        Command::Bsjnd(a) => cmd_bsjnd(a),
        Command::Plotdata(a) => cmd_plotdata(a),
        Command::SynthJnd(a) => cmd_synth_jnd(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.build()?;
    let lambda = a.lambda.unwrap_or_else(|| cfg.train.lambdas[0]);
    let data = a.data.load()?;
    let init = a.init.as_deref().map(Checkpoint::load).transpose()?;
    let out = run_train(&cfg, lambda, &data, init.as_ref(), a.out.parent())?;
    out.checkpoint.save(&a.out)?;
    if let Some(log_path) = &a.log {
        out.log.save(log_path)?;
    }
    let last = out.log.steps.last();
    println!("checkpoint={}", a.out.display());
    println!("steps={}", out.log.steps.len());
    if let Some(s) = last {
        println!("final_rate_bpp={}", s.rate_bpp);
        println!("final_distortion={}", s.distortion);
        println!("final_total_loss={}", s.total_loss);
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = a.config.build()?;
    cfg.train.warm_start |= a.warm_start;
    let data = a.data.load()?;
    std::fs::create_dir_all(&a.out_dir)?;
    let outputs = run_sweep(&cfg, &data)?;
    for out in &outputs {
        let lambda = out.checkpoint.meta.lambda;
        let stem = format!("{}_lambda{lambda}", out.checkpoint.loss.method_id());
        let ckpt_path = a.out_dir.join(format!("{stem}.jlck"));
        out.checkpoint.save(&ckpt_path)?;
        out.log.save(&a.out_dir.join(format!("{stem}.log.jsonl")))?;
        println!("checkpoint={}", ckpt_path.display());
    }
    Ok(())
}

fn cmd_compress(a: CompressArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let img = load_image(&a.input)?;
    let s = ckpt.params.arch.downsampling;
    let (_, _, h, w) = img.dims();
    let padded = img.pad_to_multiple(s);
    let y = analyze(&padded, &ckpt.params)?;
    let q = quantize(&y, QuantizeMode::InferRound, 0)?;
    let bs = encode_bitstream(&q, &ckpt.entropy, (h, w))?;
    write_atomic(&a.output, &bs.to_bytes())?;
    println!("bpp={}", bs.payload_bits() as f64 / (h * w) as f64);
    println!("payload_bytes={}", bs.payload.len());
    println!("output={}", a.output.display());
    Ok(())
}

fn cmd_decompress(a: DecompressArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let bytes = std::fs::read(&a.input)?;
    let bs = Bitstream::from_bytes(&bytes)?;
    let q = decode_bitstream(&bs, &ckpt.entropy)?;
    let full = synthesize(&q, &ckpt.params)?;
    let (h, w) = (bs.header.image_h as usize, bs.header.image_w as usize);
    let img = full.crop(0, 0, h, w)?;
    save_image(&img, &a.output)?;
    println!("output={}", a.output.display());
    Ok(())
}

fn collect_checkpoints(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|f| f.extension().is_some_and(|x| x == "jlck"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Argument("no checkpoints given".into()));
    }
    Ok(files)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let files = collect_checkpoints(&a.checkpoints)?;
    let manifest = DatasetManifest::load_jsonl(&a.manifest, SplitKind::Eval)?;
    let pairs = manifest
        .entries
        .iter()
        .map(load_pair)
        .collect::<Result<Vec<_>>>()?;
    let checkpoints = files
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let results = evaluate_sweep(&checkpoints, &pairs, &a.dataset_id)?;
    results.save(&a.out)?;
    if let Some(csv) = &a.csv {
        write_atomic(csv, results.to_csv().as_bytes())?;
    }
    println!("results={}", a.out.display());
    println!("points={}", results.points.len());
    for p in &results.points {
        println!(
            "point lambda={} bpp={} psnr={} msssim={}",
            p.lambda, p.bpp, p.psnr, p.msssim
        );
    }
    Ok(())
}

fn parse_metrics(metric: &str) -> Result<Vec<QualityMetric>> {
    match metric {
        "both" => Ok(vec![QualityMetric::Psnr, QualityMetric::Msssim]),
        one => Ok(vec![one.parse()?]),
    }
}

fn cmd_bdrate(a: BdrateArgs) -> Result<()> {
    let anchor = RdResults::load(&a.anchor)?;
    let test = RdResults::load(&a.test)?;
    let metrics = parse_metrics(&a.metric)?;
    println!("method,metric,bdrate_percent");
    for m in metrics {
        let ca = anchor.to_curve(m)?;
        let ct = test.to_curve(m)?;
        let v = bd_rate(&ca, &ct)?;
        println!("{},{m},{v:.4}", test.method_id);
    }
    Ok(())
}

fn cmd_bsjnd(a: BsjndArgs) -> Result<()> {
    let baseline = RdResults::load(&a.baseline)?;
    let proposed = RdResults::load(&a.proposed)?;
    let metric: QualityMetric = a.metric.parse()?;
    let labels: Vec<JndLabel> = match &a.jnd {
        Some(path) => {
            let bytes = std::fs::read(path)?;
            serde_json::from_slice(&bytes)?
        }
        None => proposed.jnd.clone(),
    };
    let labels: Vec<&JndLabel> = labels.iter().filter(|l| l.metric == metric).collect();
    if labels.is_empty() {
        return Err(Error::Argument(format!(
            "no JND labels for metric {metric}; pass --jnd or evaluate a labeled manifest"
        )));
    }
    let cb = baseline.to_curve(metric)?;
    let cp = proposed.to_curve(metric)?;

    println!("image_id,bs_jnd_percent");
    let mut values = Vec::new();
    let mut skipped = 0usize;
    for l in labels {
        match bs_jnd(&cb, &cp, l) {
            Ok(v) => {
                println!("{},{v:.4}", l.image_id);
                values.push(v);
            }
            Err(Error::Numeric(_)) => {
                eprintln!("skipping '{}': JND quality {} outside curve span", l.image_id, l.value);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::Numeric(format!(
            "all {skipped} labeled image(s) fall outside the curves' quality span"
        )));
    }
    let avg = values.iter().sum::<f64>() / values.len() as f64;
    println!("average,{avg:.4}");
    println!("skipped,{skipped}");
    Ok(())
}

fn cmd_plotdata(a: PlotdataArgs) -> Result<()> {
    let mut rows: Vec<(String, f64, f64, f64, f64)> = Vec::new();
    for path in &a.results {
        let r = RdResults::load(path)?;
        for p in &r.points {
            rows.push((r.method_id.clone(), p.lambda, p.bpp, p.psnr, p.msssim));
        }
    }
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut csv = String::from("method,lambda,bpp,psnr,msssim\n");
    for (m, l, bpp, psnr, ms) in rows {
        csv.push_str(&format!("{m},{l},{bpp},{psnr},{ms}\n"));
    }
    match &a.out {
        Some(path) => {
            write_atomic(path, csv.as_bytes())?;
            println!("csv={}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth_jnd(a: SynthJndArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir)?;

    let mut sources: Vec<(String, PathBuf)> = Vec::new();
    if let Some(n) = a.generate {
        for i in 0..n {
            let img = synth::textured_image(a.generate_size, a.generate_size, i as u64);
            let path = a.out_dir.join(format!("gen{i:03}.png"));
            save_image(&img, &path)?;
            sources.push((format!("gen{i:03}"), path));
        }
    } else if a.input.is_dir() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&a.input)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .is_some_and(|x| x == "png" || x == "ppm")
            })
            .collect();
        found.sort();
        for p in found {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            sources.push((id, p));
        }
    } else {
        let id = a
            .input
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        sources.push((id, a.input.clone()));
    }
    if sources.is_empty() {
        return Err(Error::Argument("no input images found".into()));
    }

    let mut entries = Vec::new();
    for (id, path_o) in &sources {
        let x_o = load_image(path_o)?;
        let x_j = synth_jnd_proxy(&x_o, a.level)?;
        let path_j = a.out_dir.join(format!("{id}_jnd{}.png", a.level));
        save_image(&x_j, &path_j)?;
        entries.push(ManifestEntry {
            image_id: id.clone(),
            path_o: path_o.clone(),
            path_j: Some(path_j),
            source: SourceKind::JndLabeled,
        });
    }
    let manifest = DatasetManifest {
        entries,
        split: SplitKind::Train,
        seed: 0,
    };
    let manifest_path = a.out_dir.join("manifest.jsonl");
    manifest.save_jsonl(&manifest_path)?;
    println!("manifest={}", manifest_path.display());
    println!("images={}", sources.len());
    Ok(())
}
