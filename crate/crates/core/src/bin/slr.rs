use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use slr_core::audio::{fit_center, load_wav, read_manifest, AudioClip, DatasetManifest, ManifestEntry, OTHER_LABEL};
use slr_core::evalbench::{
    benchmark_rtf, centroid_oracle_accuracy, evaluate, median, openset_experiment, synth_corpus, OpensetConfig,
    SynthConfig,
};
use slr_core::features::{log_mel, read_spectrogram, write_spectrogram, AugmentationConfig};
use slr_core::inference::{format_prediction, predict_batch, DEFAULT_THRESHOLD};
use slr_core::models::{load_weights, save_weights, Architecture, HeadKind, Model, ModelConfig, WEIGHT_MAGIC};
use slr_core::training::{train_with, TrainConfig};
use slr_core::{Error, Label, Result};

#[derive(Parser)]
#[command(name = "slr", version, about = "Compact spoken-language recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute 64-bin log-mel spectrograms (SLRF files).
    Featurize(FeaturizeArgs),
    /// Train a model and write its weights.
    Train(TrainArgs),
    /// Predict a WAV file or every entry of a manifest.
    Predict(PredictArgs),
    /// Error rate and confusion matrix on a labelled manifest.
    Eval(EvalArgs),
    /// Real-time factor on a single thread.
    Bench(BenchArgs),
    /// Generate a synthetic multi-language corpus.
    Synth(SynthArgs),
    /// Compare multiclass+Other and multilabel training on synthetic open-set data.
    Openset(OpensetArgs),
    /// Describe a weight (SLRW) or spectrogram (SLRF) file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct FeaturizeArgs {
    /// A WAV file, or a `.tsv` manifest.
    input: PathBuf,
    /// Output file for a WAV input, output directory for a manifest.
    #[arg(short, long)]
    out: PathBuf,
    /// Center-crop or pad every clip to this many seconds first.
    #[arg(long)]
    fit_seconds: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    #[arg(long, value_parser = parse_head, default_value = "multilabel")]
    head: HeadKind,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Comma-separated target languages, or a file with one per line.
    #[arg(long)]
    languages: String,
    /// Where to write the best weights.
    #[arg(short, long)]
    out: PathBuf,
    /// JSON training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 1.0)]
    width: f64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    /// A WAV file or a `.tsv` manifest.
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    /// 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Write the normalized confusion matrix here.
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Weights to time; without them a freshly initialized `--arch` model is used.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    /// Clips to time; without it synthetic 10 s clips are generated.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Seconds of synthetic audio when no manifest is given.
    #[arg(long, default_value_t = 100.0)]
    seconds: f64,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    targets: usize,
    #[arg(long, default_value_t = 5)]
    nontargets: usize,
    /// Non-targets that appear only in test_open.
    #[arg(long, default_value_t = 2)]
    heldout: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also report the nearest-centroid accuracy on the closed test split.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct OpensetArgs {
    #[arg(long, value_parser = parse_arch)]
    arch: Architecture,
    /// Comma-separated seeds; the median delta is reported.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    #[arg(long)]
    work_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
    /// Input frames used for the layer table's output shapes.
    #[arg(long, default_value_t = 1001)]
    frames: usize,
}

fn parse_arch(s: &str) -> std::result::Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_head(s: &str) -> std::result::Result<HeadKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn is_manifest(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "tsv")
}

fn parse_languages(arg: &str) -> Result<Vec<String>> {
    let p = Path::new(arg);
    let text = if p.is_file() {
        fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display())))?
    } else {
        arg.replace(',', "\n")
    };
    let langs: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if langs.is_empty() {
        return Err(Error::Usage("no languages given".into()));
    }
    Ok(langs)
}

/// Manifest entries without label validation; labels the model does not know become Other.
fn manifest_paths(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    let labels: Vec<String> = text
        .lines()
        .filter_map(|l| l.split_once('\t').map(|(_, lab)| lab.trim().to_string()))
        .filter(|l| l != OTHER_LABEL)
        .collect();
    let mut uniq = labels.clone();
    uniq.sort();
    uniq.dedup();
    let m = read_manifest(path, &uniq)?;
    Ok(DatasetManifest::new(
        m.entries
            .into_iter()
            .map(|e| ManifestEntry {
                path: e.path,
                label: Label::Other,
            })
            .collect(),
    ))
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let run = |input: &Path, out: &Path| -> Result<()> {
        let clip = load_wav(input)?;
        let clip = match a.fit_seconds {
            Some(s) => fit_center(&clip, s)?,
            None => clip,
        };
        let spec = log_mel(&clip)?;
        write_spectrogram(out, &spec)?;
        println!("{}\t{}\t{}x{}", input.display(), out.display(), spec.n_frames(), spec.n_mels());
        Ok(())
    };
    if !is_manifest(&a.input) {
        return run(&a.input, &a.out);
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    for e in manifest_paths(&a.input)?.entries {
        let stem = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        run(&e.path, &a.out.join(format!("{stem}.slrf")))?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let languages = parse_languages(&a.languages)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::for_head(a.head),
    };
    cfg.loss = TrainConfig::for_head(a.head).loss;
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.samples_per_class {
        cfg.samples_per_class_per_epoch = v;
    }
    if a.checkpoint_dir.is_some() {
        cfg.checkpoint_dir = a.checkpoint_dir.clone();
    }
    if a.no_augment {
        cfg.augmentation = AugmentationConfig::disabled();
    }
    let train_set = read_manifest(&a.train, &languages)?;
    let val_set = read_manifest(&a.val, &languages)?;
    let model = Model::build(
        ModelConfig::new(a.arch, languages.len(), a.head)
            .with_languages(languages)
            .with_width(a.width)
            .with_seed(cfg.seed),
    )?;
    let (model, history) = train_with(model, &train_set, &val_set, &cfg, |r| {
        println!("{}", serde_json::to_string(r).expect("epoch records serialize"));
    })?;
    save_weights(&model, &a.out)?;
    eprintln!("best epoch {} -> {}", history.best_epoch, a.out.display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<bool> {
    let model = load_weights(&a.weights)?;
    let languages = model.config().language_names();
    let manifest = if is_manifest(&a.input) {
        manifest_paths(&a.input)?
    } else {
        DatasetManifest::new(vec![ManifestEntry {
            path: a.input.clone(),
            label: Label::Other,
        }])
    };
    let mut ok = true;
    for (path, r) in predict_batch(&model, &manifest, a.threshold, a.threads)? {
        match r {
            Ok(d) => println!("{}", format_prediction(&path, &d, &languages)),
            Err(e) => {
                ok = false;
                eprintln!("{}\terror\t{e}", path.display());
            }
        }
    }
    Ok(ok)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_weights(&a.weights)?;
    let languages = model.config().language_names();
    let manifest = read_manifest(&a.manifest, &languages)?;
    let report = evaluate(&model, &manifest, &languages, a.threshold, a.threads)?;
    print!("{}", report.to_table());
    println!("{}", serde_json::to_string(&report).expect("reports serialize"));
    if let Some(p) = &a.confusion_csv {
        fs::write(p, report.confusion_csv()).map_err(|e| Error::Usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let model = match (&a.weights, a.arch) {
        (Some(w), _) => load_weights(w)?,
        (None, Some(arch)) => Model::build(ModelConfig::new(arch, 5, HeadKind::Multilabel))?,
        (None, None) => return Err(Error::Usage("bench needs --weights or --arch".into())),
    };
    let clips: Vec<AudioClip> = match &a.manifest {
        Some(m) => manifest_paths(m)?
            .entries
            .iter()
            .map(|e| load_wav(&e.path))
            .collect::<Result<_>>()?,
        None => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let n = (a.seconds / 10.0).ceil().max(1.0) as usize;
            (0..n)
                .map(|_| AudioClip::from_samples((0..160_000).map(|_| rng.random_range(-0.3..0.3)).collect()))
                .collect::<Result<_>>()?
        }
    };
    let report = benchmark_rtf(&model, &clips, a.repetitions, a.warmup)?;
    println!("model        {}", model.architecture());
    print!("{}", report.to_table());
    println!("{}", serde_json::to_string(&report).expect("reports serialize"));
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_target: a.targets,
        num_nontarget: a.nontargets,
        num_heldout: a.heldout,
        per_class: a.per_class,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&a.out, &cfg)?;
    for (name, m) in [
        ("train", &corpus.train),
        ("val", &corpus.val),
        ("test_closed", &corpus.test_closed),
        ("test_open", &corpus.test_open),
    ] {
        println!("{name:<12} {:>5} clips", m.len());
    }
    if a.oracle {
        let acc = centroid_oracle_accuracy(&corpus.train, &corpus.test_closed, corpus.languages.len())?;
        println!("centroid oracle accuracy on test_closed {:.1}%", 100.0 * acc);
    }
    Ok(())
}

fn openset_cmd(a: OpensetArgs) -> Result<()> {
    let seeds: Vec<u64> = a
        .seeds
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Usage(format!("bad seed `{s}`"))))
        .collect::<Result<_>>()?;
    let mut cfg = OpensetConfig::default();
    if let Some(v) = a.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = a.width {
        cfg.width_multiplier = v;
    }
    if let Some(v) = a.per_class {
        cfg.corpus.per_class = v;
    }
    if let Some(v) = a.samples_per_class {
        cfg.train.samples_per_class_per_epoch = v;
    }
    let mut deltas = Vec::new();
    for seed in seeds {
        let r = openset_experiment(a.arch, seed, &cfg, &a.work_dir)?;
        print!("{}", r.to_table());
        let names = &r.multiclass.open.class_names;
        for s in [&r.multiclass, &r.multilabel] {
            let p = a.work_dir.join(format!("confusion-{}-{}-{seed}.csv", a.arch, s.head));
            fs::write(&p, s.open.confusion.to_csv(names))
                .map_err(|e| Error::Usage(format!("cannot write {}: {e}", p.display())))?;
        }
        println!(
            "{}",
            json!({
                "architecture": r.architecture,
                "seed": r.seed,
                "multiclass_err": r.multiclass.open.err,
                "multilabel_err": r.multilabel.open.err,
                "delta": r.delta,
                "multiclass_closed_err": r.multiclass.closed.as_ref().map(|c| c.err),
                "multilabel_closed_err": r.multilabel.closed.as_ref().map(|c| c.err),
            })
        );
        deltas.push(r.delta);
    }
    if let Some(m) = median(&deltas) {
        println!("median delta {m:+.2} ({})", if m >= 0.0 { "multilabel not worse" } else { "multilabel worse" });
    }
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", a.path.display())))?;
    if bytes.starts_with(WEIGHT_MAGIC) {
        let model = load_weights(&a.path)?;
        print!("{}", model.describe(a.frames)?);
        return Ok(());
    }
    let spec = read_spectrogram(&a.path)?;
    let v = spec.values();
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
    println!(
        "spectrogram  {} frames x {} mels\nrange        {lo:.3} .. {hi:.3}\nmean         {mean:.3}",
        spec.n_frames(),
        spec.n_mels()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Featurize(a) => featurize(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Bench(a) => bench_cmd(a).map(|_| true),
        Command::Synth(a) => synth_cmd(a).map(|_| true),
        Command::Openset(a) => openset_cmd(a).map(|_| true),
        Command::Inspect(a) => inspect_cmd(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) | Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
