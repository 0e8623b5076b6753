use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use capformer::captioner::{evaluate_test_set, greedy_decode, hypothesis_tokens};
use capformer::config::RunConfig;
use capformer::datapipe::{
    capf, group_by_image, load_captions, load_features_for, split_dataset, CaptionFormat, Dataset,
    FeatureRecord, ImageCaptions, SplitTag,
};
use capformer::fixtures::Fixture;
use capformer::selftest;
use capformer::textpipe::Vocab;
use capformer::trainer::{Checkpoint, Trainer};
use capformer::transformer::CaptionModel;
use capformer::Error;

const EXIT_SELFTEST: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "capformer", version, about = "Transformer image captioning: train, evaluate, caption")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a caption corpus.
    BuildVocab {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = capformer::transformer::MAX_VOCAB)]
        max_size: usize,
        /// pipe, tsv or auto
        #[arg(long, default_value = "auto")]
        format: String,
    },
    /// Train a model; writes best.ckpt, last.ckpt and metrics.csv to --out.
    Train(TrainArgs),
    /// Caption every image of a caption file and write a BLEU report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "auto")]
        format: String,
    },
    /// Print the caption of a single CAPF1 feature file.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        feature: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Write the built-in 8-image overfit fixture (captions, features,
    /// vocabulary, settings) to a directory.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the built-in gradient, causality and BLEU checks.
    Selftest {
        /// Run only this suite (gradcheck, causality, bleu).
        #[arg(long)]
        suite: Option<String>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Override any setting, e.g. `--set learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Continue from last.ckpt in --out.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildVocab {
            captions,
            out,
            max_size,
            format,
        } => build_vocab(&captions, &out, max_size, &format),
        Command::Train(args) => train(args),
        Command::Evaluate {
            checkpoint,
            captions,
            features,
            vocab,
            report,
            format,
        } => evaluate(&checkpoint, &captions, &features, &vocab, &report, &format),
        Command::Caption {
            checkpoint,
            feature,
            vocab,
        } => caption(&checkpoint, &feature, &vocab),
        Command::Fixture { out, seed } => write_fixture(&out, seed),
        Command::Selftest { suite } => return run_selftest(suite.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
                _ => EXIT_INPUT,
            })
        }
    }
}

fn caption_format(name: &str) -> capformer::Result<Option<CaptionFormat>> {
    match name {
        "auto" => Ok(None),
        other => other.parse().map(Some),
    }
}

fn load_groups(path: &Path, format: Option<CaptionFormat>, cfg: &RunConfig) -> capformer::Result<Vec<ImageCaptions>> {
    let loaded = load_captions(path, format, &cfg.filter)?;
    for id in &loaded.dropped_images {
        eprintln!("warning: every caption of {id} was rejected; image dropped");
    }
    if !loaded.rejected.is_empty() {
        eprintln!("warning: {} captions rejected by the length filter", loaded.rejected.len());
    }
    let groups = group_by_image(&loaded.records);
    if groups.is_empty() {
        return Err(Error::Dataset(format!("{} has no usable captions", path.display())));
    }
    Ok(groups)
}

fn build_vocab(captions: &Path, out: &Path, max_size: usize, format: &str) -> capformer::Result<()> {
    let cfg = RunConfig::default();
    let loaded = load_captions(captions, caption_format(format)?, &cfg.filter)?;
    let texts: Vec<&str> = loaded.records.iter().map(|r| r.normalized.as_str()).collect();
    let vocab = Vocab::build(&texts, max_size)?;
    vocab.save(out)?;
    println!("tokens: {}", vocab.len());
    println!("coverage: {:.2}%", 100.0 * vocab.coverage(&texts));
    Ok(())
}

fn train(args: TrainArgs) -> capformer::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (key, value) in [
        ("seed", args.seed.map(|v| v.to_string())),
        ("max_epochs", args.max_epochs.map(|v| v.to_string())),
        ("patience", args.patience.map(|v| v.to_string())),
    ] {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    for (slot, flag) in [
        (&mut cfg.captions, args.captions),
        (&mut cfg.features, args.features),
        (&mut cfg.vocab, args.vocab),
        (&mut cfg.out, args.out),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    cfg.validate()?;
    let captions = cfg.require("captions", &cfg.captions)?.to_path_buf();
    let features_dir = cfg.require("features", &cfg.features)?.to_path_buf();
    let vocab_path = cfg.require("vocab", &cfg.vocab)?.to_path_buf();
    let out = cfg.require("out", &cfg.out)?.to_path_buf();

    let vocab = Vocab::load(&vocab_path)?;
    let groups = load_groups(&captions, cfg.caption_format, &cfg)?;
    let splits = split_dataset(&groups, cfg.train.seed, cfg.split)?;
    let needed = splits.train.iter().chain(&splits.val).chain(&splits.test);
    let features = load_features_for(&features_dir, needed.map(|g| g.image_id.as_str()))?;
    let first = features
        .values()
        .next()
        .ok_or_else(|| Error::Dataset("no images selected for training".into()))?;
    let model_cfg = cfg.model_config(vocab.len(), first.feat_len(), first.feat_dim())?;
    let train_ds = Arc::new(Dataset::new(SplitTag::Train, &splits.train, &features, &vocab, model_cfg.seq_len)?);
    let val_ds = Dataset::new(SplitTag::Val, &splits.val, &features, &vocab, model_cfg.seq_len)?;

    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    write_split(&out.join("test_captions.txt"), &splits.test)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(out.clone());
    train_cfg.metrics_path = Some(out.join("metrics.csv"));

    let mut trainer = if args.resume {
        let ck = Checkpoint::load(&out.join("last.ckpt"))?;
        ck.expect_config(&model_cfg)?;
        Trainer::resume(ck, train_cfg.clone())?
    } else {
        Trainer::new(CaptionModel::new(model_cfg.clone(), train_cfg.seed)?, train_cfg.clone())?
    };
    println!(
        "training on {} captions of {} images, validating on {} images; {} parameters",
        train_ds.len(),
        train_ds.image_count(),
        val_ds.image_count(),
        model_cfg.parameter_count()
    );
    let max = train_cfg.max_epochs;
    let report = trainer.fit(&train_ds, &val_ds, &vocab, |r| {
        println!(
            "epoch {}/{max} train_loss={:.6} val_loss={:.6} val_bleu4={:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_bleu4
        );
    })?;
    println!(
        "stopped: {} after {} epochs; best epoch {}",
        report.stop_reason,
        report.rows.len(),
        report.best_epoch
    );
    Ok(())
}

fn write_split(path: &Path, groups: &[ImageCaptions]) -> capformer::Result<()> {
    let mut text = String::from("image_name| comment_number| comment\n");
    for g in groups {
        for (i, c) in g.captions.iter().enumerate() {
            text.push_str(&format!("{}| {i}| {}\n", g.image_id, c.raw));
        }
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_model(checkpoint: &Path, vocab: &Vocab) -> capformer::Result<CaptionModel<f32>> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.config.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects a {}-token vocabulary, the vocabulary file has {}",
            ck.config.vocab_size,
            vocab.len()
        )));
    }
    CaptionModel::from_params(ck.config, ck.params)
}

fn evaluate(
    checkpoint: &Path,
    captions: &Path,
    features_dir: &Path,
    vocab_path: &Path,
    report: &Path,
    format: &str,
) -> capformer::Result<()> {
    let vocab = Vocab::load(vocab_path)?;
    let model = load_model(checkpoint, &vocab)?;
    let cfg = RunConfig::default();
    let groups = load_groups(captions, caption_format(format)?, &cfg)?;
    let features = load_features_for(features_dir, groups.iter().map(|g| g.image_id.as_str()))?;
    check_feature_dims(&model, features.values().next().expect("non-empty"))?;
    let ds = Dataset::new(SplitTag::Test, &groups, &features, &vocab, model.config().seq_len)?;
    let eval = evaluate_test_set(&model, &ds, &vocab, report)?;
    for (n, b) in eval.corpus.iter().enumerate() {
        println!("BLEU-{} {:.4}", n + 1, b);
    }
    println!("report: {} ({} images)", report.display(), eval.results.len());
    Ok(())
}

fn check_feature_dims(model: &CaptionModel<f32>, rec: &FeatureRecord) -> capformer::Result<()> {
    if rec.feat_dim() != model.config().feat_dim {
        return Err(Error::Dataset(format!(
            "features of {} have dimension {}, the model expects {}",
            rec.image_id,
            rec.feat_dim(),
            model.config().feat_dim
        )));
    }
    Ok(())
}

fn caption(checkpoint: &Path, feature: &Path, vocab_path: &Path) -> capformer::Result<()> {
    let vocab = Vocab::load(vocab_path)?;
    let model = load_model(checkpoint, &vocab)?;
    let rec = FeatureRecord::new(feature.display().to_string(), capf::read(feature)?)?;
    check_feature_dims(&model, &rec)?;
    let ids = greedy_decode(&model, &rec.grid, model.config().seq_len)?;
    println!("{}", hypothesis_tokens(&ids, &vocab)?.join(" "));
    Ok(())
}

fn write_fixture(out: &Path, seed: u64) -> capformer::Result<()> {
    let fx = Fixture::new(seed)?;
    let files = fx.write_to(out)?;
    let vocab = out.join("vocab.txt");
    fx.vocab.save(&vocab)?;
    println!("captions: {}", files.captions.display());
    println!("features: {}", files.features.display());
    println!("vocab: {}", vocab.display());
    println!("config: {}", files.config.display());
    Ok(())
}

fn run_selftest(suite: Option<&str>) -> ExitCode {
    let reports = match suite {
        None => selftest::run_all(),
        Some(name) => match selftest::run_suite(name) {
            Some(r) => vec![r],
            None => {
                eprintln!("error: unknown suite {name:?}; expected one of {}", selftest::SUITES.join(", "));
                return ExitCode::from(EXIT_INPUT);
            }
        },
    };
    let mut ok = true;
    for r in &reports {
        ok &= r.passed;
        println!(
            "{} {} ({:.2}s): {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SELFTEST)
    }
}
