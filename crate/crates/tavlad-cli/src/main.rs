//! One binary, seven subcommands, wired for reproducibility: every run
//! echoes its resolved configuration to standard error, and identical
//! flags plus seed produce bit-identical artifacts.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use tavlad::attention::AttentionWeights;
use tavlad::codebook::{kmeans, sample_features, Codebook};
use tavlad::dataio::{
    export_attention_pgm, gen_synthetic, read_attention_weights, read_checkpoint, read_features,
    uniform_sample, write_checkpoint, CheckpointFlags, Dataset, SyntheticSpec,
};
use tavlad::model::{gradcheck_full_pipeline, Aggregator, Mode, ModelParams};
use tavlad::numerics::{Rng, Tensor};
use tavlad::trainer::{evaluate, train_stage, LoadedSet, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "tavlad", about = "Attention-weighted VLAD video descriptors with recurrent temporal aggregation", version)]
struct Cli {
    /// Cap on rayon worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic feature-volume dataset with known structure.
    GenSynth(GenSynthArgs),
    /// Build a codebook by k-means over sampled frame features.
    Codebook(CodebookArgs),
    /// Train one stage of the model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Encode one feature volume into a descriptor file.
    Encode(EncodeArgs),
    /// Export per-frame attention maps as PGM images.
    Attention(AttentionArgs),
    /// Finite-difference check of the full training gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Output directory for the dataset tree.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    videos_per_class: usize,
    #[arg(long, default_value_t = 12)]
    t_total: usize,
    /// Frames per video kept by the loader's uniform sampling.
    #[arg(long, default_value_t = 8)]
    t_sample: usize,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 6)]
    prototypes: usize,
    #[arg(long, default_value_t = 3)]
    segments: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    signal_cells: usize,
    /// Pair odd classes with the exact time reversal of their even partner.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    reversed_pairs: bool,
    /// Clamp features at zero, mimicking post-activation maps.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    clamp: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CodebookArgs {
    /// Training manifest to sample features from.
    #[arg(long)]
    manifest: PathBuf,
    /// Cluster count (reference setting: 64).
    #[arg(long, default_value_t = 64)]
    k: usize,
    /// Feature vectors to sample; default 100·K.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Assignment sharpness (reference setting: 1000).
    #[arg(long, default_value_t = 1000.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output codebook container.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifest.
    #[arg(long)]
    val: PathBuf,
    /// Codebook container from the codebook subcommand (stage 1).
    #[arg(long, conflicts_with = "resume")]
    codebook: Option<PathBuf>,
    /// Checkpoint to continue from (required for stage 2).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    stage: u32,
    /// Temporal aggregator: gru or sum.
    #[arg(long, default_value = "gru")]
    aggregator: String,
    /// GRU hidden size (reference setting: 256).
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    /// Defaults per stage: 50 (stage 1) or 30 (stage 2).
    #[arg(long)]
    epochs: Option<usize>,
    /// Defaults per stage: 1e-2 (stage 1) or 1e-4 (stage 2).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.5)]
    decay_factor: f64,
    #[arg(long, default_value_t = 5)]
    decay_every: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Keep attention weights frozen in stage 2.
    #[arg(long, default_value_t = false)]
    freeze_attention: bool,
    /// Disable the attention pathway entirely (all cells weigh 1).
    #[arg(long, default_value_t = false)]
    no_attention: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for final.tavc, best.tavc, history.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Write confusion counts here instead of standard output.
    #[arg(long)]
    confusion_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input feature volume (TAVF).
    #[arg(long)]
    features: PathBuf,
    /// Uniformly subsample to this many frames first.
    #[arg(long)]
    t_sample: Option<usize>,
    /// Output file of 64-bit little-endian floats.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    /// Checkpoint whose attention weights to project.
    #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
    model: Option<PathBuf>,
    /// Raw attention weights file (TAVW).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// Directory for frame_<t>.pgm files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    t: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Aggregator to check: gru, sum, or both.
    #[arg(long, default_value = "both")]
    aggregator: String,
}

fn parse_aggregator(s: &str) -> anyhow::Result<Aggregator> {
    match s {
        "gru" => Ok(Aggregator::Gru),
        "sum" => Ok(Aggregator::Sum),
        other => bail!("unknown aggregator '{other}' (expected gru or sum)"),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting worker thread count")?;
    }
    match cli.cmd {
        Cmd::GenSynth(a) => cmd_gen_synth(a),
        Cmd::Codebook(a) => cmd_codebook(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Attention(a) => cmd_attention(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn cmd_gen_synth(a: GenSynthArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let spec = SyntheticSpec {
        num_classes: a.classes,
        videos_per_class: a.videos_per_class,
        t_total: a.t_total,
        t_sample: a.t_sample,
        grid: (a.rows, a.cols),
        channels: a.channels,
        num_prototypes: a.prototypes,
        segments: a.segments,
        sigma: a.sigma,
        signal_cells: a.signal_cells,
        order_reversed_pairs: a.reversed_pairs,
        clamp_nonnegative: a.clamp,
        seed: a.seed,
    };
    let gen = gen_synthetic(&spec, &a.out)?;
    for (name, manifest) in [
        ("train", &gen.train_manifest),
        ("val", &gen.val_manifest),
        ("test", &gen.test_manifest),
    ] {
        let ds = Dataset::load(manifest)?;
        println!("{name}: {} videos ({})", ds.len(), manifest.display());
    }
    Ok(())
}

fn cmd_codebook(a: CodebookArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let dataset = Dataset::load(&a.manifest)?;
    let n_samples = a.samples.unwrap_or(100 * a.k);
    let mut rng = Rng::new(a.seed);
    let samples = sample_features(&dataset, n_samples, &mut rng)?;
    let (centers, trace) = kmeans(&samples, a.k, a.iters, &mut rng)?;
    let cb = Codebook::from_centers(centers, a.alpha)?;
    println!(
        "kmeans: {} samples, {} iterations, final distortion {:.6}",
        n_samples,
        trace.0.len(),
        trace.final_distortion()
    );
    let tensors = vec![
        ("codebook.centers".to_string(), cb.centers.clone()),
        ("codebook.assign_weights".to_string(), cb.assign_weights.clone()),
        (
            "codebook.assign_bias".to_string(),
            Tensor::new(vec![cb.k()], cb.assign_bias.clone()),
        ),
        ("codebook.alpha".to_string(), Tensor::scalar(cb.alpha)),
    ];
    let flags = CheckpointFlags {
        aggregator: 0,
        attention_enabled: false,
        dropout_rate: 0.0,
        stage: 0,
    };
    write_checkpoint(&a.out, &tensors, flags)?;
    println!("codebook written to {}", a.out.display());
    Ok(())
}

fn load_codebook_container(path: &PathBuf) -> anyhow::Result<Codebook> {
    let (tensors, _) = read_checkpoint(path)?;
    let mut centers = None;
    let mut weights = None;
    let mut bias = None;
    let mut alpha = None;
    for (name, t) in tensors {
        match name.as_str() {
            "codebook.centers" => centers = Some(t),
            "codebook.assign_weights" => weights = Some(t),
            "codebook.assign_bias" => bias = Some(t.data().to_vec()),
            "codebook.alpha" => alpha = Some(t.data()[0]),
            other => bail!("unexpected tensor '{other}' in codebook container"),
        }
    }
    let centers = centers.context("codebook container missing codebook.centers")?;
    let weights = weights.context("codebook container missing codebook.assign_weights")?;
    let bias = bias.context("codebook container missing codebook.assign_bias")?;
    let alpha = alpha.context("codebook container missing codebook.alpha")?;
    Ok(Codebook::from_parts(centers, weights, bias, alpha)?)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    if a.stage == 2 && a.resume.is_none() {
        bail!("--stage 2 requires --resume with a stage-1 checkpoint");
    }
    if a.stage == 1 && a.resume.is_none() && a.codebook.is_none() {
        bail!("--stage 1 needs --codebook (or --resume to continue a run)");
    }
    let train_ds = Dataset::load(&a.manifest)?;
    let val_ds = Dataset::load(&a.val)?;
    let train = LoadedSet::load(&train_ds)?;
    let val = LoadedSet::load(&val_ds)?;

    let params = match &a.resume {
        Some(path) => {
            let p = ModelParams::load(path)?;
            println!(
                "resumed {} (stage {} checkpoint)",
                path.display(),
                p.stage
            );
            p
        }
        None => {
            let codebook = load_codebook_container(a.codebook.as_ref().expect("checked above"))?;
            let attention = train_ds.load_attention_weights()?;
            let mut rng = Rng::new(a.seed);
            ModelParams::init(
                train_ds.header().num_classes,
                attention,
                codebook,
                a.hidden,
                parse_aggregator(&a.aggregator)?,
                !a.no_attention,
                a.dropout,
                &mut rng,
            )?
        }
    };

    let base = if a.stage == 2 {
        TrainConfig::stage2()
    } else {
        TrainConfig::stage1()
    };
    let cfg = TrainConfig {
        stage: a.stage,
        epochs: a.epochs.unwrap_or(base.epochs),
        base_lr: a.lr.unwrap_or(base.base_lr),
        batch_size: a.batch,
        decay_factor: a.decay_factor,
        decay_every: a.decay_every,
        dropout_rate: a.dropout,
        seed: a.seed,
        freeze_attention: a.freeze_attention,
        ..base
    };
    eprintln!("resolved training config: {cfg:?}");

    let out = train_stage(&train, &val, params, &cfg)?;
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating output directory {}", a.out.display()))?;
    let final_path = a.out.join("final.tavc");
    let best_path = a.out.join("best.tavc");
    let history_path = a.out.join("history.csv");
    out.final_params.save(&final_path)?;
    out.best_params.save(&best_path)?;
    out.history.write_csv(&history_path)?;
    let last = out.history.0.last().expect("at least one epoch");
    println!(
        "trained {} epochs: train_acc {:.6}, val_acc {:.6} (best epoch {})",
        out.history.0.len(),
        last.train_acc,
        last.val_acc,
        out.best_epoch
    );
    println!(
        "wrote {}, {}, {}",
        final_path.display(),
        best_path.display(),
        history_path.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let params = ModelParams::load(&a.model)?;
    let set = LoadedSet::load(&Dataset::load(&a.manifest)?)?;
    let report = evaluate(&set, &params)?;
    println!("accuracy {:.6}", report.accuracy);
    let mut table = String::new();
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        table.push_str(&cells.join(","));
        table.push('\n');
    }
    match &a.confusion_out {
        Some(path) => {
            std::fs::write(path, &table)
                .with_context(|| format!("writing confusion counts to {}", path.display()))?;
            println!("confusion counts written to {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let params = ModelParams::load(&a.model)?;
    let mut video = read_features(&a.features)?;
    if let Some(ts) = a.t_sample {
        let picks = uniform_sample(video.frames(), ts);
        video = video.select_frames(&picks)?;
    }
    let out = params.forward(&video, Mode::Eval, None)?;
    let mut bytes = Vec::with_capacity(out.descriptor.values.len() * 8);
    for v in &out.descriptor.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&a.out, &bytes)
        .with_context(|| format!("writing descriptor to {}", a.out.display()))?;
    println!(
        "descriptor of {} values ({} bytes) written to {}",
        out.descriptor.values.len(),
        bytes.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_attention(a: AttentionArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let weights: AttentionWeights = match (&a.model, &a.weights) {
        (_, Some(path)) => read_attention_weights(path)?,
        (Some(path), None) => ModelParams::load(path)?.attention,
        (None, None) => bail!("need --model or --weights"),
    };
    let video = read_features(&a.features)?;
    let map = tavlad::attention::attention_map(&video, &weights)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    export_attention_pgm(&map, video.grid(), &a.out_dir)?;
    println!(
        "{} attention frames written to {}",
        map.frames(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    eprintln!("config: {a:?}");
    let aggregators: Vec<Aggregator> = match a.aggregator.as_str() {
        "both" => vec![Aggregator::Gru, Aggregator::Sum],
        other => vec![parse_aggregator(other)?],
    };
    let mut all_ok = true;
    for aggregator in aggregators {
        for attention_enabled in [true, false] {
            let mut rng = Rng::new(a.seed);
            let centers = Tensor::new(vec![a.k, a.p], rng.uniform_vec(a.k * a.p, -1.0, 1.0));
            // Low sharpness keeps every membership away from saturation,
            // where true gradients drop below what central differences can
            // resolve and the check would report noise.
            let codebook = Codebook::from_centers(centers, 2.0)?;
            let att = AttentionWeights::new(
                Tensor::new(vec![a.classes, a.p], rng.uniform_vec(a.classes * a.p, -1.0, 1.0)),
                None,
            )?;
            let params = ModelParams::init(
                a.classes,
                att,
                codebook,
                a.hidden,
                aggregator,
                attention_enabled,
                0.0,
                &mut rng,
            )?;
            let frames = (0..a.t)
                .map(|_| Tensor::new(vec![a.n, a.p], rng.uniform_vec(a.n * a.p, -1.0, 1.0)))
                .collect();
            let video = tavlad::dataio::FeatureVolume::new((1, a.n), frames)?;
            let label = rng.below(a.classes);
            let report = gradcheck_full_pipeline(&params, &video, label, a.eps, a.tol)?;
            let status = if report.passed() { "pass" } else { "FAIL" };
            println!(
                "{status}: aggregator={aggregator:?} attention={attention_enabled} max_rel_err={:.3e}",
                report.max_rel_err()
            );
            if !report.passed() {
                eprintln!("{report}");
                all_ok = false;
            }
        }
    }
    if !all_ok {
        bail!("gradient check failed");
    }
    Ok(())
}
