mod args;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use saliency_graft::data::{export_bundle, generate_shapes, BatchPairing, Dataset};
use saliency_graft::experiments::{
    ablation_suite, augment_batch, batch_saliency, evaluate, label_fidelity_eval, occlusion_eval, prepare_data,
    render_preview, save_png, train, write_run, AblationPlan, BatchView, ExperimentConfig, LabelMode, PreviewRow,
    Strategy, OCCLUSION_FRACTIONS,
};
use saliency_graft::model::{load_checkpoint, TinyCnn};
use saliency_graft::RandomStream;

use crate::args::ExperimentArgs;

#[derive(Debug, Parser)]
#[command(name = "sgraft", version, about = "Saliency grafting experiments on a small CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset bundle
    GenData(GenDataArgs),
    /// Render augmented pairs and list their mixing coefficients
    Augment(AugmentArgs),
    /// Train one model
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split
    Eval(CheckpointArgs),
    /// Ablation suite over strategies, thresholds, temperatures and saliency providers
    Ablate(AblateArgs),
    /// Error with the most salient regions of each test image removed
    Occlude(CheckpointArgs),
    /// Compare saliency and area coefficients with the mask-based oracle
    Fidelity(FidelityArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, value_name = "PIXELS", default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bundle directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Pairs to render
    #[arg(long, default_value_t = 8)]
    pairs: usize,
    /// Model providing forward or CAM saliency; a fresh network otherwise
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Parent of the run directory
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckpointArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for the CSV; printed only when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Paired seeds 0..N shared by every cell
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Also sweep thresholds, temperatures, saliency providers and CutMix
    #[arg(long)]
    full: bool,
    /// Parallel training runs
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FidelityArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    /// Adds the forward-saliency provider of this model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Occlude(a) => cmd_occlude(a),
        Command::Fidelity(a) => cmd_fidelity(a),
    }
}

fn echo(cfg: &ExperimentConfig) -> Result<()> {
    print!("{}", cfg.to_toml()?);
    println!();
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Output is staged in a sibling temp directory and moved into place only on
/// success.
fn commit_dir(out: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&parent)?;
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let staging = parent.join(format!(".{name}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging).with_context(|| format!("removing {}", staging.display()))?;
    }
    create_dir(&staging)?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out).with_context(|| format!("replacing {}", out.display()))?;
    }
    fs::rename(&staging, out).with_context(|| format!("moving output to {}", out.display()))
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let ds = generate_shapes(a.classes, a.per_class, a.image_size, &mut RandomStream::new(a.seed))?;
    commit_dir(&a.out, |dir| Ok(export_bundle(&ds, dir)?))?;
    println!("wrote {} images in {} classes to {}", ds.len(), ds.num_classes, a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<TinyCnn> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn check_classes(model: &TinyCnn, ds: &Dataset) -> Result<()> {
    if model.num_classes() != ds.num_classes {
        bail!(
            "checkpoint has {} classes but the dataset has {}",
            model.num_classes(),
            ds.num_classes
        );
    }
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    if a.pairs < 2 {
        bail!("--pairs must be at least 2");
    }
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let (train_set, _) = prepare_data(&cfg)?;
    if train_set.len() < a.pairs {
        bail!("dataset has {} training images, fewer than --pairs {}", train_set.len(), a.pairs);
    }
    let model = match model {
        Some(m) => {
            check_classes(&m, &train_set)?;
            m
        }
        None => TinyCnn::new(train_set.num_classes, &mut RandomStream::new(cfg.seed).split("init")),
    };
    echo(&cfg)?;

    let mut rng = RandomStream::new(cfg.seed).split("preview");
    let indices: Vec<usize> = rng.permutation(train_set.len()).into_iter().take(a.pairs).collect();
    // Each image is grafted onto the next one.
    let pairing = BatchPairing {
        perm: (0..a.pairs).map(|i| (i + 1) % a.pairs).collect(),
    };
    let x = train_set.stack(&indices)?;
    let labels = train_set.labels(&indices);
    let features = model.forward(&x)?.features;
    let maps = batch_saliency(cfg.saliency_kind, &model, &features, &train_set, &indices)?;
    // Saliency coefficients are reported for every mask-based strategy.
    let mut view_cfg = cfg.clone();
    if cfg.strategy != Strategy::Mixup {
        view_cfg.label_mode = LabelMode::Saliency;
    }
    let batch = BatchView {
        x: &x,
        labels: &labels,
        num_classes: train_set.num_classes,
        pairing: &pairing,
        saliency: Some(&maps),
    };
    let aug = augment_batch(&view_cfg, batch, &mut rng)?;

    let mut csv = String::from("pair,source,destination,source_label,destination_label,lambda_saliency,lambda_area\n");
    let mut rows = Vec::with_capacity(a.pairs);
    for i in 0..a.pairs {
        let j = pairing.perm[i];
        let sal = if view_cfg.label_mode == LabelMode::Saliency {
            format!("{:.6}", aug.lambdas[i])
        } else {
            String::new()
        };
        writeln!(
            csv,
            "{i},{},{},{},{},{sal},{:.6}",
            indices[i], indices[j], labels[i], labels[j], aug.mask_fractions[i]
        )?;
        rows.push(PreviewRow {
            source: x.slab(i)?,
            destination: x.slab(j)?,
            mask: aug.masks.get(i).map(|m| m.pixel_mask().clone()),
            result: aug.x.slab(i)?,
        });
    }
    let image = render_preview(&rows)?;
    commit_dir(&a.out, |dir| {
        write_file(&dir.join("lambdas.csv"), &csv)?;
        save_png(&image, dir.join("preview.png"))?;
        Ok(())
    })?;
    print!("{csv}");
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    echo(&cfg)?;
    let outcome = train(&cfg)?;
    let dir = write_run(&a.out, &cfg, &outcome)?;
    println!(
        "test top1 error {:.2}%{} loss {:.4}",
        outcome.test.top1,
        outcome.test.top5.map(|t| format!(" top5 error {t:.2}%")).unwrap_or_default(),
        outcome.test.loss
    );
    println!("run directory {}", dir.display());
    Ok(())
}

fn emit(out: Option<&Path>, file: &str, csv: &str) -> Result<()> {
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(file), csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_eval(a: CheckpointArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let model = load_model(&a.checkpoint)?;
    let (_, test) = prepare_data(&cfg)?;
    check_classes(&model, &test)?;
    let ev = evaluate(&model, &test)?;
    let csv = format!(
        "split,count,top1,top5,loss\ntest,{},{:.4},{},{:.6}\n",
        test.len(),
        ev.top1,
        ev.top5.map(|t| format!("{t:.4}")).unwrap_or_default(),
        ev.loss
    );
    emit(a.out.as_deref(), "eval.csv", &csv)
}

fn cmd_occlude(a: CheckpointArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let model = load_model(&a.checkpoint)?;
    let (_, test) = prepare_data(&cfg)?;
    check_classes(&model, &test)?;
    let table = occlusion_eval(&model, &test, &OCCLUSION_FRACTIONS)?;
    emit(a.out.as_deref(), "occlusion.csv", &table.to_csv())
}

fn cmd_fidelity(a: FidelityArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let (train_set, _) = prepare_data(&cfg)?;
    if let Some(m) = &model {
        check_classes(m, &train_set)?;
    }
    let mut rng = RandomStream::new(cfg.seed).split("fidelity");
    let report = label_fidelity_eval(&train_set, a.pairs, &cfg.graft, model.as_ref(), &mut rng)?;
    emit(a.out.as_deref(), "fidelity.csv", &report.to_csv())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let cfg = a.exp.resolve()?;
    if a.seeds == 0 || a.jobs == 0 {
        bail!("--seeds and --jobs must be at least 1");
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut plan = if a.full {
        AblationPlan::full(seeds)
    } else {
        AblationPlan::table_only(seeds)
    };
    plan.jobs = a.jobs;
    echo(&cfg)?;
    let report = ablation_suite(&cfg, &plan)?;
    commit_dir(&a.out, |dir| Ok(report.write(dir)?))?;
    print!("{}", report.table_csv());
    Ok(())
}
