//! Command-line front end: dataset generation and splitting, heatmap
//! rendering, augmentation previews, baselines, experiments and comparison
//! tables.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use groupaffect::data::{self, SplitSpec, SynthSpec};
use groupaffect::emotion::Label;
use groupaffect::harness::{self, ExperimentConfig, RunReport};
use groupaffect::heatmap::{self, KernelKind};
use groupaffect::imageproc;
use groupaffect::{baselines, rng};

#[derive(Parser)]
#[command(
    name = "groupaffect",
    about = "Group-affect pipeline: emotion heatmaps, CNN training, baselines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset generation and splitting.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Heatmap rendering.
    Heatmap {
        #[command(subcommand)]
        command: HeatmapCommand,
    },
    /// Augmentation utilities.
    Augment {
        #[command(subcommand)]
        command: AugmentCommand,
    },
    /// Non-neural baselines.
    Baseline {
        #[command(subcommand)]
        command: BaselineCommand,
    },
    /// Run one experiment from a config file.
    Run(RunArgs),
    /// Tabulate reports against the published reference numbers.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a synthetic dataset.
    Gen(DatasetGenArgs),
    /// Stratified train/hold-out split.
    Split(DatasetSplitArgs),
}

#[derive(Args)]
struct DatasetGenArgs {
    /// Records per class.
    #[arg(long = "per-class")]
    per_class: usize,
    /// Image size as WxH, e.g. 64x64.
    #[arg(long)]
    size: String,
    /// Faces per image as MIN..MAX, e.g. 1..4.
    #[arg(long)]
    faces: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetSplitArgs {
    /// Hold-out fraction in (0, 1).
    #[arg(long, default_value_t = 0.10)]
    holdout: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out-train")]
    out_train: PathBuf,
    #[arg(long = "out-holdout")]
    out_holdout: PathBuf,
}

#[derive(Subcommand)]
enum HeatmapCommand {
    /// Render one heatmap tensor file per record.
    Render(HeatmapRenderArgs),
}

#[derive(Args)]
struct HeatmapRenderArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// linear | gaussian | normalized
    #[arg(long)]
    kernel: String,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Also write a normalized PNG next to each tensor.
    #[arg(long)]
    png: bool,
}

#[derive(Subcommand)]
enum AugmentCommand {
    /// Sample augmentation parameters and write the transformed tensor as PNG.
    Preview(AugmentPreviewArgs),
}

#[derive(Args)]
struct AugmentPreviewArgs {
    /// A HMAP1 tensor file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Mean-then-argmax over face scores.
    Avg(BaselineAvgArgs),
    /// Random forest over mean 7-dim score vectors.
    Rf(BaselineRfArgs),
}

#[derive(Args)]
struct BaselineAvgArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Also print tab-separated machine-readable rows.
    #[arg(long)]
    machine: bool,
}

#[derive(Args)]
struct BaselineRfArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    eval: PathBuf,
    #[arg(long, default_value_t = 15)]
    trees: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    machine: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Redact wall-clock so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory of *.report files.
    #[arg(long)]
    reports: PathBuf,
}

fn parse_size(s: &str) -> Result<(u32, u32)> {
    let (w, h) = s
        .split_once('x')
        .with_context(|| format!("size `{s}` is not WxH"))?;
    Ok((w.parse()?, h.parse()?))
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once("..")
        .with_context(|| format!("range `{s}` is not MIN..MAX"))?;
    Ok((lo.parse()?, hi.parse()?))
}

fn print_confusion(confusion: &[[usize; 3]; 3]) {
    println!("{:<10} {:>9} {:>9} {:>9}", "true\\pred", "Positive", "Neutral", "Negative");
    for (i, row) in confusion.iter().enumerate() {
        println!(
            "{:<10} {:>9} {:>9} {:>9}",
            Label::ALL[i].as_str(),
            row[0],
            row[1],
            row[2]
        );
    }
}

fn print_machine_rows(confusion: &[[usize; 3]; 3]) {
    println!("true\tpredicted\tcount");
    for (i, row) in confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            println!("{}\t{}\t{}", Label::ALL[i].as_str(), Label::ALL[j].as_str(), v);
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Dataset { command } => match command {
            DatasetCommand::Gen(args) => {
                let (width, height) = parse_size(&args.size)?;
                let (faces_min, faces_max) = parse_range(&args.faces)?;
                let manifest = data::synth_generate(&SynthSpec {
                    n_per_class: args.per_class,
                    width,
                    height,
                    faces_min,
                    faces_max,
                    seed: args.seed,
                })?;
                data::save_manifest(&manifest, &args.out)?;
                println!(
                    "wrote {} records ({} per class) to {}",
                    manifest.len(),
                    args.per_class,
                    args.out.display()
                );
            }
            DatasetCommand::Split(args) => {
                let manifest = data::load_manifest(&args.input)?;
                let (train, holdout) =
                    data::stratified_split(&manifest, &SplitSpec::new(args.holdout, args.seed)?)?;
                data::save_manifest(&train, &args.out_train)?;
                data::save_manifest(&holdout, &args.out_holdout)?;
                let tc = train.class_counts();
                let hc = holdout.class_counts();
                println!(
                    "train: {} (P {} / U {} / N {}), holdout: {} (P {} / U {} / N {})",
                    train.len(),
                    tc[0],
                    tc[1],
                    tc[2],
                    holdout.len(),
                    hc[0],
                    hc[1],
                    hc[2]
                );
            }
        },
        Command::Heatmap { command } => match command {
            HeatmapCommand::Render(args) => {
                let kernel: KernelKind = args.kernel.parse()?;
                let manifest = data::load_manifest(&args.manifest)?;
                std::fs::create_dir_all(&args.out_dir)?;
                let results: Vec<Result<()>> = manifest
                    .records
                    .par_iter()
                    .map(|rec| {
                        let tensor = harness::render_record(rec, kernel)?;
                        let stem = data::safe_file_stem(&rec.id);
                        let path = args.out_dir.join(format!("{stem}.hmap"));
                        heatmap::write_tensor(&tensor, &path)?;
                        if args.png {
                            heatmap::export_png(&tensor, &args.out_dir.join(format!("{stem}.png")))?;
                        }
                        Ok(())
                    })
                    .collect();
                for r in results {
                    r?;
                }
                println!(
                    "rendered {} {} heatmaps into {}",
                    manifest.len(),
                    kernel.as_str(),
                    args.out_dir.display()
                );
            }
        },
        Command::Augment { command } => match command {
            AugmentCommand::Preview(args) => {
                let tensor = heatmap::read_tensor(&args.input)?;
                let mut rng = rng::seeded(args.seed, 0);
                let params = imageproc::sample_augment(&mut rng);
                let out = imageproc::apply_augment(&tensor, &params);
                heatmap::export_png(&out, &args.out)?;
                println!("applied {params:?}");
                println!("wrote {}", args.out.display());
            }
        },
        Command::Baseline { command } => match command {
            BaselineCommand::Avg(args) => {
                let manifest = data::load_manifest(&args.manifest)?;
                let fallback = manifest.majority_label().context("empty manifest")?;
                let (acc, confusion) = harness::evaluate_with(
                    |rec| {
                        if rec.faces.is_empty() {
                            return Ok(fallback);
                        }
                        baselines::averaging_predict(rec)
                    },
                    &manifest,
                )?;
                println!("averaging accuracy: {:.2}% ({} records)", acc * 100.0, manifest.len());
                print_confusion(&confusion);
                if args.machine {
                    print_machine_rows(&confusion);
                }
            }
            BaselineCommand::Rf(args) => {
                let train = data::load_manifest(&args.train)?;
                let eval = data::load_manifest(&args.eval)?;
                let mut features = Vec::new();
                let mut labels = Vec::new();
                for rec in &train.records {
                    if let Ok(f) = baselines::mean_feature(rec) {
                        features.push(f);
                        labels.push(rec.label);
                    }
                }
                if features.is_empty() {
                    bail!("no records with faces in the training manifest");
                }
                let forest = baselines::rf_train(
                    &features,
                    &labels,
                    &baselines::ForestSpec {
                        n_trees: args.trees,
                        seed: args.seed,
                        ..baselines::ForestSpec::default()
                    },
                )?;
                let fallback = train.majority_label().context("empty manifest")?;
                let eval_on = |m: &data::DatasetManifest| {
                    harness::evaluate_with(
                        |rec| match baselines::mean_feature(rec) {
                            Ok(f) => Ok(baselines::rf_predict(&forest, &f)),
                            Err(_) => Ok(fallback),
                        },
                        m,
                    )
                };
                let (train_acc, _) = eval_on(&train)?;
                let (eval_acc, confusion) = eval_on(&eval)?;
                println!(
                    "random forest ({} trees): train {:.2}%, eval {:.2}%",
                    args.trees,
                    train_acc * 100.0,
                    eval_acc * 100.0
                );
                print_confusion(&confusion);
                if args.machine {
                    print_machine_rows(&confusion);
                }
            }
        },
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::from_file(&args.config)?;
            if args.deterministic {
                cfg.deterministic = true;
            }
            let report = harness::run_experiment(&cfg)?;
            println!(
                "{}: best epoch {} (holdout {:.2}%), final eval {:.2}%",
                cfg.name,
                report.best_epoch,
                report.best_holdout_acc * 100.0,
                report.final_eval_acc * 100.0
            );
            println!(
                "report: {}",
                cfg.out_dir.join(format!("{}.report", cfg.name)).display()
            );
        }
        Command::Compare(args) => {
            let mut reports = Vec::new();
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&args.reports)
                .with_context(|| format!("cannot read {}", args.reports.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "report"))
                .collect();
            entries.sort();
            for path in entries {
                reports.push(RunReport::read_from(&path)?);
            }
            print!("{}", harness::compare_table(&reports));
        }
    }
    Ok(())
}
