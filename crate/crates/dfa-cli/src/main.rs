//! Command-line harness: dataset generation, cascade training, evaluation,
//! cluster inspection, and baseline comparison.
//!
//! Every command reads one `key = value` config file (defaults apply when
//! omitted), draws all randomness from a single master seed, and writes
//! deterministic artifacts: rerunning a command with the same config and
//! seed reproduces every output byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dfa_core::baselines::{self, TrainedModels};
use dfa_core::cascade::{self, CascadeModel, CascadePrediction};
use dfa_core::checkpoint;
use dfa_core::config::RunConfig;
use dfa_core::geometry::{normalized_error, LandmarkSet};
use dfa_core::pseudolabel::{contextual_offset, offset_space, stage1_space, ClusterModel};
use dfa_core::report::{self, LabeledPredictions};
use dfa_core::seeds;
use dfa_core::synth::io::{load_dataset, save_dataset};
use dfa_core::synth::{generate_dataset, Dataset};
use dfa_core::trainer::TrainLogRow;

#[derive(Parser)]
#[command(
    name = "dfa",
    version,
    about = "Cascaded landmark alignment on synthetic garment images"
)]
struct Cli {
    /// Config file with `key = value` lines; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overwrite outputs that already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Directory that receives all outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test splits to disk and print subset counts.
    Generate,
    /// Train the three-stage cascade; save the bundle and per-stage logs.
    Train {
        /// Dataset root containing `train/` and `val/` (from `generate`).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Evaluate a bundle on one split: metrics CSV plus detection curves.
    Evaluate {
        /// Bundle directory written by `train`.
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        /// Split directory, e.g. `DATA/test`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Per-cluster population, center, and error report for one stage.
    InspectClusters {
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        /// Split to profile the clusters on (normally `DATA/train`).
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Cascade stage: 1, 2, or 3.
        #[arg(long)]
        stage: usize,
    },
    /// Train the cascade, direct, and patch-cascade arms on one dataset and
    /// emit the comparison report.
    CompareBaselines {
        /// Dataset root containing `train/`, `val/`, and `test/`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Generate => cmd_generate(&config, &cli.out, cli.force),
        Command::Train { data } => cmd_train(&config, data, &cli.out, cli.force),
        Command::Evaluate { bundle, data } => {
            cmd_evaluate(&config, bundle, data, &cli.out, cli.force)
        }
        Command::InspectClusters {
            bundle,
            data,
            stage,
        } => cmd_inspect_clusters(bundle, data, *stage, &cli.out, cli.force),
        Command::CompareBaselines { data } => {
            cmd_compare_baselines(&config, data, &cli.out, cli.force)
        }
    }
}

/// Refuses to clobber an existing path unless `--force` was given.
fn ensure_absent(path: &Path, force: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    if !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    let removed = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    removed.with_context(|| format!("removing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_split(dir: &Path) -> Result<Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset split {}", dir.display()))
}

fn histogram_line(name: &str, ds: &Dataset) -> String {
    let mut line = format!("{name}:");
    for (subset, count) in report::subset_histogram(ds) {
        line.push_str(&format!(" {}={count}", subset.as_str()));
    }
    line.push_str(&format!(" total={}", ds.len()));
    line
}

fn cmd_generate(config: &RunConfig, out: &Path, force: bool) -> Result<()> {
    let splits = [
        ("train", config.train_count),
        ("val", config.val_count),
        ("test", config.test_count),
    ];
    for (i, (name, count)) in splits.iter().enumerate() {
        let dir = out.join(name);
        ensure_absent(&dir, force)?;
        let split_seed = seeds::derive_u64(config.seed, "dataset", i as u64);
        let ds = generate_dataset(&config.generator(*count), split_seed)?;
        save_dataset(
            &ds,
            &dir,
            &[
                ("split".to_string(), name.to_string()),
                ("master_seed".to_string(), config.seed.to_string()),
                ("split_seed".to_string(), split_seed.to_string()),
                ("config_sha256".to_string(), config.hash()),
            ],
        )?;
        println!("{}", histogram_line(name, &ds));
    }
    println!("wrote 3 splits under {}", out.display());
    Ok(())
}

fn final_validation_ne(log: &[TrainLogRow]) -> f64 {
    log.last().map_or(f64::NAN, |r| r.validation_ne)
}

fn cmd_train(config: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<()> {
    let train = load_split(&data.join("train"))?;
    let val = load_split(&data.join("val"))?;
    let bundle_dir = out.join("bundle");
    let logs_dir = out.join("logs");
    ensure_absent(&bundle_dir, force)?;
    ensure_absent(&logs_dir, force)?;

    let settings = config.cascade_settings();
    let outcome = cascade::train_cascade(&train, &val, &settings, config.seed, config.routing_mode)?;

    let logs = [
        ("stage1.csv", &outcome.stage1_log),
        ("stage2.csv", &outcome.stage2_log),
        ("stage3-easy.csv", &outcome.stage3_logs[0]),
        ("stage3-hard.csv", &outcome.stage3_logs[1]),
    ];
    for (file, log) in logs {
        write_text(&logs_dir.join(file), &report::training_log_csv(log))?;
    }
    checkpoint::save_bundle(&outcome.model, &config.hash(), config.seed, &bundle_dir)?;

    println!(
        "validation NE: stage1={} stage2={} stage3-easy={} stage3-hard={}",
        report::number(final_validation_ne(&outcome.stage1_log)),
        report::number(final_validation_ne(&outcome.stage2_log)),
        report::number(final_validation_ne(&outcome.stage3_logs[0])),
        report::number(final_validation_ne(&outcome.stage3_logs[1])),
    );
    println!(
        "stage-3 partitions: easy={} hard={}{}",
        outcome.partition_sizes[0],
        outcome.partition_sizes[1],
        if outcome.fallback {
            " (empty partition; both branches trained on all data)"
        } else {
            ""
        }
    );
    println!("bundle written to {}", bundle_dir.display());
    Ok(())
}

/// Loads a bundle and a split, rejecting mismatched shapes up front.
fn load_bundle_and_split(bundle: &Path, data: &Path) -> Result<(CascadeModel, Dataset)> {
    let (model, _manifest) = checkpoint::load_bundle(bundle)
        .with_context(|| format!("loading bundle {}", bundle.display()))?;
    let ds = load_split(data)?;
    let arch = model.stage1.arch();
    if arch.num_landmarks != ds.num_landmarks() {
        bail!(
            "bundle regresses {} landmarks but the split annotates {}",
            arch.num_landmarks,
            ds.num_landmarks()
        );
    }
    if arch.image_side != ds.image_side {
        bail!(
            "bundle expects {0}x{0} images but the split holds {1}x{1}",
            arch.image_side,
            ds.image_side
        );
    }
    Ok((model, ds))
}

fn stage_predictions(preds: &[CascadePrediction]) -> Vec<LabeledPredictions> {
    let stage = |name: &str, pick: fn(&CascadePrediction) -> &Vec<f64>| LabeledPredictions {
        label: name.to_string(),
        positions: preds.iter().map(|p| pick(p).clone()).collect(),
    };
    vec![
        stage("stage1", |p| &p.stage1),
        stage("stage2", |p| &p.stage2),
        stage("stage3", |p| &p.stage3),
    ]
}

fn cmd_evaluate(
    config: &RunConfig,
    bundle: &Path,
    data: &Path,
    out: &Path,
    force: bool,
) -> Result<()> {
    let (model, ds) = load_bundle_and_split(bundle, data)?;
    let metrics_path = out.join("metrics.csv");
    let curves_path = out.join("pdl_curves.csv");
    let plot_path = out.join("pdl_curves.svg");
    for path in [&metrics_path, &curves_path, &plot_path] {
        ensure_absent(path, force)?;
    }

    let preds = cascade::predict_dataset(&model, &ds)?;
    let labeled = stage_predictions(&preds);
    let rows = report::metric_rows(&labeled, &ds, config.pdl_threshold_px)?;
    let curves = report::pdl_curves(&labeled, &ds, &report::pdl_thresholds())?;

    write_text(&metrics_path, &report::metrics_csv(&rows, config.pdl_threshold_px))?;
    write_text(&curves_path, &report::pdl_curves_csv(&curves))?;
    write_text(&plot_path, &report::pdl_curves_svg(&curves, "detection rate"))?;

    for row in rows
        .iter()
        .filter(|r| r.subset == "all" && r.landmark == "mean")
    {
        println!(
            "{}: mean NE {} over {} samples",
            row.label,
            row.ne.map_or_else(|| "n/a".to_string(), report::number),
            row.sample_count
        );
    }
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}

/// Nearest samples per cluster pasted into a tile grid, darkest-to-brightest
/// exactly as stored, one cluster per row.
fn montage_pgm(rows: &[Vec<usize>], ds: &Dataset, cols: usize) -> Vec<u8> {
    let side = ds.image_side;
    let width = cols * side;
    let height = rows.len() * side;
    let mut pixels = vec![0u8; width * height];
    for (r, members) in rows.iter().enumerate() {
        for (c, &sample) in members.iter().take(cols).enumerate() {
            let image = &ds.samples[sample].image;
            for y in 0..side {
                for x in 0..side {
                    let v = (image[y * side + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                    pixels[(r * side + y) * width + c * side + x] = v;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cmd_inspect_clusters(
    bundle: &Path,
    data: &Path,
    stage: usize,
    out: &Path,
    force: bool,
) -> Result<()> {
    if !(1..=3).contains(&stage) {
        bail!("stage must be 1, 2, or 3 (got {stage})");
    }
    let (model, ds) = load_bundle_and_split(bundle, data)?;
    let csv_path = out.join(format!("clusters-stage{stage}.csv"));
    let montage_path = out.join(format!("clusters-stage{stage}.pgm"));
    for path in [&csv_path, &montage_path] {
        ensure_absent(path, force)?;
    }

    let preds = cascade::predict_dataset(&model, &ds)?;
    let clusters: &ClusterModel = &model.clusters[stage - 1];
    // The stage's clustering space and the estimate it grades.
    let mut points = Vec::with_capacity(ds.len());
    let mut errors = Vec::with_capacity(ds.len());
    for (p, s) in preds.iter().zip(&ds.samples) {
        let (point, positions) = match stage {
            1 => (stage1_space(&s.gt), &p.stage1),
            2 => (offset_space(&p.stage1, &s.gt)?, &p.stage2),
            _ => (
                contextual_offset(&offset_space(&p.stage2, &s.gt)?),
                &p.stage3,
            ),
        };
        let pred = LandmarkSet::from_flat(positions, s.gt.visibility.clone())?;
        errors.push(normalized_error(&pred, &s.gt)?.mean);
        points.push(point);
    }
    let assignments = points
        .iter()
        .map(|x| clusters.assign(x))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = report::cluster_rows(&assignments, &errors, clusters);
    if stage == 2 {
        for (row, &e) in rows.iter_mut().zip(&model.routing.cluster_errors) {
            row.routing_error = Some(e);
        }
    }
    write_text(&csv_path, &report::cluster_report_csv(&rows))?;

    // Up to eight nearest members per cluster, in distance order.
    let montage_rows: Vec<Vec<usize>> = (0..clusters.k())
        .map(|k| {
            let mut members: Vec<usize> = (0..ds.len()).filter(|&i| assignments[i] == k).collect();
            members.sort_by(|&a, &b| {
                squared_distance(&points[a], &clusters.centers[k])
                    .total_cmp(&squared_distance(&points[b], &clusters.centers[k]))
            });
            members.truncate(8);
            members
        })
        .collect();
    if let Some(parent) = montage_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&montage_path, montage_pgm(&montage_rows, &ds, 8))
        .with_context(|| format!("writing {}", montage_path.display()))?;

    let assigned: usize = rows.iter().map(|r| r.population).sum();
    println!(
        "stage {stage}: {} clusters over {assigned} samples; report {}",
        clusters.k(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_compare_baselines(config: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<()> {
    let train = load_split(&data.join("train"))?;
    let val = load_split(&data.join("val"))?;
    let test = load_split(&data.join("test"))?;
    let metrics_path = out.join("compare_metrics.csv");
    let curves_path = out.join("compare_pdl.csv");
    let plot_path = out.join("compare_pdl.svg");
    let summary_path = out.join("compare_summary.csv");
    for path in [&metrics_path, &curves_path, &plot_path, &summary_path] {
        ensure_absent(path, force)?;
    }

    let settings = config.cascade_settings();
    let cascade_outcome =
        cascade::train_cascade(&train, &val, &settings, config.seed, config.routing_mode)?;
    let direct = baselines::train_direct(&train, &val, &settings, config.seed, true, false)?;
    let patch = baselines::train_patch_cascade(&train, &val, &settings, config.seed)?;

    let benchmark = baselines::compare(
        &TrainedModels {
            cascade: &cascade_outcome.model,
            direct: &direct.net,
            patch: &patch.model,
        },
        &test,
        config.pdl_threshold_px,
    )?;

    write_text(
        &metrics_path,
        &report::metrics_csv(&benchmark.rows, config.pdl_threshold_px),
    )?;
    write_text(&curves_path, &report::pdl_curves_csv(&benchmark.curves))?;
    write_text(
        &plot_path,
        &report::pdl_curves_svg(&benchmark.curves, "detection rate by model"),
    )?;

    let mut summary = String::from("model,trained_networks,mean_ne\n");
    for (model, count) in &benchmark.network_counts {
        let mean = benchmark
            .rows
            .iter()
            .find(|r| &r.label == model && r.subset == "all" && r.landmark == "mean")
            .and_then(|r| r.ne);
        summary.push_str(&format!(
            "{model},{count},{}\n",
            mean.map(report::number).unwrap_or_default()
        ));
        println!(
            "{model}: {count} trained networks, test mean NE {}",
            mean.map_or_else(|| "n/a".to_string(), report::number)
        );
    }
    write_text(&summary_path, &summary)?;

    println!(
        "patch cascade training NE by stage: {} -> {} -> {} ({} empty crops)",
        report::number(patch.stage_errors[0]),
        report::number(patch.stage_errors[1]),
        report::number(patch.stage_errors[2]),
        patch.empty_crops
    );
    println!("comparison written to {}", metrics_path.display());
    Ok(())
}
