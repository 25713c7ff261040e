//! One function per subcommand. Inputs are read and checked before anything
//! is written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use tinyaction::checkpoint::load_checkpoint;
use tinyaction::distill::{extract_knowledge, TrainConfig, TrainReport, Trainer};
use tinyaction::fsutil::write_atomic;
use tinyaction::fusion::{
    calibrate_thresholds, default_threshold_grid, ensemble_scores, evaluate, read_group_map, read_label_csv,
    read_score_csv, read_thresholds, write_score_csv, F1Scores, FusionConfig,
};
use tinyaction::synthdata::{balance_dataset, generate_dataset, read_dataset, write_dataset, Dataset, DatasetSpec, Tier};

use crate::pipeline::{report_json, run_all, Manifest};

pub fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.ds"))
}

/// Pretty JSON with sorted keys and a trailing newline, written atomically.
pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn f1_json(f: &F1Scores) -> Value {
    json!({ "sample_f1": f.sample, "micro_f1": f.micro, "macro_f1": f.macro_ })
}

pub fn class_count_table(splits: &[(&str, &Dataset)]) -> String {
    let mut out = String::from("class");
    for (name, _) in splits {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    let classes = splits.first().map_or(0, |(_, d)| d.class_counts.len());
    for c in 0..classes {
        write!(out, "{c}").unwrap();
        for (_, d) in splits {
            write!(out, ",{}", d.class_counts[c]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn gen_data(spec: &Path, out: &Path, print_counts: bool) -> Result<()> {
    let spec = DatasetSpec::read(spec)?;
    let splits = generate_dataset(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let named = [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)];
    for (name, ds) in named {
        write_dataset(split_path(out, name), ds)?;
    }
    write_atomic(out.join("spec.cfg"), spec.to_kv_string().as_bytes())?;
    if print_counts {
        print!("{}", class_count_table(&named));
    }
    Ok(())
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub tier: Option<Tier>,
    pub balance: Option<f64>,
    pub out: &'a Path,
}

struct Loaded {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    config: TrainConfig,
}

fn load(args: &TrainArgs) -> Result<Loaded> {
    let mut config = match args.config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(t) = args.tier {
        config.tier = t;
    }
    config.validate()?;
    let mut train = read_dataset(split_path(args.data, "train"))?;
    if let Some(q) = args.balance {
        train = balance_dataset(&train, q)?;
    }
    Ok(Loaded {
        train,
        val: read_dataset(split_path(args.data, "val"))?,
        test: read_dataset(split_path(args.data, "test"))?,
        config,
    })
}

fn finish_training(out: &Path, config: &TrainConfig, report: &TrainReport) -> Result<()> {
    write_score_csv(out.join("scores_val.csv"), report.val_scores.as_ref().expect("val scored"))?;
    write_score_csv(out.join("scores_test.csv"), report.test_scores.as_ref().expect("test scored"))?;
    write_atomic(out.join("config.cfg"), config.to_kv_string().as_bytes())?;
    let names: Vec<String> = report
        .checkpoint_paths
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    write_json(
        &out.join("report.json"),
        &json!({
            "epoch_losses": report.epoch_losses,
            "epoch_val_f1": report.epoch_val_f1,
            "audit_losses": report.audit_losses,
            "checkpoints": names,
        }),
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let l = load(args)?;
    let (_, report) = Trainer::new(&l.train, l.config.clone())
        .validation(&l.val)
        .test(&l.test)
        .checkpoint_dir(args.out)
        .run()?;
    finish_training(args.out, &l.config, &report)
}

/// Student training against knowledge extracted from `teacher` on the SR tier.
pub fn distill(args: &TrainArgs, teacher: &Path) -> Result<()> {
    let l = load(args)?;
    let teacher = load_checkpoint(teacher)?.model;
    let knowledge = extract_knowledge(&teacher, &l.train, l.config.clips).context("extracting teacher knowledge")?;
    let config = TrainConfig {
        loss: tinyaction::distill::LossKind::Total,
        ..l.config
    };
    std::fs::create_dir_all(args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_score_csv(args.out.join("knowledge.csv"), &knowledge)?;
    let (_, report) = Trainer::new(&l.train, config.clone())
        .validation(&l.val)
        .test(&l.test)
        .knowledge(&knowledge)
        .checkpoint_dir(args.out)
        .run()?;
    finish_training(args.out, &config, &report)
}

pub struct FuseArgs<'a> {
    pub scores: &'a [PathBuf],
    pub weights: Option<&'a [f64]>,
    pub val_scores: &'a [PathBuf],
    pub val_labels: &'a Path,
    pub groups: &'a Path,
    pub labels: Option<&'a Path>,
    pub fused_out: Option<&'a Path>,
    pub out: &'a Path,
}

/// Averages member scores, calibrates on the averaged validation scores and
/// reports thresholds plus test F1 when labels are given.
pub fn fuse(args: &FuseArgs) -> Result<()> {
    if args.scores.len() != args.val_scores.len() {
        bail!(
            "--scores lists {} files but --val-scores lists {}",
            args.scores.len(),
            args.val_scores.len()
        );
    }
    let read_all = |paths: &[PathBuf]| paths.iter().map(read_score_csv).collect::<tinyaction::Result<Vec<_>>>();
    let test = ensemble_scores(&read_all(args.scores)?, args.weights)?;
    let val = ensemble_scores(&read_all(args.val_scores)?, args.weights)?;
    let val_labels = read_label_csv(args.val_labels)?;
    let group_map = read_group_map(args.groups)?;
    let labels = args.labels.map(read_label_csv).transpose()?;
    let counts: Vec<usize> = val_labels
        .labels
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|&v| v as usize).sum())
        .collect();
    let cal = calibrate_thresholds(&val, &val_labels, &counts, &default_threshold_grid())?;
    let config = FusionConfig {
        thresholds: cal.thresholds.clone(),
        group_map,
        fallback_argmax: true,
    };
    config.validate()?;
    let metrics = match &labels {
        Some(l) => json!({
            "calibrated": f1_json(&evaluate(&test, l, &config, false)?),
            "calibrated_suppressed": f1_json(&evaluate(&test, l, &config, true)?),
        }),
        None => Value::Null,
    };
    if let Some(p) = args.fused_out {
        write_score_csv(p, &test)?;
    }
    write_json(
        args.out,
        &json!({
            "members": args.scores.len(),
            "thresholds": cal.thresholds,
            "validation_class_counts": counts,
            "count_threshold_correlation": cal.count_threshold_correlation,
            "fallback_argmax": true,
            "metrics": metrics,
        }),
    )
}

pub struct EvalArgs<'a> {
    pub scores: &'a Path,
    pub labels: &'a Path,
    pub thresholds: Option<&'a Path>,
    pub groups: Option<&'a Path>,
    pub fallback_argmax: bool,
    pub out: Option<&'a Path>,
}

pub fn eval(args: &EvalArgs) -> Result<Value> {
    let scores = read_score_csv(args.scores)?;
    let labels = read_label_csv(args.labels)?;
    let c = scores.num_classes();
    let thresholds = match args.thresholds {
        Some(p) => read_thresholds(p)?,
        None => vec![0.5; c],
    };
    let group_map = match args.groups {
        Some(p) => read_group_map(p)?,
        None => (0..c).collect(),
    };
    let config = FusionConfig {
        thresholds,
        group_map,
        fallback_argmax: args.fallback_argmax,
    };
    config.validate()?;
    let f = evaluate(&scores, &labels, &config, args.groups.is_some())?;
    let mut value = f1_json(&f);
    value["suppressed"] = json!(args.groups.is_some());
    value["fallback_argmax"] = json!(args.fallback_argmax);
    if let Some(p) = args.out {
        write_json(p, &value)?;
    }
    Ok(value)
}

/// Runs the manifest and writes `report.json` once every replicate succeeded.
pub fn pipeline(manifest: &Path, parallel: bool) -> Result<Value> {
    let m = Manifest::read(manifest)?;
    let settings = m.settings()?;
    std::fs::create_dir_all(&m.output).with_context(|| format!("creating {}", m.output.display()))?;
    let outcomes = run_all(&settings, &m.seeds, Some(&m.output), parallel)?;
    let report = report_json(&settings, &outcomes);
    write_json(&m.output.join("report.json"), &report)?;
    Ok(report)
}
