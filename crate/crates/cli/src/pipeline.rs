//! The full trend experiment: data balance, the LR ablation trio, the SR
//! teacher, the distilled LR student and the post-processed ensemble.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use rayon::prelude::*;
use serde_json::{json, Value};
use tinyaction::distill::{
    extract_knowledge, score_dataset, EpochSchedule, LossKind, Sampling, TrainConfig, TrainReport, Trainer,
};
use tinyaction::fusion::{
    calibrate_thresholds, default_threshold_grid, ensemble_scores, evaluate, write_group_map, write_label_csv,
    write_score_csv, write_thresholds, FusionConfig, LabelMatrix, ScoreMatrix,
};
use tinyaction::kvfile::KvFile;
use tinyaction::net::MlpModel;
use tinyaction::synthdata::{balance_dataset, generate_dataset, Dataset, DatasetSpec, Tier};
use tinyaction::{Error, Result};

/// The trained models of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// LR, first-K frames, original training set.
    Baseline,
    /// LR, uniform clip sampling, original training set.
    Uniform,
    /// LR, uniform sampling, flip-balanced training set.
    Balance,
    /// SR, uniform sampling, balanced set.
    Teacher,
    /// LR student distilled from the teacher.
    Student,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Baseline, Stage::Uniform, Stage::Balance, Stage::Teacher, Stage::Student];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::Uniform => "uniform",
            Stage::Balance => "balance",
            Stage::Teacher => "teacher",
            Stage::Student => "student",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// One ensemble member: a stage's model after `epoch` completed epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Member {
    pub stage: Stage,
    pub epoch: usize,
}

impl FromStr for Member {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (stage, epoch) = s
            .split_once('@')
            .ok_or_else(|| format!("ensemble member `{s}` must look like stage@epoch"))?;
        Ok(Member {
            stage: stage.trim().parse()?,
            epoch: epoch
                .trim()
                .parse()
                .map_err(|_| format!("bad epoch in ensemble member `{s}`"))?,
        })
    }
}

impl std::fmt::Display for Member {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.stage.as_str(), self.epoch)
    }
}

/// Which class counts accompany threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountSource {
    /// Recounted after flip balancing.
    Balanced,
    /// The training split before balancing.
    Original,
}

impl FromStr for CountSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "balanced" => Ok(CountSource::Balanced),
            "original" => Ok(CountSource::Original),
            _ => Err(format!("unknown count source `{s}` (balanced|original)")),
        }
    }
}

impl CountSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CountSource::Balanced => "balanced",
            CountSource::Original => "original",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub spec: DatasetSpec,
    /// Shared by the three LR ablation models.
    pub lr_config: TrainConfig,
    pub teacher_config: TrainConfig,
    pub student_config: TrainConfig,
    pub tail_quantile: f64,
    pub calibration_counts: CountSource,
    pub ensemble: Vec<Member>,
}

/// Training settings used by the pipeline unless a manifest overrides them.
pub fn default_lr_config() -> TrainConfig {
    TrainConfig {
        epochs: 70,
        schedule: EpochSchedule {
            base_lr: 2e-3,
            warmup_epochs: 1,
            cycle_epochs: 10,
            cycle_mult: 1,
            eta_min: 0.0,
        },
        ..TrainConfig::default()
    }
}

/// Four teacher snapshots spread over the last part of training.
pub fn default_ensemble(teacher_epochs: usize) -> Vec<Member> {
    let step = (teacher_epochs / 7).max(1);
    (0..4)
        .filter_map(|i| teacher_epochs.checked_sub(i * step))
        .filter(|&e| e > 0)
        .rev()
        .map(|epoch| Member {
            stage: Stage::Teacher,
            epoch,
        })
        .collect()
}

impl Settings {
    pub fn defaults(spec: DatasetSpec) -> Self {
        let lr_config = default_lr_config();
        Self {
            spec,
            teacher_config: TrainConfig {
                tier: Tier::Sr,
                ..lr_config.clone()
            },
            student_config: lr_config.clone(),
            ensemble: default_ensemble(lr_config.epochs),
            lr_config,
            tail_quantile: 0.5,
            calibration_counts: CountSource::Balanced,
        }
    }

    pub fn config(&self, stage: Stage) -> &TrainConfig {
        match stage {
            Stage::Baseline | Stage::Uniform | Stage::Balance => &self.lr_config,
            Stage::Teacher => &self.teacher_config,
            Stage::Student => &self.student_config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        for stage in Stage::ALL {
            self.config(stage).validate()?;
        }
        if self.teacher_config.tier != Tier::Sr {
            return Err(Error::InvalidConfig("the teacher must train on the sr tier".into()));
        }
        if self.student_config.clips != self.teacher_config.clips {
            return Err(Error::InvalidConfig("teacher and student must use the same clip count".into()));
        }
        if !(0.0..=1.0).contains(&self.tail_quantile) {
            return Err(Error::InvalidConfig("tail_quantile must lie in [0, 1]".into()));
        }
        if self.ensemble.len() < 2 {
            return Err(Error::InvalidConfig("an ensemble needs at least two members".into()));
        }
        for (i, m) in self.ensemble.iter().enumerate() {
            let epochs = self.config(m.stage).epochs;
            if m.epoch == 0 || m.epoch > epochs {
                return Err(Error::InvalidConfig(format!("ensemble member {m} is outside 1..={epochs}")));
            }
            if self.ensemble[..i].contains(m) {
                return Err(Error::InvalidConfig(format!("ensemble member {m} is listed twice")));
            }
        }
        Ok(())
    }
}

/// Per-replicate test sample-F1 fields, in report order.
pub const F1_FIELDS: [&str; 7] = [
    "baseline",
    "uniform_sampling",
    "data_balance",
    "sr_teacher",
    "sr_kd_student",
    "ensemble",
    "ensemble_postproc",
];

/// Test sample-F1 of one ensemble member on its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberScore {
    pub member: Member,
    /// Thresholds calibrated on validation, no suppression.
    pub calibrated: f64,
    /// Every threshold 0.5, no suppression.
    pub uncalibrated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub seed: u64,
    /// Test sample-F1 per field of [`F1_FIELDS`].
    pub f1: BTreeMap<String, f64>,
    pub members: Vec<MemberScore>,
    /// Calibrated ensemble thresholds.
    pub thresholds: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// Spearman correlation between class count and ensemble threshold.
    pub count_threshold_correlation: Option<f64>,
}

fn data_for<'d>(stage: Stage, train: &'d Dataset, balanced: &'d Dataset) -> &'d Dataset {
    match stage {
        Stage::Baseline | Stage::Uniform => train,
        _ => balanced,
    }
}

fn stage_config(settings: &Settings, stage: Stage, seed: u64) -> TrainConfig {
    let mut cfg = settings.config(stage).clone();
    cfg.seed = seed;
    match stage {
        Stage::Baseline => cfg.sampling = Sampling::Leading,
        Stage::Uniform | Stage::Balance => cfg.sampling = Sampling::Uniform,
        Stage::Teacher => {}
        Stage::Student => cfg.loss = LossKind::Total,
    }
    cfg
}

fn plain_f1(scores: &ScoreMatrix, labels: &LabelMatrix, thresholds: Vec<f64>) -> Result<f64> {
    let config = FusionConfig {
        group_map: vec![0; thresholds.len()],
        thresholds,
        fallback_argmax: false,
    };
    Ok(evaluate(scores, labels, &config, false)?.sample)
}

fn half(scores: &ScoreMatrix) -> Vec<f64> {
    vec![0.5; scores.num_classes()]
}

struct StageRun {
    report: TrainReport,
    snapshots: BTreeMap<usize, MlpModel>,
}

fn train_stage(
    settings: &Settings,
    stage: Stage,
    seed: u64,
    data: &tinyaction::synthdata::Splits,
    balanced: &Dataset,
    teacher: Option<&MlpModel>,
    out: Option<&Path>,
) -> Result<StageRun> {
    let cfg = stage_config(settings, stage, seed);
    let train = data_for(stage, &data.train, balanced);
    let knowledge = match teacher {
        Some(t) => Some(extract_knowledge(t, train, cfg.clips)?),
        None => None,
    };
    let mut trainer = Trainer::new(train, cfg)
        .validation(&data.val)
        .test(&data.test)
        .keep_snapshots(true);
    if let Some(k) = &knowledge {
        trainer = trainer.knowledge(k);
    }
    let stage_dir = out.map(|d| d.join(stage.as_str()));
    if let Some(d) = &stage_dir {
        trainer = trainer.checkpoint_dir(d);
    }
    let (_, mut report) = trainer.run()?;
    let snapshots = std::mem::take(&mut report.snapshots).into_iter().collect();
    if let Some(d) = &stage_dir {
        write_score_csv(d.join("scores_val.csv"), report.val_scores.as_ref().expect("val scored"))?;
        write_score_csv(d.join("scores_test.csv"), report.test_scores.as_ref().expect("test scored"))?;
    }
    Ok(StageRun { report, snapshots })
}

/// Runs every stage for one replicate seed. When `out` is given, all
/// checkpoints, score CSVs, labels, thresholds and the group map are written
/// beneath it so each reported number can be recomputed from disk.
pub fn run_replicate(settings: &Settings, seed: u64, out: Option<&Path>) -> anyhow::Result<ReplicateOutcome> {
    let fail = |stage: &str| format!("stage {stage} failed for replicate seed {seed}");
    let spec = DatasetSpec {
        seed,
        ..settings.spec.clone()
    };
    let data = generate_dataset(&spec).with_context(|| fail("gen-data"))?;
    let balanced = balance_dataset(&data.train, settings.tail_quantile).with_context(|| fail("balance"))?;
    let val_labels = LabelMatrix::new(data.val.ids(), data.val.label_matrix())?;
    let test_labels = LabelMatrix::new(data.test.ids(), data.test.label_matrix())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_label_csv(dir.join("labels_val.csv"), &val_labels)?;
        write_label_csv(dir.join("labels_test.csv"), &test_labels)?;
        write_group_map(dir.join("groups.csv"), &data.train.group_map)?;
    }

    let mut runs: BTreeMap<Stage, StageRun> = BTreeMap::new();
    for stage in Stage::ALL {
        let teacher = match stage {
            Stage::Student => runs[&Stage::Teacher].snapshots.values().next_back(),
            _ => None,
        };
        let run = train_stage(settings, stage, seed, &data, &balanced, teacher, out)
            .with_context(|| fail(stage.as_str()))?;
        log::info!("seed {seed}: {} trained", stage.as_str());
        runs.insert(stage, run);
    }

    let mut f1 = BTreeMap::new();
    for (field, stage) in F1_FIELDS.iter().zip(Stage::ALL) {
        let scores = runs[&stage].report.test_scores.as_ref().expect("test scored");
        f1.insert(field.to_string(), plain_f1(scores, &test_labels, half(scores))?);
    }

    let grid = default_threshold_grid();
    let counts = match settings.calibration_counts {
        CountSource::Balanced => &balanced.class_counts,
        CountSource::Original => &data.train.class_counts,
    };
    let fusion = || -> Result<_> {
        let mut member_val = Vec::new();
        let mut member_test = Vec::new();
        let mut members = Vec::new();
        for m in &settings.ensemble {
            let cfg = stage_config(settings, m.stage, seed);
            let model = &runs[&m.stage].snapshots[&m.epoch];
            let val = score_dataset(model, &data.val, &cfg)?;
            let test = score_dataset(model, &data.test, &cfg)?;
            let cal = calibrate_thresholds(&val, &val_labels, counts, &grid)?;
            members.push(MemberScore {
                member: *m,
                calibrated: plain_f1(&test, &test_labels, cal.thresholds.clone())?,
                uncalibrated: plain_f1(&test, &test_labels, half(&test))?,
            });
            if let Some(dir) = out {
                let tag = format!("{}_epoch_{}", m.stage.as_str(), m.epoch);
                write_score_csv(dir.join(format!("member_{tag}_val.csv")), &val)?;
                write_score_csv(dir.join(format!("member_{tag}_test.csv")), &test)?;
                write_thresholds(dir.join(format!("thresholds_{tag}.csv")), &cal.thresholds)?;
            }
            member_val.push(val);
            member_test.push(test);
        }
        let ens_val = ensemble_scores(&member_val, None)?;
        let ens_test = ensemble_scores(&member_test, None)?;
        let cal = calibrate_thresholds(&ens_val, &val_labels, counts, &grid)?;
        let fc = FusionConfig {
            thresholds: cal.thresholds.clone(),
            group_map: data.train.group_map.clone(),
            fallback_argmax: true,
        };
        let raw = plain_f1(&ens_test, &test_labels, half(&ens_test))?;
        let post = evaluate(&ens_test, &test_labels, &fc, true)?.sample;
        if let Some(dir) = out {
            write_score_csv(dir.join("ensemble_val.csv"), &ens_val)?;
            write_score_csv(dir.join("ensemble_test.csv"), &ens_test)?;
            write_thresholds(dir.join("thresholds_ensemble.csv"), &cal.thresholds)?;
        }
        Ok((members, cal, raw, post))
    };
    let (members, cal, raw, post) = fusion().with_context(|| fail("fuse"))?;
    f1.insert("ensemble".to_string(), raw);
    f1.insert("ensemble_postproc".to_string(), post);
    Ok(ReplicateOutcome {
        seed,
        f1,
        members,
        thresholds: cal.thresholds,
        class_counts: cal.class_counts,
        count_threshold_correlation: cal.count_threshold_correlation,
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSummary {
    pub member: Member,
    pub calibrated_mean: f64,
    pub uncalibrated_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// `(mean, std)` per field of [`F1_FIELDS`].
    pub f1: BTreeMap<String, (f64, f64)>,
    pub members: Vec<MemberSummary>,
    /// Member with the highest mean calibrated F1.
    pub best_single_calibrated: MemberSummary,
    /// Member with the highest mean F1 at threshold 0.5.
    pub best_single_uncalibrated: MemberSummary,
}

pub fn summarize(outcomes: &[ReplicateOutcome]) -> Summary {
    assert!(!outcomes.is_empty(), "no replicates to summarize");
    let f1 = F1_FIELDS
        .iter()
        .map(|&k| {
            let v: Vec<f64> = outcomes.iter().map(|o| o.f1[k]).collect();
            (k.to_string(), mean_std(&v))
        })
        .collect();
    let members: Vec<MemberSummary> = (0..outcomes[0].members.len())
        .map(|i| {
            let cal: Vec<f64> = outcomes.iter().map(|o| o.members[i].calibrated).collect();
            let unc: Vec<f64> = outcomes.iter().map(|o| o.members[i].uncalibrated).collect();
            MemberSummary {
                member: outcomes[0].members[i].member,
                calibrated_mean: mean_std(&cal).0,
                uncalibrated_mean: mean_std(&unc).0,
            }
        })
        .collect();
    // First member wins ties.
    let best = |key: fn(&MemberSummary) -> f64| {
        members
            .iter()
            .fold(None::<&MemberSummary>, |b, m| match b {
                Some(b) if key(b) >= key(m) => Some(b),
                _ => Some(m),
            })
            .expect("at least one member")
            .clone()
    };
    Summary {
        best_single_calibrated: best(|m| m.calibrated_mean),
        best_single_uncalibrated: best(|m| m.uncalibrated_mean),
        f1,
        members,
    }
}

fn member_json(m: &MemberSummary) -> Value {
    json!({
        "member": m.member.to_string(),
        "calibrated_mean": m.calibrated_mean,
        "uncalibrated_mean": m.uncalibrated_mean,
    })
}

/// The `report.json` document. Keys serialize in sorted order.
pub fn report_json(settings: &Settings, outcomes: &[ReplicateOutcome]) -> Value {
    let summary = summarize(outcomes);
    let replicates: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "seed": o.seed,
                "f1": o.f1,
                "members": o.members.iter().map(|m| json!({
                    "member": m.member.to_string(),
                    "calibrated": m.calibrated,
                    "uncalibrated": m.uncalibrated,
                })).collect::<Vec<_>>(),
                "ensemble_thresholds": o.thresholds,
                "class_counts": o.class_counts,
                "count_threshold_correlation": o.count_threshold_correlation,
            })
        })
        .collect();
    let mean: BTreeMap<&String, f64> = summary.f1.iter().map(|(k, v)| (k, v.0)).collect();
    let std: BTreeMap<&String, f64> = summary.f1.iter().map(|(k, v)| (k, v.1)).collect();
    json!({
        "fields": F1_FIELDS,
        "metric": "sample_f1",
        "seeds": outcomes.iter().map(|o| o.seed).collect::<Vec<_>>(),
        "ensemble": settings.ensemble.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "calibration_counts": settings.calibration_counts.as_str(),
        "replicates": replicates,
        "mean": mean,
        "std": std,
        "members": summary.members.iter().map(member_json).collect::<Vec<_>>(),
        "best_single_calibrated": member_json(&summary.best_single_calibrated),
        "best_single_uncalibrated": member_json(&summary.best_single_uncalibrated),
    })
}

/// Runs all replicates, optionally in parallel, preserving seed order.
pub fn run_all(settings: &Settings, seeds: &[u64], out: Option<&Path>, parallel: bool) -> anyhow::Result<Vec<ReplicateOutcome>> {
    let one = |&seed: &u64| {
        let dir = out.map(|d| d.join(format!("seed_{seed}")));
        run_replicate(settings, seed, dir.as_deref())
    };
    if parallel {
        seeds.par_iter().map(one).collect()
    } else {
        seeds.iter().map(one).collect()
    }
}

/// Manifest: a flat `key = value` file. Paths resolve against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dataset_spec: PathBuf,
    pub output: PathBuf,
    pub seeds: Vec<u64>,
    pub lr_config: Option<PathBuf>,
    pub teacher_config: Option<PathBuf>,
    pub student_config: Option<PathBuf>,
    pub tail_quantile: f64,
    pub calibration_counts: CountSource,
    pub ensemble: Option<Vec<Member>>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut kv = KvFile::read(path)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let dataset_spec = resolve(kv.take("dataset_spec")?);
        let output = resolve(kv.take("output")?);
        let replicates: Option<u64> = kv.take_opt("replicates")?;
        let seed: Option<u64> = kv.take_opt("seed")?;
        let seeds = match (kv.take_list::<u64>("seeds")?, replicates, seed) {
            (Some(list), None, None) => list,
            (None, r, s) => (0..r.unwrap_or(1)).map(|i| s.unwrap_or(0) + i).collect(),
            _ => {
                return Err(Error::InvalidConfig(
                    "give either `seeds` or `replicates`/`seed`, not both".into(),
                ))
            }
        };
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one replicate seed is required".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::InvalidConfig("replicate seeds must be distinct".into()));
        }
        let manifest = Self {
            dataset_spec,
            output,
            seeds,
            lr_config: kv.take_opt::<PathBuf>("lr_config")?.map(resolve),
            teacher_config: kv.take_opt::<PathBuf>("teacher_config")?.map(resolve),
            student_config: kv.take_opt::<PathBuf>("student_config")?.map(resolve),
            tail_quantile: kv.take_or("tail_quantile", 0.5)?,
            calibration_counts: kv.take_or("calibration_counts", CountSource::Balanced)?,
            ensemble: kv.take_list::<Member>("ensemble")?,
        };
        kv.finish()?;
        Ok(manifest)
    }

    /// Loads every referenced file and checks the combined settings.
    pub fn settings(&self) -> Result<Settings> {
        let spec = DatasetSpec::read(&self.dataset_spec)?;
        let mut s = Settings::defaults(spec);
        if let Some(p) = &self.lr_config {
            s.lr_config = TrainConfig::read(p)?;
        }
        s.teacher_config = match &self.teacher_config {
            Some(p) => TrainConfig::read(p)?,
            None => TrainConfig {
                tier: Tier::Sr,
                ..s.lr_config.clone()
            },
        };
        s.student_config = match &self.student_config {
            Some(p) => TrainConfig::read(p)?,
            None => s.lr_config.clone(),
        };
        s.tail_quantile = self.tail_quantile;
        s.calibration_counts = self.calibration_counts;
        s.ensemble = match &self.ensemble {
            Some(e) => e.clone(),
            None => default_ensemble(s.teacher_config.epochs),
        };
        s.validate()?;
        Ok(s)
    }
}
