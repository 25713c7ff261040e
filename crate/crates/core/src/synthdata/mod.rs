//! Synthetic long-tailed, dual-resolution, multi-label video benchmark.
//!
//! Every class owns a fixed spatio-temporal prototype. A sample's
//! high-resolution video is the sum of the prototypes of its active labels
//! plus Gaussian noise; the low-resolution tier is a block average of it and
//! the super-resolution tier blends the true high-resolution signal with a
//! nearest-neighbour upsample of the low-resolution one.
//!
//! Prototypes are built from three ingredients:
//!
//! * a coarse pattern that is constant over every `d×d` block (survives
//!   pooling), partly shared with the other classes of the same group;
//! * a fine pattern with zero mean inside every `d×d` block (destroyed by
//!   pooling, so only the HR and SR tiers carry it);
//! * a raised-cosine temporal envelope centred somewhere inside the clip.

mod format;

use std::cmp::Ordering;

use ndarray::{s, Array2, Array3, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kvfile::KvFile;
use crate::seed::{self, stream};

pub use format::{read_dataset, write_dataset, DATASET_FORMAT_VERSION};

/// Ids handed to flipped copies start here; generated ids stay below it.
pub const AUGMENTED_ID_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    Lr,
    Hr,
    Sr,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Hr, Tier::Lr, Tier::Sr];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Lr => "lr",
            Tier::Hr => "hr",
            Tier::Sr => "sr",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Tier::Lr),
            "hr" => Ok(Tier::Hr),
            "sr" => Ok(Tier::Sr),
            other => Err(format!("unknown tier `{other}` (expected lr, sr or hr)")),
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One clip at one resolution tier, `T×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: Array3<f64>,
    pub tier: Tier,
}

impl VideoTensor {
    pub fn new(frames: Array3<f64>, tier: Tier) -> Result<Self> {
        let (t, h, w) = frames.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("video dims must be >= 1, got {t}x{h}x{w}")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("video contains non-finite intensities".into()));
        }
        Ok(Self { frames, tier })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        let (_, h, w) = self.frames.dim();
        (h, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub hr: VideoTensor,
    pub lr: VideoTensor,
    pub sr: VideoTensor,
    /// Multi-hot, one byte per class.
    pub labels: Vec<u8>,
    pub is_augmented: bool,
}

impl LabeledSample {
    pub fn video(&self, tier: Tier) -> &VideoTensor {
        match tier {
            Tier::Lr => &self.lr,
            Tier::Hr => &self.hr,
            Tier::Sr => &self.sr,
        }
    }

    pub fn active_labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y != 0)
            .map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub downsample: usize,
}

impl Geometry {
    pub fn tier_dims(&self, tier: Tier) -> (usize, usize) {
        match tier {
            Tier::Lr => (self.height / self.downsample, self.width / self.downsample),
            Tier::Hr | Tier::Sr => (self.height, self.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub group_map: Vec<usize>,
    pub geometry: Geometry,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn compute_class_counts(&self) -> Vec<usize> {
        count_labels(self.num_classes, &self.samples)
    }

    pub fn recount(&mut self) {
        self.class_counts = self.compute_class_counts();
    }

    /// Checks the stored invariants; used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        if self.group_map.len() != self.num_classes {
            return Err(Error::shape(format!(
                "group map covers {} classes, dataset has {}",
                self.group_map.len(),
                self.num_classes
            )));
        }
        if self.compute_class_counts() != self.class_counts {
            return Err(Error::config("stored class counts disagree with the samples"));
        }
        let mut ids: Vec<u64> = self.samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::IdMismatch("duplicate sample id".into()));
        }
        for s in &self.samples {
            if s.labels.len() != self.num_classes || s.labels.iter().all(|&y| y == 0) {
                return Err(Error::config(format!("sample {} has an invalid label vector", s.id)));
            }
        }
        Ok(())
    }

    /// `N×C` label matrix in sample order.
    pub fn label_matrix(&self) -> Array2<u8> {
        let mut out = Array2::zeros((self.samples.len(), self.num_classes));
        for (mut row, s) in out.outer_iter_mut().zip(&self.samples) {
            for (dst, &y) in row.iter_mut().zip(&s.labels) {
                *dst = y;
            }
        }
        out
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }
}

fn count_labels(num_classes: usize, samples: &[LabeledSample]) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in samples {
        for c in s.active_labels() {
            counts[c] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub head_class_count: usize,
    pub tail_ratio: f64,
    pub secondary_label_prob: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub downsample: usize,
    pub noise_hr: f64,
    pub noise_lr: f64,
    pub noise_sr: f64,
    pub sr_recovery: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Number of mutually exclusive class groups.
    pub num_groups: usize,
    /// Fraction of prototype energy carried by sub-block detail.
    pub detail_fraction: f64,
    /// Fraction of the coarse pattern shared with the class's group.
    pub group_similarity: f64,
    /// Probability that an active label's prototype appears mirrored.
    pub mirror_prob: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            head_class_count: 200,
            tail_ratio: 0.65,
            secondary_label_prob: 0.3,
            frames: 32,
            height: 8,
            width: 8,
            downsample: 2,
            noise_hr: 1.0,
            noise_lr: 0.5,
            noise_sr: 0.1,
            sr_recovery: 0.8,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
            num_groups: 4,
            detail_fraction: 0.6,
            group_similarity: 0.5,
            mirror_prob: 0.5,
        }
    }
}

macro_rules! spec_fields {
    ($m:ident) => {
        $m!(
            num_classes,
            head_class_count,
            tail_ratio,
            secondary_label_prob,
            frames,
            height,
            width,
            downsample,
            noise_hr,
            noise_lr,
            noise_sr,
            sr_recovery,
            train_fraction,
            val_fraction,
            test_fraction,
            seed,
            num_groups,
            detail_fraction,
            group_similarity,
            mirror_prob
        )
    };
}

impl DatasetSpec {
    /// Reads a flat `key = value` file. Every field must be present.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        macro_rules! build {
            ($($f:ident),*) => {
                Self { $($f: kv.take(stringify!($f))?,)* }
            };
        }
        let spec = spec_fields!(build);
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($($f:ident),*) => {
                $(out.push_str(&format!("{} = {}\n", stringify!($f), self.$f));)*
            };
        }
        spec_fields!(emit);
        out
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            frames: self.frames,
            height: self.height,
            width: self.width,
            downsample: self.downsample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        if self.num_classes == 0 || self.head_class_count == 0 {
            return Err(Error::config("num_classes and head_class_count must be >= 1"));
        }
        if !(self.tail_ratio > 0.0 && self.tail_ratio < 1.0) {
            return Err(Error::config(format!("tail_ratio must lie in (0, 1), got {}", self.tail_ratio)));
        }
        prob("secondary_label_prob", self.secondary_label_prob)?;
        prob("sr_recovery", self.sr_recovery)?;
        prob("train_fraction", self.train_fraction)?;
        prob("val_fraction", self.val_fraction)?;
        prob("test_fraction", self.test_fraction)?;
        prob("detail_fraction", self.detail_fraction)?;
        prob("group_similarity", self.group_similarity)?;
        prob("mirror_prob", self.mirror_prob)?;
        let total = self.train_fraction + self.val_fraction + self.test_fraction;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions must sum to 1, got {total}")));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.downsample == 0 {
            return Err(Error::config("frames, height, width and downsample must be >= 1"));
        }
        if self.height % self.downsample != 0 || self.width % self.downsample != 0 {
            return Err(Error::config(format!(
                "downsample factor {} must divide height {} and width {}",
                self.downsample, self.height, self.width
            )));
        }
        for (name, v) in [("noise_hr", self.noise_hr), ("noise_lr", self.noise_lr), ("noise_sr", self.noise_sr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.num_groups == 0 || self.num_groups > self.num_classes {
            return Err(Error::config(format!(
                "num_groups must lie in [1, num_classes], got {}",
                self.num_groups
            )));
        }
        for c in 0..self.num_classes {
            if self.split_counts(c)?.0 == 0 {
                return Err(Error::config(format!(
                    "class {c} receives no training samples (total {})",
                    self.primary_count(c)
                )));
            }
        }
        Ok(())
    }

    /// `round(N_max · r^c)`.
    pub fn primary_count(&self, class: usize) -> usize {
        (self.head_class_count as f64 * self.tail_ratio.powi(class as i32)).round() as usize
    }

    /// (train, val, test) primary-sample counts of one class.
    pub fn split_counts(&self, class: usize) -> Result<(usize, usize, usize)> {
        let n = self.primary_count(class);
        let train = ((n as f64) * self.train_fraction).round() as usize;
        let train = train.min(n);
        let val = (((n as f64) * self.val_fraction).round() as usize).min(n - train);
        Ok((train, val, n - train - val))
    }

    /// Classes are dealt round-robin into groups so each group mixes head
    /// and tail classes.
    pub fn group_map(&self) -> Vec<usize> {
        (0..self.num_classes).map(|c| c % self.num_groups).collect()
    }
}

/// Per-class prototypes, `C` tensors of shape `T×H×W`.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub patterns: Vec<Array3<f64>>,
}

impl Prototypes {
    pub fn generate(spec: &DatasetSpec) -> Self {
        let (t_len, h, w, d) = (spec.frames, spec.height, spec.width, spec.downsample);
        let groups = spec.group_map();
        let (bh, bw) = (h / d, w / d);

        let coarse_field = |rng: &mut seed::Rng| {
            let blocks: Array2<f64> = Array2::from_shape_fn((bh, bw), |_| StandardNormal.sample(rng));
            Array2::from_shape_fn((h, w), |(i, j)| blocks[[i / d, j / d]])
        };
        let group_coarse: Vec<Array2<f64>> = (0..spec.num_groups)
            .map(|g| coarse_field(&mut seed::rng(spec.seed, stream::PROTOTYPE, (1 << 20) + g as u64)))
            .collect();

        let patterns = (0..spec.num_classes)
            .map(|c| {
                let mut rng = seed::rng(spec.seed, stream::PROTOTYPE, c as u64);
                let own = coarse_field(&mut rng);
                let shared = &group_coarse[groups[c]];
                let gs = spec.group_similarity;
                let mut coarse = &own * (1.0 - gs).sqrt() + shared * gs.sqrt();
                normalize_rms(&mut coarse);

                let mut fine: Array2<f64> = Array2::from_shape_fn((h, w), |_| StandardNormal.sample(&mut rng));
                if d > 1 {
                    // Remove each block mean so pooling annihilates the detail.
                    for bi in 0..bh {
                        for bj in 0..bw {
                            let mut block = fine.slice_mut(s![bi * d..(bi + 1) * d, bj * d..(bj + 1) * d]);
                            let mean = block.mean().unwrap_or(0.0);
                            block -= mean;
                        }
                    }
                }
                normalize_rms(&mut fine);

                let df = spec.detail_fraction;
                let mut spatial = coarse * (1.0 - df).sqrt() + fine * df.sqrt();
                // Left-right asymmetry guarantee: a horizontal ramp breaks any
                // accidental mirror symmetry of the random fields.
                if w > 1 {
                    for j in 0..w {
                        let ramp = 0.25 * (j as f64 / (w - 1) as f64 - 0.5);
                        spatial.column_mut(j).mapv_inplace(|v| v + ramp);
                    }
                }

                let centre = rng.random_range(0.2..0.8) * t_len as f64;
                let half_width = (t_len as f64 / 3.0).max(1.0);
                let mut proto = Array3::zeros((t_len, h, w));
                for (t, mut frame) in proto.outer_iter_mut().enumerate() {
                    let u = (t as f64 + 0.5 - centre) / half_width;
                    let env = if u.abs() < 1.0 {
                        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
                    } else {
                        0.0
                    };
                    frame.assign(&(&spatial * env));
                }
                proto
            })
            .collect();
        Self { patterns }
    }
}

fn normalize_rms(a: &mut Array2<f64>) {
    let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
    if rms > 0.0 {
        a.mapv_inplace(|v| v / rms);
    }
}

/// `d×d` average pooling of every frame.
pub fn average_pool(frames: &Array3<f64>, d: usize) -> Array3<f64> {
    let (t, h, w) = frames.dim();
    let (bh, bw) = (h / d, w / d);
    let scale = 1.0 / (d * d) as f64;
    Array3::from_shape_fn((t, bh, bw), |(k, i, j)| {
        frames.slice(s![k, i * d..(i + 1) * d, j * d..(j + 1) * d]).sum() * scale
    })
}

/// Nearest-neighbour upsampling by `d` along both spatial axes.
pub fn upsample_nearest(frames: &Array3<f64>, d: usize) -> Array3<f64> {
    let (t, h, w) = frames.dim();
    Array3::from_shape_fn((t, h * d, w * d), |(k, i, j)| frames[[k, i / d, j / d]])
}

fn add_noise(a: &mut Array3<f64>, sigma: f64, rng: &mut seed::Rng) {
    if sigma > 0.0 {
        a.mapv_inplace(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        });
    }
}

struct PlannedSample {
    id: u64,
    primary: usize,
}

fn synthesize(spec: &DatasetSpec, protos: &Prototypes, weights: &[f64], plan: &PlannedSample) -> LabeledSample {
    let mut rng = seed::rng(spec.seed, stream::SAMPLE, plan.id);
    let groups = spec.group_map();
    let c_num = spec.num_classes;
    let mut labels = vec![0u8; c_num];
    labels[plan.primary] = 1;

    if rng.random::<f64>() < spec.secondary_label_prob {
        // A second activity from a different group, drawn with the
        // long-tailed class prior.
        let eligible: Vec<usize> = (0..c_num).filter(|&c| groups[c] != groups[plan.primary]).collect();
        if !eligible.is_empty() {
            let total: f64 = eligible.iter().map(|&c| weights[c]).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = *eligible.last().unwrap();
            for &c in &eligible {
                if u < weights[c] {
                    pick = c;
                    break;
                }
                u -= weights[c];
            }
            labels[pick] = 1;
        }
    }

    let (t, h, w, d) = (spec.frames, spec.height, spec.width, spec.downsample);
    let mut hr_clean = Array3::<f64>::zeros((t, h, w));
    for (c, &y) in labels.iter().enumerate() {
        if y == 0 {
            continue;
        }
        if rng.random::<f64>() < spec.mirror_prob {
            hr_clean += &protos.patterns[c].slice(s![.., .., ..;-1]);
        } else {
            hr_clean += &protos.patterns[c];
        }
    }
    let mut hr = hr_clean.clone();
    add_noise(&mut hr, spec.noise_hr, &mut rng);
    let mut lr = average_pool(&hr, d);
    add_noise(&mut lr, spec.noise_lr, &mut rng);
    let beta = spec.sr_recovery;
    let mut sr = &hr * beta + &upsample_nearest(&lr, d) * (1.0 - beta);
    add_noise(&mut sr, spec.noise_sr, &mut rng);

    LabeledSample {
        id: plan.id,
        hr: VideoTensor { frames: hr, tier: Tier::Hr },
        lr: VideoTensor { frames: lr, tier: Tier::Lr },
        sr: VideoTensor { frames: sr, tier: Tier::Sr },
        labels,
        is_augmented: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Generates the train/val/test splits. Deterministic in `spec.seed`;
/// samples are synthesized in parallel from per-id seeds.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let protos = Prototypes::generate(spec);
    let weights: Vec<f64> = (0..spec.num_classes)
        .map(|c| spec.tail_ratio.powi(c as i32))
        .collect();

    let mut next_id = 0u64;
    let mut plans: [Vec<PlannedSample>; 3] = Default::default();
    for c in 0..spec.num_classes {
        let n = spec.primary_count(c);
        let mut ids: Vec<u64> = (next_id..next_id + n as u64).collect();
        next_id += n as u64;
        shuffle(&mut ids, &mut seed::rng(spec.seed, stream::SPLIT, c as u64));
        let (n_train, n_val, _) = spec.split_counts(c)?;
        for (k, id) in ids.into_iter().enumerate() {
            let split = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
            plans[split].push(PlannedSample { id, primary: c });
        }
    }

    let build = |mut plan: Vec<PlannedSample>| {
        plan.sort_by_key(|p| p.id);
        let samples: Vec<LabeledSample> = plan
            .par_iter()
            .map(|p| synthesize(spec, &protos, &weights, p))
            .collect();
        let mut ds = Dataset {
            samples,
            num_classes: spec.num_classes,
            class_counts: Vec::new(),
            group_map: spec.group_map(),
            geometry: spec.geometry(),
        };
        ds.recount();
        ds
    };
    let [train, val, test] = plans;
    Ok(Splits {
        train: build(train),
        val: build(val),
        test: build(test),
    })
}

fn shuffle<T>(items: &mut [T], rng: &mut seed::Rng) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

/// Bounds `[start, end)` of clip `c` when `T` frames are cut into `K` clips.
pub fn clip_bounds(clip: usize, num_frames: usize, num_clips: usize) -> (usize, usize) {
    (clip * num_frames / num_clips, (clip + 1) * num_frames / num_clips)
}

fn check_sampling_args(num_frames: usize, num_clips: usize) -> Result<()> {
    if num_frames == 0 || num_clips == 0 {
        return Err(Error::config(format!(
            "temporal sampling needs T >= 1 and K >= 1, got T={num_frames}, K={num_clips}"
        )));
    }
    Ok(())
}

/// One random frame from each of `K` equal clips. Empty clips (when
/// `T < K`) fall back to the clip's start frame, clamped to the video.
pub fn uniform_sample_indices(num_frames: usize, num_clips: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    check_sampling_args(num_frames, num_clips)?;
    Ok((0..num_clips)
        .map(|c| {
            let (start, end) = clip_bounds(c, num_frames, num_clips);
            if start < end {
                rng.random_range(start..end)
            } else {
                start.min(num_frames - 1)
            }
        })
        .collect())
}

/// Deterministic variant: the (lower) middle frame of each clip.
pub fn midpoint_sample_indices(num_frames: usize, num_clips: usize) -> Result<Vec<usize>> {
    check_sampling_args(num_frames, num_clips)?;
    Ok((0..num_clips)
        .map(|c| {
            let (start, end) = clip_bounds(c, num_frames, num_clips);
            if start < end {
                start + (end - start - 1) / 2
            } else {
                start.min(num_frames - 1)
            }
        })
        .collect())
}

/// The first `K` frames, repeating the last frame when the video is shorter.
pub fn leading_frame_indices(num_frames: usize, num_clips: usize) -> Result<Vec<usize>> {
    check_sampling_args(num_frames, num_clips)?;
    Ok((0..num_clips).map(|k| k.min(num_frames - 1)).collect())
}

pub fn flip_horizontal(video: &VideoTensor) -> VideoTensor {
    VideoTensor {
        frames: video.frames.slice(s![.., .., ..;-1]).to_owned(),
        tier: video.tier,
    }
}

/// Linear-interpolated quantile of `values` at `q ∈ [0, 1]`.
fn quantile(values: &[usize], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Classes whose count is at or below the `tail_quantile` count quantile.
pub fn tail_classes(counts: &[usize], tail_quantile: f64) -> Vec<bool> {
    if counts.is_empty() {
        return Vec::new();
    }
    let cut = quantile(counts, tail_quantile);
    counts.iter().map(|&n| n as f64 <= cut).collect()
}

/// Appends a horizontally flipped copy of every sample that carries at
/// least one tail label. Originals are kept untouched.
pub fn balance_dataset(train: &Dataset, tail_quantile: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&tail_quantile) {
        return Err(Error::config(format!("tail_quantile must lie in [0, 1], got {tail_quantile}")));
    }
    if train.is_empty() {
        return Err(Error::config("cannot balance an empty dataset"));
    }
    let tail = tail_classes(&train.compute_class_counts(), tail_quantile);
    let mut next_id = train
        .samples
        .iter()
        .map(|s| s.id + 1)
        .max()
        .unwrap_or(0)
        .max(AUGMENTED_ID_BASE);

    let mut out = train.clone();
    for s in &train.samples {
        if s.active_labels().any(|c| tail[c]) {
            out.samples.push(LabeledSample {
                id: next_id,
                hr: flip_horizontal(&s.hr),
                lr: flip_horizontal(&s.lr),
                sr: flip_horizontal(&s.sr),
                labels: s.labels.clone(),
                is_augmented: true,
            });
            next_id += 1;
        }
    }
    out.recount();
    Ok(out)
}

/// Mean absolute difference between a tensor and its mirror image.
pub fn mirror_asymmetry(frames: &Array3<f64>) -> f64 {
    let flipped = frames.slice(s![.., .., ..;-1]);
    let mut acc = 0.0;
    Zip::from(frames).and(&flipped).for_each(|a, b| acc += (a - b).abs());
    acc / frames.len() as f64
}
