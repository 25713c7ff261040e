//! Score fusion and post-processing: ensemble averaging, per-class
//! threshold calibration, group-exclusive suppression and multi-label F1.

mod files;

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

pub use files::{
    read_group_map, read_label_csv, read_score_csv, read_thresholds, write_group_map, write_label_csv,
    write_score_csv, write_thresholds,
};

/// Per-sample, per-class probabilities keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<u64>,
    pub scores: Array2<f64>,
}

fn check_ids(ids: &[u64], rows: usize) -> Result<HashMap<u64, usize>> {
    if ids.len() != rows {
        return Err(Error::shape(format!("{} ids for {rows} rows", ids.len())));
    }
    let mut index = HashMap::with_capacity(ids.len());
    for (row, &id) in ids.iter().enumerate() {
        if index.insert(id, row).is_some() {
            return Err(Error::IdMismatch(format!("duplicate sample id {id}")));
        }
    }
    Ok(index)
}

impl ScoreMatrix {
    pub fn new(ids: Vec<u64>, scores: Array2<f64>) -> Result<Self> {
        check_ids(&ids, scores.nrows())?;
        if let Some(bad) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("score {bad} outside [0, 1]")));
        }
        Ok(Self { ids, scores })
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows permuted into the order of `ids`; fails unless both id sets match.
    pub fn aligned_to(&self, ids: &[u64]) -> Result<Self> {
        Ok(Self {
            ids: ids.to_vec(),
            scores: gather_rows(&self.ids, self.scores.view(), ids)?,
        })
    }
}

/// Ground-truth multi-hot labels keyed by sample id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    pub ids: Vec<u64>,
    pub labels: Array2<u8>,
}

impl LabelMatrix {
    pub fn new(ids: Vec<u64>, labels: Array2<u8>) -> Result<Self> {
        check_ids(&ids, labels.nrows())?;
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::config("labels must be 0 or 1"));
        }
        Ok(Self { ids, labels })
    }

    pub fn aligned_to(&self, ids: &[u64]) -> Result<Self> {
        Ok(Self {
            ids: ids.to_vec(),
            labels: gather_rows(&self.ids, self.labels.view(), ids)?,
        })
    }
}

fn gather_rows<T: Copy + Default>(have: &[u64], rows: ArrayView2<T>, want: &[u64]) -> Result<Array2<T>> {
    if have.len() != want.len() {
        return Err(Error::IdMismatch(format!("{} rows vs {} requested ids", have.len(), want.len())));
    }
    let index = check_ids(have, rows.nrows())?;
    let mut out = Array2::from_elem((want.len(), rows.ncols()), T::default());
    for (dst, id) in want.iter().enumerate() {
        let src = *index
            .get(id)
            .ok_or_else(|| Error::IdMismatch(format!("sample id {id} missing")))?;
        out.row_mut(dst).assign(&rows.row(src));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub thresholds: Vec<f64>,
    pub group_map: Vec<usize>,
    pub fallback_argmax: bool,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("thresholds must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weighted mean of score matrices, rows aligned to the first matrix's ids.
pub fn ensemble_scores(matrices: &[ScoreMatrix], weights: Option<&[f64]>) -> Result<ScoreMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::config("ensemble needs at least one score matrix"))?;
    let weights: Vec<f64> = match weights {
        None => vec![1.0; matrices.len()],
        Some(w) => {
            if w.len() != matrices.len() {
                return Err(Error::shape(format!("{} weights for {} matrices", w.len(), matrices.len())));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config("ensemble weights must be finite and >= 0"));
            }
            w.to_vec()
        }
    };
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::config("ensemble weights must have a positive sum"));
    }
    let c = first.num_classes();
    let mut aligned = Vec::with_capacity(matrices.len());
    for (k, m) in matrices.iter().enumerate() {
        if m.num_classes() != c {
            return Err(Error::shape(format!("matrix {k} has {} classes, expected {c}", m.num_classes())));
        }
        aligned.push(m.aligned_to(&first.ids)?);
    }

    let mut acc = Array2::<f64>::zeros(first.scores.dim());
    let mut lo = Array2::from_elem(first.scores.dim(), f64::INFINITY);
    let mut hi = Array2::from_elem(first.scores.dim(), f64::NEG_INFINITY);
    for (m, &w) in aligned.iter().zip(&weights) {
        acc.scaled_add(w, &m.scores);
        if w > 0.0 {
            Zip::from(&mut lo).and(&mut hi).and(&m.scores).for_each(|l, h, &s| {
                *l = l.min(s);
                *h = h.max(s);
            });
        }
    }
    // Rounding can push a weighted mean an ulp outside its inputs.
    Zip::from(&mut acc).and(&lo).and(&hi).for_each(|a, &l, &h| {
        *a = (*a / total).clamp(l, h);
    });
    Ok(ScoreMatrix {
        ids: first.ids.clone(),
        scores: acc,
    })
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Binary F1 of one class column; no positives and no predictions counts
/// as a perfect score.
fn column_f1(scores: impl Iterator<Item = f64>, labels: impl Iterator<Item = u8>, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (s, y) in scores.zip(labels) {
        match (s >= threshold, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: Vec<f64>,
    /// Class counts the calibration ran against (diagnostic only).
    pub class_counts: Vec<usize>,
    /// Spearman rank correlation between class count and chosen threshold;
    /// positive when frequent classes received higher thresholds.
    pub count_threshold_correlation: Option<f64>,
}

/// Per class, the grid value maximizing validation F1, lowest on ties.
pub fn calibrate_thresholds(
    val_scores: &ScoreMatrix,
    val_labels: &LabelMatrix,
    class_counts: &[usize],
    grid: &[f64],
) -> Result<Calibration> {
    if val_scores.is_empty() {
        return Err(Error::config("threshold calibration needs a non-empty validation set"));
    }
    if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::config("threshold grid must be non-empty with values in [0, 1]"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("threshold grid must be strictly ascending"));
    }
    let c = val_scores.num_classes();
    if val_labels.labels.ncols() != c || class_counts.len() != c {
        return Err(Error::shape("scores, labels and class counts disagree on class count"));
    }
    let labels = val_labels.aligned_to(&val_scores.ids)?;
    let thresholds: Vec<f64> = (0..c)
        .map(|j| {
            let col_s = val_scores.scores.column(j);
            let col_y = labels.labels.column(j);
            let mut best = (f64::NEG_INFINITY, grid[0]);
            for &t in grid {
                let f1 = column_f1(col_s.iter().copied(), col_y.iter().copied(), t);
                if f1 > best.0 {
                    best = (f1, t);
                }
            }
            best.1
        })
        .collect();
    let counts_f: Vec<f64> = class_counts.iter().map(|&n| n as f64).collect();
    Ok(Calibration {
        count_threshold_correlation: spearman(&counts_f, &thresholds),
        thresholds,
        class_counts: class_counts.to_vec(),
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            out[order[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// `pred = score >= threshold`; optionally forces the argmax class on rows
/// with no positives (lowest index on ties).
pub fn apply_thresholds(scores: &ScoreMatrix, config: &FusionConfig) -> Result<Array2<u8>> {
    config.validate()?;
    if config.thresholds.len() != scores.num_classes() {
        return Err(Error::shape(format!(
            "{} thresholds for {} classes",
            config.thresholds.len(),
            scores.num_classes()
        )));
    }
    let mut preds = Array2::zeros(scores.scores.dim());
    for (mut out, row) in preds.outer_iter_mut().zip(scores.scores.outer_iter()) {
        let mut any = false;
        for ((o, &s), &t) in out.iter_mut().zip(row.iter()).zip(&config.thresholds) {
            if s >= t {
                *o = 1;
                any = true;
            }
        }
        if !any && config.fallback_argmax && !row.is_empty() {
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            out[best] = 1;
        }
    }
    Ok(preds)
}

/// Within each group keeps only the highest-scoring predicted class
/// (lowest index on ties). Never adds positives.
pub fn group_suppress(scores: &ScoreMatrix, preds: ArrayView2<u8>, group_map: &[usize]) -> Result<Array2<u8>> {
    if preds.dim() != scores.scores.dim() {
        return Err(Error::shape("predictions and scores differ in shape"));
    }
    if group_map.len() != scores.num_classes() {
        return Err(Error::config(format!(
            "group map covers {} classes, scores have {}",
            group_map.len(),
            scores.num_classes()
        )));
    }
    let mut out = preds.to_owned();
    let mut winner: HashMap<usize, usize> = HashMap::new();
    for (mut row, srow) in out.outer_iter_mut().zip(scores.scores.outer_iter()) {
        winner.clear();
        for (j, &p) in row.iter().enumerate() {
            if p == 0 {
                continue;
            }
            winner
                .entry(group_map[j])
                .and_modify(|w| {
                    if srow[j] > srow[*w] {
                        *w = j;
                    }
                })
                .or_insert(j);
        }
        for (j, p) in row.iter_mut().enumerate() {
            if *p != 0 && winner[&group_map[j]] != j {
                *p = 0;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Scores {
    /// Mean per-sample F1 (both sets empty counts as 1).
    pub sample: f64,
    /// F1 from pooled TP/FP/FN (0 when there is nothing to score).
    pub micro: f64,
    /// Unweighted mean of per-class F1 (a class with 0/0 scores 0).
    pub macro_: f64,
}

fn ratio_f1(tp: usize, fp: usize, fn_: usize, empty: f64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        empty
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn f1_scores(preds: ArrayView2<u8>, labels: ArrayView2<u8>) -> Result<F1Scores> {
    if preds.dim() != labels.dim() {
        return Err(Error::shape(format!(
            "predictions {:?} vs labels {:?}",
            preds.dim(),
            labels.dim()
        )));
    }
    let (n, c) = preds.dim();
    let mut per_class = vec![(0usize, 0usize, 0usize); c];
    let mut sample_sum = 0.0;
    for (prow, lrow) in preds.outer_iter().zip(labels.outer_iter()) {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (j, (&p, &y)) in prow.iter().zip(lrow.iter()).enumerate() {
            match (p != 0, y != 0) {
                (true, true) => {
                    tp += 1;
                    per_class[j].0 += 1;
                }
                (true, false) => {
                    fp += 1;
                    per_class[j].1 += 1;
                }
                (false, true) => {
                    fn_ += 1;
                    per_class[j].2 += 1;
                }
                (false, false) => {}
            }
        }
        sample_sum += ratio_f1(tp, fp, fn_, 1.0);
    }
    let (tp, fp, fn_) = per_class
        .iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let macro_ = if c == 0 {
        0.0
    } else {
        per_class.iter().map(|&(t, f, m)| ratio_f1(t, f, m, 0.0)).sum::<f64>() / c as f64
    };
    Ok(F1Scores {
        sample: if n == 0 { 0.0 } else { sample_sum / n as f64 },
        micro: ratio_f1(tp, fp, fn_, 0.0),
        macro_,
    })
}

/// Thresholds, optional group suppression, then F1 against `labels`.
pub fn evaluate(
    scores: &ScoreMatrix,
    labels: &LabelMatrix,
    config: &FusionConfig,
    suppress: bool,
) -> Result<F1Scores> {
    let labels = labels.aligned_to(&scores.ids)?;
    let mut preds = apply_thresholds(scores, config)?;
    if suppress {
        preds = group_suppress(scores, preds.view(), &config.group_map)?;
    }
    f1_scores(preds.view(), labels.labels.view())
}

#[cfg(test)]
mod tests;
