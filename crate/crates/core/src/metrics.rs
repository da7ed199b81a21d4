//! Confusion counts, classification scores and binned misclassification
//! fractions.
//!
//! Labels are booleans meaning "unstable". Stable is the positive class
//! for naming: a false stable system is truly unstable but predicted
//! stable.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::Topology;
use crate::params::feature_names;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub ts: u64,
    pub tu: u64,
    pub fs: u64,
    pub fu: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.ts + self.tu + self.fs + self.fu
    }

    pub fn add(&mut self, truth_unstable: bool, pred_unstable: bool) {
        match (truth_unstable, pred_unstable) {
            (false, false) => self.ts += 1,
            (true, true) => self.tu += 1,
            (true, false) => self.fs += 1,
            (false, true) => self.fu += 1,
        }
    }

    pub fn scores(&self) -> Scores {
        scores(self)
    }
}

pub fn confusion(truth_unstable: &[bool], pred_unstable: &[bool]) -> Result<ConfusionCounts> {
    if truth_unstable.len() != pred_unstable.len() {
        return Err(Error::Length(truth_unstable.len(), pred_unstable.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in truth_unstable.iter().zip(pred_unstable) {
        c.add(t, p);
    }
    Ok(c)
}

/// Overall score, precisions and recalls; `None` where the denominator is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scores {
    pub score: Option<f64>,
    pub precision_stable: Option<f64>,
    pub precision_unstable: Option<f64>,
    pub recall_stable: Option<f64>,
    pub recall_unstable: Option<f64>,
}

impl Scores {
    pub fn as_array(&self) -> [Option<f64>; 5] {
        [self.score, self.precision_stable, self.precision_unstable, self.recall_stable, self.recall_unstable]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    Scores {
        score: ratio(c.ts + c.tu, c.total()),
        precision_stable: ratio(c.ts, c.ts + c.fs),
        precision_unstable: ratio(c.tu, c.tu + c.fu),
        recall_stable: ratio(c.ts, c.ts + c.fu),
        recall_unstable: ratio(c.tu, c.tu + c.fs),
    }
}

/// Fraction of wrong verdicts, `None` for an empty set.
pub fn bad_fraction(c: &ConfusionCounts) -> Option<f64> {
    ratio(c.fs + c.fu, c.total())
}

/// Bins with fewer members are flagged as poorly constrained.
pub const LOW_COUNT: u64 = 30;
pub const DEFAULT_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinFraction {
    pub lo: f64,
    pub hi: f64,
    pub counts: ConfusionCounts,
    pub fs_fraction: Option<f64>,
    pub fu_fraction: Option<f64>,
    pub fs_se: Option<f64>,
    pub fu_se: Option<f64>,
    pub low_count: bool,
}

impl BinFraction {
    pub fn n(&self) -> u64 {
        self.counts.total()
    }

    pub fn bad_fraction(&self) -> Option<f64> {
        bad_fraction(&self.counts)
    }
}

/// Normal-approximation standard error of a binomial fraction.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// False-stable and false-unstable fractions in `n_bins` equal-width bins
/// of the named feature, spanning the observed range of that feature.
pub fn bad_fraction_bins(
    topology: Topology,
    features: &[Vec<f64>],
    truth_unstable: &[bool],
    pred_unstable: &[bool],
    parameter: &str,
    n_bins: usize,
) -> Result<Vec<BinFraction>> {
    let col = feature_names(topology)
        .iter()
        .position(|&n| n == parameter)
        .ok_or_else(|| Error::UnknownParameter(parameter.to_string()))?;
    if features.len() != truth_unstable.len() {
        return Err(Error::Length(features.len(), truth_unstable.len()));
    }
    if truth_unstable.len() != pred_unstable.len() {
        return Err(Error::Length(truth_unstable.len(), pred_unstable.len()));
    }
    if n_bins == 0 {
        return Err(Error::Domain("at least one bin is required".into()));
    }
    let mut values = Vec::with_capacity(features.len());
    for x in features {
        let v = *x.get(col).ok_or(Error::Dimension { expected: feature_names(topology).len(), got: x.len() })?;
        values.push(v);
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (lo, hi) = if values.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![ConfusionCounts::default(); n_bins];
    for ((&v, &t), &p) in values.iter().zip(truth_unstable).zip(pred_unstable) {
        let k = if width > 0.0 { (((v - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        counts[k].add(t, p);
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let n = c.total();
            let fs = ratio(c.fs, n);
            let fu = ratio(c.fu, n);
            BinFraction {
                lo: lo + width * k as f64,
                hi: if k + 1 == n_bins { hi } else { lo + width * (k + 1) as f64 },
                counts: c,
                fs_fraction: fs,
                fu_fraction: fu,
                fs_se: fs.map(|p| binomial_se(p, n)),
                fu_se: fu.map(|p| binomial_se(p, n)),
                low_count: n < LOW_COUNT,
            }
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}

/// One row per named classifier with its counts and scores.
pub fn write_scores_csv(path: &Path, rows: &[(String, ConfusionCounts)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "classifier",
        "ts",
        "tu",
        "fs",
        "fu",
        "score",
        "precision_stable",
        "precision_unstable",
        "recall_stable",
        "recall_unstable",
    ])?;
    for (name, c) in rows {
        let mut rec = vec![name.clone(), c.ts.to_string(), c.tu.to_string(), c.fs.to_string(), c.fu.to_string()];
        rec.extend(c.scores().as_array().into_iter().map(opt));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Binned fractions of several parameters in one long-format table.
pub fn write_bins_csv(path: &Path, sets: &[(String, Vec<BinFraction>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "lo", "hi", "n", "fs_fraction", "fu_fraction", "fs_se", "fu_se", "low_count"])?;
    for (parameter, bins) in sets {
        for b in bins {
            w.write_record([
                parameter.clone(),
                format!("{:?}", b.lo),
                format!("{:?}", b.hi),
                b.n().to_string(),
                opt(b.fs_fraction),
                opt(b.fu_fraction),
                opt(b.fs_se),
                opt(b.fu_se),
                b.low_count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
