//! Labeled datasets: the labeling driver, train/test splitting and CSV
//! storage.
//!
//! Rows are identified by their index in the per-topology row stream. The
//! labeled file holds non-timeout rows in index order and the timeout file
//! holds the rest, so an interrupted run can resume from the largest index
//! present in either. Wall-clock times go to a separate timing file to keep
//! the labeled file reproducible byte for byte.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ghost::{classify_stability_with, StabilityConfig, StabilityLabel, StabilityRecord};
use crate::hierarchy::{HierarchySpec, Topology};
use crate::orbit::OrbitElements;
use crate::params::{feature_names, SystemParams};
use crate::sampler::{sample_row, SampledRow, SamplerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRow {
    pub index: u64,
    pub seed: u64,
    pub params: SystemParams,
    pub record: StabilityRecord,
}

impl LabeledRow {
    /// Binary target: 1 for unstable, 0 for stable.
    pub fn target(&self) -> f64 {
        if self.record.label.is_unstable() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LabeledDataset {
    pub topology: Option<Topology>,
    pub rows: Vec<LabeledRow>,
    /// Rows excluded because their integration timed out or failed.
    pub timeouts: Vec<LabeledRow>,
}

impl LabeledDataset {
    pub fn timeout_fraction(&self) -> f64 {
        let total = self.rows.len() + self.timeouts.len();
        if total == 0 {
            0.0
        } else {
            self.timeouts.len() as f64 / total as f64
        }
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.params.features()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(LabeledRow::target).collect()
    }
}

/// Labels one sampled row.
pub fn label_row(row: &SampledRow, cfg: &StabilityConfig) -> Result<LabeledRow> {
    let record = classify_stability_with(row.params.spec(), cfg)?;
    Ok(LabeledRow { index: row.index, seed: row.seed, params: row.params.clone(), record })
}

/// Settings for building a dataset from a seeded row stream.
#[derive(Clone, Debug)]
pub struct LabelJob {
    pub topology: Topology,
    pub n_target: usize,
    pub master_seed: u64,
    pub thinning: bool,
    pub sampler: SamplerConfig,
    pub stability: StabilityConfig,
    /// Rows labeled per parallel batch; affects scheduling only.
    pub chunk_size: usize,
}

impl LabelJob {
    pub fn new(topology: Topology, n_target: usize, master_seed: u64) -> Self {
        Self {
            topology,
            n_target,
            master_seed,
            thinning: topology.is_quadruple(),
            sampler: SamplerConfig::default(),
            stability: StabilityConfig::default(),
            chunk_size: 64,
        }
    }

    /// Continues labeling after `done` (rows of both kinds already labeled,
    /// covering indices `0..k` without gaps) until `n_target` non-timeout
    /// rows exist. `sink` receives each batch of newly finished rows in index
    /// order before the next batch starts.
    pub fn run(
        &self,
        done: Vec<LabeledRow>,
        mut sink: impl FnMut(&[LabeledRow]) -> Result<()>,
    ) -> Result<LabeledDataset> {
        let mut ds = LabeledDataset { topology: Some(self.topology), ..Default::default() };
        let mut next = 0u64;
        for row in done {
            if row.index != next {
                return Err(Error::Domain(format!("existing rows have a gap at index {next}")));
            }
            next += 1;
            if row.record.label == StabilityLabel::Timeout {
                ds.timeouts.push(row);
            } else {
                ds.rows.push(row);
            }
        }
        ds.rows.truncate(self.n_target);

        let chunk = self.chunk_size.max(1) as u64;
        while ds.rows.len() < self.n_target {
            let batch: Vec<LabeledRow> = (next..next + chunk)
                .into_par_iter()
                .map(|i| {
                    let sampled = sample_row(self.topology, self.master_seed, i, self.thinning, &self.sampler)?;
                    label_row(&sampled, &self.stability)
                })
                .collect::<Result<_>>()?;
            let mut emitted = Vec::with_capacity(batch.len());
            for row in batch {
                if ds.rows.len() >= self.n_target {
                    break;
                }
                if row.record.label == StabilityLabel::Timeout {
                    ds.timeouts.push(row.clone());
                } else {
                    ds.rows.push(row.clone());
                }
                emitted.push(row);
            }
            next += chunk;
            sink(&emitted)?;
        }
        Ok(ds)
    }
}

/// Labels `n_target` non-timeout systems in memory.
pub fn build_dataset(topology: Topology, n_target: usize, master_seed: u64, cfg: &StabilityConfig) -> Result<LabeledDataset> {
    if n_target < 1 {
        return Err(Error::Domain("n_target must be positive".into()));
    }
    let job = LabelJob { stability: cfg.clone(), ..LabelJob::new(topology, n_target, master_seed) };
    job.run(Vec::new(), |_| Ok(()))
}

/// Seeded shuffle split into `(train, test)` with `round(frac · n)` rows in
/// the training part.
pub fn split<R: Clone>(rows: &[R], frac: f64, seed: u64) -> (Vec<R>, Vec<R>) {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((rows.len() as f64) * frac).round() as usize;
    let n_train = n_train.min(rows.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

// ---------------------------------------------------------------------------
// CSV

const RAW_ANGLES: [&str; 4] = ["inc", "raan", "argp", "ma"];

fn raw_columns(topology: Topology) -> Vec<String> {
    let mut cols: Vec<String> = (1..=topology.n_bodies()).map(|i| format!("m{i}")).collect();
    for name in topology.orbit_names() {
        cols.push(format!("a_{name}"));
        for angle in RAW_ANGLES {
            cols.push(format!("{angle}_{name}"));
        }
    }
    cols
}

const RECORD_COLUMNS: [&str; 5] = ["label", "t_trigger", "max_abs_delta", "n_outer_completed", "energy_drift"];

/// Header of a sampled-parameter file.
pub fn params_header(topology: Topology) -> Vec<String> {
    let mut h = vec!["index".to_string(), "seed".to_string()];
    h.extend(feature_names(topology).iter().map(|s| s.to_string()));
    h.extend(raw_columns(topology));
    h
}

/// Header of a labeled file.
pub fn labeled_header(topology: Topology) -> Vec<String> {
    let mut h = params_header(topology);
    h.extend(RECORD_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn params_fields(index: u64, seed: u64, p: &SystemParams) -> Vec<String> {
    let mut f = vec![index.to_string(), seed.to_string()];
    f.extend(p.features().into_iter().map(fmt_f64));
    let spec = p.spec();
    f.extend(spec.masses.iter().map(|&m| fmt_f64(m)));
    for o in &spec.orbits {
        f.extend([o.a, o.inc, o.raan, o.argp, o.mean_anomaly].map(fmt_f64));
    }
    f
}

fn labeled_fields(row: &LabeledRow) -> Vec<String> {
    let mut f = params_fields(row.index, row.seed, &row.params);
    let r = &row.record;
    f.push(r.label.as_str().to_string());
    f.push(r.t_trigger.map(fmt_f64).unwrap_or_default());
    f.push(fmt_f64(r.max_abs_delta));
    f.push(r.n_outer_completed.to_string());
    f.push(fmt_f64(r.energy_drift_final));
    f
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Corrupt { path: path.to_path_buf(), reason: reason.into() }
}

struct Columns {
    header: Vec<String>,
    path: PathBuf,
}

impl Columns {
    fn idx(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| corrupt(&self.path, format!("missing column `{name}`")))
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Result<&'r str> {
        let i = self.idx(name)?;
        rec.get(i).ok_or_else(|| corrupt(&self.path, format!("short row, no `{name}`")))
    }

    fn f64(&self, rec: &csv::StringRecord, name: &str) -> Result<f64> {
        let s = self.get(rec, name)?;
        s.trim().parse().map_err(|_| corrupt(&self.path, format!("bad number `{s}` in `{name}`")))
    }

    fn u64(&self, rec: &csv::StringRecord, name: &str) -> Result<u64> {
        let s = self.get(rec, name)?;
        s.trim().parse().map_err(|_| corrupt(&self.path, format!("bad integer `{s}` in `{name}`")))
    }
}

/// Guesses the topology from the feature columns of a header.
pub fn detect_topology(header: &[String]) -> Option<Topology> {
    [Topology::Quad2p2, Topology::Quad3p1, Topology::Triple]
        .into_iter()
        .find(|t| feature_names(*t).iter().all(|f| header.iter().any(|h| h == f)) && header.contains(&format!("m{}", t.n_bodies())))
}

fn read_spec(cols: &Columns, rec: &csv::StringRecord, topology: Topology) -> Result<HierarchySpec<f64>> {
    let masses = (1..=topology.n_bodies()).map(|i| cols.f64(rec, &format!("m{i}"))).collect::<Result<Vec<_>>>()?;
    let mut orbits = Vec::new();
    for name in topology.orbit_names() {
        orbits.push(OrbitElements::new(
            cols.f64(rec, &format!("a_{name}"))?,
            cols.f64(rec, &format!("e_{name}"))?,
            cols.f64(rec, &format!("inc_{name}"))?,
            cols.f64(rec, &format!("raan_{name}"))?,
            cols.f64(rec, &format!("argp_{name}"))?,
            cols.f64(rec, &format!("ma_{name}"))?,
        ));
    }
    HierarchySpec::new(topology, masses, orbits).map_err(|e| corrupt(&cols.path, e.to_string()))
}

fn open_reader(path: &Path) -> Result<(csv::Reader<File>, Columns)> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    Ok((rdr, Columns { header, path: path.to_path_buf() }))
}

pub fn write_params_csv(path: &Path, topology: Topology, rows: &[SampledRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(params_header(topology))?;
    for r in rows {
        w.write_record(params_fields(r.index, r.seed, &r.params))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_params_csv(path: &Path) -> Result<(Topology, Vec<SampledRow>)> {
    let (mut rdr, cols) = open_reader(path)?;
    let topology = detect_topology(&cols.header).ok_or_else(|| corrupt(path, "unrecognized header"))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let spec = read_spec(&cols, &rec, topology)?;
        rows.push(SampledRow {
            index: cols.u64(&rec, "index")?,
            seed: cols.u64(&rec, "seed")?,
            params: SystemParams::from_spec(&spec)?,
        });
    }
    Ok((topology, rows))
}

/// Writes labeled rows, replacing any existing file.
pub fn write_labeled_csv(path: &Path, topology: Topology, rows: &[LabeledRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(labeled_header(topology))?;
    for r in rows {
        w.write_record(labeled_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Appends labeled rows, writing the header first if the file is new or
/// empty.
pub fn append_labeled_csv(path: &Path, topology: Topology, rows: &[LabeledRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(labeled_header(topology))?;
    }
    for r in rows {
        w.write_record(labeled_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labeled_csv(path: &Path) -> Result<(Topology, Vec<LabeledRow>)> {
    let (mut rdr, cols) = open_reader(path)?;
    let topology = detect_topology(&cols.header).ok_or_else(|| corrupt(path, "unrecognized header"))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| corrupt(path, e.to_string()))?;
        let spec = read_spec(&cols, &rec, topology)?;
        let label: StabilityLabel = cols.get(&rec, "label")?.parse().map_err(|e: Error| corrupt(path, e.to_string()))?;
        let t_trigger = match cols.get(&rec, "t_trigger")?.trim() {
            "" => None,
            _ => Some(cols.f64(&rec, "t_trigger")?),
        };
        rows.push(LabeledRow {
            index: cols.u64(&rec, "index")?,
            seed: cols.u64(&rec, "seed")?,
            params: SystemParams::from_spec(&spec)?,
            record: StabilityRecord {
                label,
                t_trigger,
                max_abs_delta: cols.f64(&rec, "max_abs_delta")?,
                n_outer_completed: cols.u64(&rec, "n_outer_completed")? as usize,
                energy_drift_final: cols.f64(&rec, "energy_drift")?,
                wall_time: 0.0,
                numerical_failure: false,
            },
        });
    }
    Ok((topology, rows))
}

/// Appends `index,wall_time_s` lines.
pub fn append_timing(path: &Path, rows: &[LabeledRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "index,wall_time_s")?;
    }
    for r in rows {
        writeln!(f, "{},{}", r.index, r.record.wall_time)?;
    }
    Ok(())
}

/// File layout of a labeling run for one topology inside `dir`.
#[derive(Clone, Debug)]
pub struct DatasetFiles {
    pub labeled: PathBuf,
    pub timeouts: PathBuf,
    pub timing: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

impl DatasetFiles {
    pub fn new(dir: &Path, topology: Topology) -> Self {
        let t = topology.tag();
        Self {
            labeled: dir.join(format!("{t}_labeled.csv")),
            timeouts: dir.join(format!("{t}_timeouts.csv")),
            timing: dir.join(format!("{t}_timing.csv")),
            train: dir.join(format!("{t}_train.csv")),
            test: dir.join(format!("{t}_test.csv")),
        }
    }

    /// Rows already on disk, both kinds, sorted by index.
    pub fn existing(&self) -> Result<Vec<LabeledRow>> {
        let mut rows = Vec::new();
        for p in [&self.labeled, &self.timeouts] {
            if p.exists() && std::fs::metadata(p)?.len() > 0 {
                rows.extend(read_labeled_csv(p)?.1);
            }
        }
        rows.sort_by_key(|r| r.index);
        Ok(rows)
    }
}

/// Runs (or resumes) `job`, streaming rows to disk, and writes the train and
/// test splits once `n_target` rows exist.
pub fn label_to_dir(job: &LabelJob, dir: &Path, split_seed: u64) -> Result<LabeledDataset> {
    std::fs::create_dir_all(dir)?;
    let files = DatasetFiles::new(dir, job.topology);
    let existing = files.existing()?;
    let topology = job.topology;
    let ds = job.run(existing, |batch| {
        let (bad, good): (Vec<LabeledRow>, Vec<LabeledRow>) =
            batch.iter().cloned().partition(|r| r.record.label == StabilityLabel::Timeout);
        append_labeled_csv(&files.labeled, topology, &good)?;
        append_labeled_csv(&files.timeouts, topology, &bad)?;
        append_timing(&files.timing, batch)
    })?;
    // make sure both files exist even when one kind never occurred
    append_labeled_csv(&files.labeled, topology, &[])?;
    append_labeled_csv(&files.timeouts, topology, &[])?;
    let (train, test) = split(&ds.rows, 0.8, split_seed);
    write_labeled_csv(&files.train, topology, &train)?;
    write_labeled_csv(&files.test, topology, &test)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbody::IntegratorConfig;

    fn quick() -> StabilityConfig {
        StabilityConfig {
            n_outer: 2,
            integrator: IntegratorConfig { max_steps: Some(3_000), max_wall_seconds: None, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let rows: Vec<usize> = (0..1000).collect();
        let (tr, te) = split(&rows, 0.8, 5);
        assert_eq!((tr.len(), te.len()), (800, 200));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, rows);
        assert_eq!(split(&rows, 0.8, 5), (tr, te));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = build_dataset(Topology::Quad3p1, 3, 9, &quick()).unwrap();
        let path = dir.path().join("x.csv");
        write_labeled_csv(&path, Topology::Quad3p1, &ds.rows).unwrap();
        let (t, back) = read_labeled_csv(&path).unwrap();
        assert_eq!(t, Topology::Quad3p1);
        for (a, b) in ds.rows.iter().zip(&back) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.record.label, b.record.label);
            assert_eq!(a.record.max_abs_delta, b.record.max_abs_delta);
            assert_eq!(a.record.t_trigger, b.record.t_trigger);
        }

        let sampled: Vec<SampledRow> =
            ds.rows.iter().map(|r| SampledRow { index: r.index, seed: r.seed, params: r.params.clone() }).collect();
        let p = dir.path().join("p.csv");
        write_params_csv(&p, Topology::Quad3p1, &sampled).unwrap();
        assert_eq!(read_params_csv(&p).unwrap().1, sampled);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "index,seed,q_in1\n0,1,0.5\n").unwrap();
        assert!(read_labeled_csv(&path).is_err());
    }

    #[test]
    fn resumed_run_matches_single_run() {
        let one = tempfile::tempdir().unwrap();
        let two = tempfile::tempdir().unwrap();
        let mut job = LabelJob { stability: quick(), chunk_size: 2, ..LabelJob::new(Topology::Quad2p2, 5, 4) };
        label_to_dir(&job, one.path(), 1).unwrap();

        job.n_target = 2;
        label_to_dir(&job, two.path(), 1).unwrap();
        job.n_target = 5;
        job.chunk_size = 3;
        label_to_dir(&job, two.path(), 1).unwrap();

        let a = DatasetFiles::new(one.path(), Topology::Quad2p2);
        let b = DatasetFiles::new(two.path(), Topology::Quad2p2);
        assert_eq!(std::fs::read(&a.labeled).unwrap(), std::fs::read(&b.labeled).unwrap());
        assert_eq!(std::fs::read(&a.train).unwrap(), std::fs::read(&b.train).unwrap());
    }
}
