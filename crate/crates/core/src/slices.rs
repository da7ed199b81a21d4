//! Two-dimensional parameter-space slices built by splitting one star of a
//! stable coplanar triple into a new binary.
//!
//! A 2+2 slice splits the outer star: the triple's inner binary becomes
//! `in1` and the new binary `in2`. A 3+1 slice splits one inner star: the
//! triple's inner orbit becomes `mid` and the new binary `in`. Each grid
//! cell varies the new binary's semi-major axis ratio together with either
//! its mass ratio or its eccentricity. Orbits are coplanar, periapsis
//! aligned and start at periapsis.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ghost::{classify_stability_with, StabilityConfig, StabilityRecord};
use crate::hierarchy::{HierarchySpec, Topology};
use crate::metrics::{bad_fraction, ConfusionCounts};
use crate::orbit::OrbitElements;
use crate::params::{ma01_stable_from_features, nested_triple_features, SystemParams};
use crate::MLPModel;

/// Fixed parameters of the triple that is split.
///
/// For 2+2 the triple quantities are `α_in1-out, q_in1, q_out, e_in1,
/// e_out`; for 3+1 they are `α_mid-out, q_mid, q_out, e_mid, e_out`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceRow {
    pub name: &'static str,
    pub topology: Topology,
    pub alpha_tr: f64,
    pub q_in_tr: f64,
    pub q_out_tr: f64,
    pub e_in_tr: f64,
    pub e_out_tr: f64,
}

impl SliceRow {
    pub fn validate(&self) -> Result<()> {
        if !self.topology.is_quadruple() {
            return Err(Error::Spec("slices are defined for quadruples only".into()));
        }
        let bad = |what: &str, v: f64| Err(Error::Domain(format!("slice `{}`: {what} = {v}", self.name)));
        if !(self.alpha_tr > 0.0 && self.alpha_tr < 1.0) {
            return bad("alpha", self.alpha_tr);
        }
        if !(self.q_in_tr > 0.0 && self.q_in_tr.is_finite()) {
            return bad("q_in", self.q_in_tr);
        }
        if !(self.q_out_tr > 0.0 && self.q_out_tr.is_finite()) {
            return bad("q_out", self.q_out_tr);
        }
        for e in [self.e_in_tr, self.e_out_tr] {
            if !(0.0..=0.95).contains(&e) {
                return bad("eccentricity", e);
            }
        }
        Ok(())
    }

    /// Largest new-binary semi-major axis ratio for which a circular new
    /// binary stays inside the periapsis of its enclosing orbit.
    pub fn alpha_limit(&self) -> f64 {
        match self.topology {
            Topology::Quad3p1 => 1.0 - self.e_in_tr,
            _ => 1.0 - self.e_out_tr,
        }
    }
}

const fn row(name: &'static str, topology: Topology, alpha: f64, q_in: f64, q_out: f64, e_in: f64, e_out: f64) -> SliceRow {
    SliceRow { name, topology, alpha_tr: alpha, q_in_tr: q_in, q_out_tr: q_out, e_in_tr: e_in, e_out_tr: e_out }
}

pub fn slices_2p2() -> Vec<SliceRow> {
    let t = Topology::Quad2p2;
    vec![
        row("fiducial", t, 0.25, 1.0, 1.0, 0.0, 0.0),
        row("low_q_in1", t, 0.2, 1.0 / 9.0, 1.0, 0.0, 0.0),
        row("low_q_out", t, 0.25, 1.0, 1.0 / 9.0, 0.0, 0.0),
        row("high_e_in1", t, 0.175, 1.0, 1.0, 0.5, 0.0),
        row("high_e_out", t, 0.075, 1.0, 1.0, 0.0, 0.5),
    ]
}

pub fn slices_3p1() -> Vec<SliceRow> {
    let t = Topology::Quad3p1;
    vec![
        row("fiducial", t, 0.25, 0.5, 1.0 / 3.0, 0.0, 0.0),
        row("high_q_mid", t, 0.175, 3.5, 1.0 / 9.0, 0.0, 0.0),
        row("high_q_out", t, 0.15, 0.5, 7.0 / 3.0, 0.0, 0.0),
        row("low_q_mid", t, 0.2, 1.0 / 6.0, 3.0 / 7.0, 0.0, 0.0),
        row("low_q_out", t, 0.25, 0.5, 1.0 / 9.0, 0.0, 0.0),
        row("high_e_mid", t, 0.175, 0.5, 1.0 / 3.0, 0.5, 0.0),
        row("high_e_out", t, 0.075, 0.5, 1.0 / 3.0, 0.0, 0.5),
    ]
}

pub fn slice_rows(topology: Topology) -> Vec<SliceRow> {
    match topology {
        Topology::Quad2p2 => slices_2p2(),
        Topology::Quad3p1 => slices_3p1(),
        Topology::Triple => Vec::new(),
    }
}

pub fn find_slice(topology: Topology, name: &str) -> Result<SliceRow> {
    slice_rows(topology)
        .into_iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::UnknownParameter(format!("slice `{name}` for {topology}")))
}

/// Which new-binary quantity is varied alongside its semi-major axis ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Varied {
    MassRatio,
    Eccentricity,
}

impl Varied {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MassRatio => "q",
            Self::Eccentricity => "e",
        }
    }
}

impl std::str::FromStr for Varied {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q" | "mass" | "mass_ratio" => Ok(Self::MassRatio),
            "e" | "ecc" | "eccentricity" => Ok(Self::Eccentricity),
            _ => Err(Error::UnknownParameter(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceSpec {
    pub row: SliceRow,
    pub varied: Varied,
    pub n_alpha: usize,
    pub n_other: usize,
    pub alpha_range: (f64, f64),
    pub other_range: (f64, f64),
}

impl SliceSpec {
    /// Default ranges: α_new over `(0.01, limit)`, q over `(0.1, 1]` and e
    /// over `[0, 0.95)`, sampled at cell centers.
    pub fn new(row: SliceRow, varied: Varied, n_alpha: usize, n_other: usize) -> Self {
        let other_range = match varied {
            Varied::MassRatio => (0.1, 1.0),
            Varied::Eccentricity => (0.0, 0.95),
        };
        let alpha_range = (0.01, row.alpha_limit());
        Self { row, varied, n_alpha, n_other, alpha_range, other_range }
    }

    pub fn validate(&self) -> Result<()> {
        self.row.validate()?;
        if self.n_alpha == 0 || self.n_other == 0 {
            return Err(Error::Domain("grid dimensions must be positive".into()));
        }
        let (a0, a1) = self.alpha_range;
        if !(a0 > 0.0 && a0 < a1 && a1 <= 1.0) {
            return Err(Error::Domain(format!("alpha range ({a0}, {a1}) invalid")));
        }
        let (o0, o1) = self.other_range;
        let ok = match self.varied {
            Varied::MassRatio => o0 > 0.0 && o0 < o1,
            Varied::Eccentricity => o0 >= 0.0 && o0 < o1 && o1 <= 0.95,
        };
        if !ok {
            return Err(Error::Domain(format!("range ({o0}, {o1}) invalid for {}", self.varied.as_str())));
        }
        Ok(())
    }

    fn center(range: (f64, f64), n: usize, k: usize) -> f64 {
        range.0 + (k as f64 + 0.5) * (range.1 - range.0) / n as f64
    }

    pub fn alpha_at(&self, i: usize) -> f64 {
        Self::center(self.alpha_range, self.n_alpha, i)
    }

    pub fn other_at(&self, j: usize) -> f64 {
        Self::center(self.other_range, self.n_other, j)
    }

    /// System of cell `(i, j)`.
    pub fn cell_spec(&self, i: usize, j: usize) -> Result<HierarchySpec<f64>> {
        let alpha_new = self.alpha_at(i);
        let (q_new, e_new) = match self.varied {
            Varied::MassRatio => (self.other_at(j), 0.0),
            Varied::Eccentricity => (1.0, self.other_at(j)),
        };
        quadruple_from_split(&self.row, alpha_new, q_new, e_new)
    }
}

/// Quadruple built from a slice row and the new binary's parameters.
pub fn quadruple_from_split(row: &SliceRow, alpha_new: f64, q_new: f64, e_new: f64) -> Result<HierarchySpec<f64>> {
    row.validate()?;
    let r = row;
    match r.topology {
        Topology::Quad2p2 => {
            let (m1, m2) = (1.0, r.q_in_tr);
            let m34 = r.q_out_tr * (m1 + m2);
            let m3 = m34 / (1.0 + q_new);
            let m4 = q_new * m3;
            let orbits = vec![
                OrbitElements::planar(r.alpha_tr, r.e_in_tr),
                OrbitElements::planar(alpha_new, e_new),
                OrbitElements::planar(1.0, r.e_out_tr),
            ];
            HierarchySpec::new(Topology::Quad2p2, vec![m1, m2, m3, m4], orbits)
        }
        Topology::Quad3p1 => {
            let (m1, m2) = (1.0, q_new);
            let m3 = r.q_in_tr * (m1 + m2);
            let m4 = r.q_out_tr * (m1 + m2 + m3);
            let orbits = vec![
                OrbitElements::planar(alpha_new * r.alpha_tr, e_new),
                OrbitElements::planar(r.alpha_tr, r.e_in_tr),
                OrbitElements::planar(1.0, r.e_out_tr),
            ];
            HierarchySpec::new(Topology::Quad3p1, vec![m1, m2, m3, m4], orbits)
        }
        Topology::Triple => Err(Error::Spec("slices are defined for quadruples only".into())),
    }
}

/// A stability classifier that can be compared against the N-body label.
#[derive(Clone, Copy, Debug)]
pub enum Classifier<'a> {
    /// MA01 applied to both nested triples.
    Ma01,
    /// Triple network applied to both nested triples; stable only if both are.
    TripleMlp(&'a MLPModel),
    /// Network trained on the quadruple topology itself.
    QuadMlp(&'a MLPModel),
}

impl Classifier<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ma01 => "ma01",
            Self::TripleMlp(_) => "triple_mlp",
            Self::QuadMlp(_) => "quad_mlp",
        }
    }

    pub fn predict_unstable(&self, topology: Topology, features: &[f64]) -> Result<bool> {
        match self {
            Self::Ma01 => ma01_stable_from_features(topology, features).map(|s| !s),
            Self::QuadMlp(m) => m.predict_unstable(features),
            Self::TripleMlp(m) => {
                if topology == Topology::Triple {
                    return m.predict_unstable(features);
                }
                let (t1, t2) = nested_triple_features(topology, features)?;
                Ok(m.predict_unstable(&t1)? || m.predict_unstable(&t2)?)
            }
        }
    }
}

impl fmt::Display for Classifier<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceCell {
    pub i: usize,
    pub j: usize,
    pub alpha_new: f64,
    pub other: f64,
    pub params: SystemParams,
    pub record: StabilityRecord,
    /// Per-classifier "unstable" verdicts, in classifier order.
    pub predictions: Vec<bool>,
}

impl SliceCell {
    pub fn is_timeout(&self) -> bool {
        self.record.label == crate::ghost::StabilityLabel::Timeout
    }

    pub fn truth_unstable(&self) -> Option<bool> {
        (!self.is_timeout()).then(|| self.record.label.is_unstable())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceGrid {
    pub spec: SliceSpec,
    pub classifiers: Vec<String>,
    /// Row-major over `(i, j)`: `i` indexes α_new.
    pub cells: Vec<SliceCell>,
}

impl SliceGrid {
    pub fn cell(&self, i: usize, j: usize) -> &SliceCell {
        &self.cells[i * self.spec.n_other + j]
    }

    pub fn timeouts(&self) -> usize {
        self.cells.iter().filter(|c| c.is_timeout()).count()
    }

    pub fn confusion(&self, k: usize) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for cell in &self.cells {
            if let Some(t) = cell.truth_unstable() {
                c.add(t, cell.predictions[k]);
            }
        }
        c
    }
}

pub fn classify_cell(
    spec: &SliceSpec,
    i: usize,
    j: usize,
    classifiers: &[Classifier<'_>],
    cfg: &StabilityConfig,
) -> Result<SliceCell> {
    let sys = spec.cell_spec(i, j)?;
    let params = SystemParams::from_spec(&sys)?;
    let features = params.features();
    let predictions =
        classifiers.iter().map(|c| c.predict_unstable(sys.topology, &features)).collect::<Result<Vec<_>>>()?;
    let record = classify_stability_with(&sys, cfg)?;
    Ok(SliceCell { i, j, alpha_new: spec.alpha_at(i), other: spec.other_at(j), params, record, predictions })
}

/// Labels every cell and records each classifier's verdict. Cells run in
/// parallel; each depends only on its own indices.
pub fn slice_grid(spec: &SliceSpec, classifiers: &[Classifier<'_>], cfg: &StabilityConfig) -> Result<SliceGrid> {
    spec.validate()?;
    let n_other = spec.n_other;
    let cells = (0..spec.n_alpha * n_other)
        .into_par_iter()
        .map(|k| classify_cell(spec, k / n_other, k % n_other, classifiers, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceGrid {
        spec: spec.clone(),
        classifiers: classifiers.iter().map(|c| c.name().to_string()).collect(),
        cells,
    })
}

/// Wrongly classified fraction of the non-timeout cells, per classifier;
/// `None` when every cell timed out.
pub fn bad_fraction_by_slice(grid: &SliceGrid) -> Vec<Option<f64>> {
    (0..grid.classifiers.len()).map(|k| bad_fraction(&grid.confusion(k))).collect()
}

pub fn write_grid_csv(path: &Path, grid: &SliceGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["slice", "varied", "i", "j", "alpha_new", "other", "label", "t_trigger"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(grid.classifiers.iter().map(|c| format!("{c}_unstable")));
    w.write_record(&header)?;
    for c in &grid.cells {
        let mut rec = vec![
            grid.spec.row.name.to_string(),
            grid.spec.varied.as_str().to_string(),
            c.i.to_string(),
            c.j.to_string(),
            format!("{:?}", c.alpha_new),
            format!("{:?}", c.other),
            c.record.label.as_str().to_string(),
            c.record.t_trigger.map_or_else(String::new, |t| format!("{t:?}")),
        ];
        rec.extend(c.predictions.iter().map(|p| u8::from(*p).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
