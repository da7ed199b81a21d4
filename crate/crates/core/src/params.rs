//! Named parameter sets for triples and quadruples and their feature
//! vectors.
//!
//! Feature order is fixed and shared with the classifiers:
//!
//! * 2+2: `q_in1 q_in2 q_out alpha_in1_out alpha_in2_out e_in1 e_in2 e_out
//!   i_in1_in2 i_in1_out i_in2_out`
//! * 3+1: `q_in q_mid q_out alpha_in_mid alpha_mid_out e_in e_mid e_out
//!   i_in_mid i_in_out i_mid_out`
//! * triple: `q_in q_out alpha e_in e_out i_mut`
//!
//! Inclinations are mutual inclinations in radians. Other angles are kept
//! only in the raw system description.

use crate::criteria::ma01_rp_crit_ratio;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, Topology};
use crate::orbit::mutual_inclination;

pub const FEATURES_2P2: [&str; 11] = [
    "q_in1",
    "q_in2",
    "q_out",
    "alpha_in1_out",
    "alpha_in2_out",
    "e_in1",
    "e_in2",
    "e_out",
    "i_in1_in2",
    "i_in1_out",
    "i_in2_out",
];

pub const FEATURES_3P1: [&str; 11] = [
    "q_in",
    "q_mid",
    "q_out",
    "alpha_in_mid",
    "alpha_mid_out",
    "e_in",
    "e_mid",
    "e_out",
    "i_in_mid",
    "i_in_out",
    "i_mid_out",
];

pub const FEATURES_TRIPLE: [&str; 6] = ["q_in", "q_out", "alpha", "e_in", "e_out", "i_mut"];

pub fn feature_names(topology: Topology) -> &'static [&'static str] {
    match topology {
        Topology::Triple => &FEATURES_TRIPLE,
        Topology::Quad2p2 => &FEATURES_2P2,
        Topology::Quad3p1 => &FEATURES_3P1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadParams2p2 {
    pub q_in1: f64,
    pub q_in2: f64,
    pub q_out: f64,
    pub alpha_in1_out: f64,
    pub alpha_in2_out: f64,
    pub e_in1: f64,
    pub e_in2: f64,
    pub e_out: f64,
    pub i_in1_in2: f64,
    pub i_in1_out: f64,
    pub i_in2_out: f64,
    pub raw: HierarchySpec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadParams3p1 {
    pub q_in: f64,
    pub q_mid: f64,
    pub q_out: f64,
    pub alpha_in_mid: f64,
    pub alpha_mid_out: f64,
    pub e_in: f64,
    pub e_mid: f64,
    pub e_out: f64,
    pub i_in_mid: f64,
    pub i_in_out: f64,
    pub i_mid_out: f64,
    pub raw: HierarchySpec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripleParams {
    pub q_in: f64,
    pub q_out: f64,
    pub alpha: f64,
    pub e_in: f64,
    pub e_out: f64,
    pub i_mut: f64,
    pub raw: HierarchySpec<f64>,
}

impl QuadParams2p2 {
    pub fn from_spec(spec: &HierarchySpec<f64>) -> Result<Self> {
        expect(spec, Topology::Quad2p2)?;
        let m = &spec.masses;
        let o = &spec.orbits;
        let imut = |a: usize, b: usize| mutual_inclination(o[a].inc, o[a].raan, o[b].inc, o[b].raan);
        Ok(Self {
            q_in1: m[1] / m[0],
            q_in2: m[3] / m[2],
            q_out: (m[2] + m[3]) / (m[0] + m[1]),
            alpha_in1_out: o[0].a / o[2].a,
            alpha_in2_out: o[1].a / o[2].a,
            e_in1: o[0].e,
            e_in2: o[1].e,
            e_out: o[2].e,
            i_in1_in2: imut(0, 1),
            i_in1_out: imut(0, 2),
            i_in2_out: imut(1, 2),
            raw: spec.clone(),
        })
    }

    pub fn features(&self) -> [f64; 11] {
        [
            self.q_in1,
            self.q_in2,
            self.q_out,
            self.alpha_in1_out,
            self.alpha_in2_out,
            self.e_in1,
            self.e_in2,
            self.e_out,
            self.i_in1_in2,
            self.i_in1_out,
            self.i_in2_out,
        ]
    }

    /// Checks the labeling conventions: `m2 ≤ m1`, `m4 ≤ m3`,
    /// `m1 + m2 ≥ m3 + m4`, plus basic ranges.
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("q_in1", self.q_in1), ("q_in2", self.q_in2), ("q_out", self.q_out)] {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Domain(format!("{name} = {q} outside (0, 1]")));
            }
        }
        check_common(&self.features()[3..], &self.raw)
    }
}

impl QuadParams3p1 {
    pub fn from_spec(spec: &HierarchySpec<f64>) -> Result<Self> {
        expect(spec, Topology::Quad3p1)?;
        let m = &spec.masses;
        let o = &spec.orbits;
        let imut = |a: usize, b: usize| mutual_inclination(o[a].inc, o[a].raan, o[b].inc, o[b].raan);
        Ok(Self {
            q_in: m[1] / m[0],
            q_mid: m[2] / (m[0] + m[1]),
            q_out: m[3] / (m[0] + m[1] + m[2]),
            alpha_in_mid: o[0].a / o[1].a,
            alpha_mid_out: o[1].a / o[2].a,
            e_in: o[0].e,
            e_mid: o[1].e,
            e_out: o[2].e,
            i_in_mid: imut(0, 1),
            i_in_out: imut(0, 2),
            i_mid_out: imut(1, 2),
            raw: spec.clone(),
        })
    }

    pub fn features(&self) -> [f64; 11] {
        [
            self.q_in,
            self.q_mid,
            self.q_out,
            self.alpha_in_mid,
            self.alpha_mid_out,
            self.e_in,
            self.e_mid,
            self.e_out,
            self.i_in_mid,
            self.i_in_out,
            self.i_mid_out,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_in > 0.0 && self.q_in <= 1.0) {
            return Err(Error::Domain(format!("q_in = {} outside (0, 1]", self.q_in)));
        }
        if !(self.q_mid > 0.0 && self.q_out > 0.0) {
            return Err(Error::Domain("q_mid and q_out must be positive".into()));
        }
        check_common(&self.features()[3..], &self.raw)
    }
}

impl TripleParams {
    pub fn from_spec(spec: &HierarchySpec<f64>) -> Result<Self> {
        expect(spec, Topology::Triple)?;
        let m = &spec.masses;
        let o = &spec.orbits;
        Ok(Self {
            q_in: m[1] / m[0],
            q_out: m[2] / (m[0] + m[1]),
            alpha: o[0].a / o[1].a,
            e_in: o[0].e,
            e_out: o[1].e,
            i_mut: mutual_inclination(o[0].inc, o[0].raan, o[1].inc, o[1].raan),
            raw: spec.clone(),
        })
    }

    pub fn features(&self) -> [f64; 6] {
        [self.q_in, self.q_out, self.alpha, self.e_in, self.e_out, self.i_mut]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_in > 0.0 && self.q_in <= 1.0 && self.q_out > 0.0) {
            return Err(Error::Domain("triple mass ratios out of range".into()));
        }
        let f = self.features();
        check_common(&[f[2], f[3], f[4], f[5]], &self.raw)
    }
}

fn expect(spec: &HierarchySpec<f64>, topology: Topology) -> Result<()> {
    if spec.topology != topology {
        return Err(Error::Spec(format!("expected {topology}, got {}", spec.topology)));
    }
    spec.validate()
}

/// Ranges shared by every topology, checked on the raw orbits and on the
/// slice of features starting at the first `alpha`.
fn check_common(tail: &[f64], raw: &HierarchySpec<f64>) -> Result<()> {
    if tail.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite feature".into()));
    }
    for o in &raw.orbits {
        if !(o.e >= 0.0 && o.e <= 0.95) {
            return Err(Error::Domain(format!("eccentricity {} outside [0, 0.95]", o.e)));
        }
    }
    for &(inner, outer) in raw.topology.nesting() {
        let (i, o) = (&raw.orbits[inner], &raw.orbits[outer]);
        if !(i.a < o.a) {
            return Err(Error::Domain("semi-major axis ratio must be below 1".into()));
        }
    }
    Ok(())
}

/// A parameter set of any topology.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemParams {
    Triple(TripleParams),
    Quad2p2(QuadParams2p2),
    Quad3p1(QuadParams3p1),
}

impl SystemParams {
    pub fn from_spec(spec: &HierarchySpec<f64>) -> Result<Self> {
        Ok(match spec.topology {
            Topology::Triple => Self::Triple(TripleParams::from_spec(spec)?),
            Topology::Quad2p2 => Self::Quad2p2(QuadParams2p2::from_spec(spec)?),
            Topology::Quad3p1 => Self::Quad3p1(QuadParams3p1::from_spec(spec)?),
        })
    }

    pub fn topology(&self) -> Topology {
        self.spec().topology
    }

    pub fn spec(&self) -> &HierarchySpec<f64> {
        match self {
            Self::Triple(p) => &p.raw,
            Self::Quad2p2(p) => &p.raw,
            Self::Quad3p1(p) => &p.raw,
        }
    }

    pub fn features(&self) -> Vec<f64> {
        match self {
            Self::Triple(p) => p.features().to_vec(),
            Self::Quad2p2(p) => p.features().to_vec(),
            Self::Quad3p1(p) => p.features().to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Triple(p) => p.validate(),
            Self::Quad2p2(p) => p.validate(),
            Self::Quad3p1(p) => p.validate(),
        }
    }
}

/// The two nested-triple feature vectors of a quadruple feature vector.
///
/// Mirrors [`crate::criteria::nested_triples`]: the inner mass ratio of
/// each view is folded into `(0, 1]`.
pub fn nested_triple_features(topology: Topology, x: &[f64]) -> Result<([f64; 6], [f64; 6])> {
    if x.len() != 11 {
        return Err(Error::Dimension { expected: 11, got: x.len() });
    }
    let fold = |q: f64| if q > 1.0 { 1.0 / q } else { q };
    match topology {
        Topology::Triple => Err(Error::Spec("a triple has no nested-triple decomposition".into())),
        Topology::Quad2p2 => Ok((
            [fold(x[0]), x[2], x[3], x[5], x[7], x[9]],
            [fold(x[1]), 1.0 / x[2], x[4], x[6], x[7], x[10]],
        )),
        Topology::Quad3p1 => Ok((
            [fold(x[0]), x[1], x[3], x[5], x[6], x[8]],
            [fold(x[1]), x[2], x[4], x[6], x[7], x[10]],
        )),
    }
}

/// MA01 verdict for a triple feature vector `[q_in, q_out, α, e_in, e_out, i]`.
pub fn ma01_stable_features(t: &[f64; 6]) -> bool {
    let [_, q_out, alpha, _, e_out, i_mut] = *t;
    match ma01_rp_crit_ratio(q_out, e_out, i_mut) {
        Ok(crit) => (1.0 - e_out) / alpha > crit,
        Err(_) => false,
    }
}

/// MA01 verdict from a feature vector of any topology.
pub fn ma01_stable_from_features(topology: Topology, x: &[f64]) -> Result<bool> {
    if topology == Topology::Triple {
        let t: [f64; 6] = x.try_into().map_err(|_| Error::Dimension { expected: 6, got: x.len() })?;
        return Ok(ma01_stable_features(&t));
    }
    let (t1, t2) = nested_triple_features(topology, x)?;
    Ok(ma01_stable_features(&t1) && ma01_stable_features(&t2))
}
