//! Hierarchical configurations and their realization as N-body initial
//! conditions.
//!
//! Orbit ordering follows the mobile diagrams:
//!
//! | topology  | orbits                      | bodies           |
//! |-----------|-----------------------------|------------------|
//! | `Triple`  | `b_in`, `b_out`             | m1, m2, m3       |
//! | `Quad2p2` | `b_in1`, `b_in2`, `b_out`   | m1, m2, m3, m4   |
//! | `Quad3p1` | `b_in`, `b_mid`, `b_out`    | m1, m2, m3, m4   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbit::{elements_to_rel_state, rel_state_to_elements, OrbitElements};
use crate::real::{Real, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Topology {
    #[serde(rename = "triple")]
    Triple,
    #[serde(rename = "2p2")]
    Quad2p2,
    #[serde(rename = "3p1")]
    Quad3p1,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Triple, Topology::Quad2p2, Topology::Quad3p1];

    pub fn n_bodies(self) -> usize {
        match self {
            Topology::Triple => 3,
            _ => 4,
        }
    }

    pub fn n_orbits(self) -> usize {
        self.n_bodies() - 1
    }

    pub fn is_quadruple(self) -> bool {
        self != Topology::Triple
    }

    /// Short tag used in file names and model headers.
    pub fn tag(self) -> &'static str {
        match self {
            Topology::Triple => "triple",
            Topology::Quad2p2 => "2p2",
            Topology::Quad3p1 => "3p1",
        }
    }

    /// Orbit names in storage order.
    pub fn orbit_names(self) -> &'static [&'static str] {
        match self {
            Topology::Triple => &["in", "out"],
            Topology::Quad2p2 => &["in1", "in2", "out"],
            Topology::Quad3p1 => &["in", "mid", "out"],
        }
    }

    /// The two member groups joined by each orbit, in orbit order. The
    /// relative state of an orbit points from the first group's barycenter
    /// to the second's.
    pub fn orbit_groups(self) -> &'static [(&'static [usize], &'static [usize])] {
        match self {
            Topology::Triple => &[(&[0], &[1]), (&[0, 1], &[2])],
            Topology::Quad2p2 => &[(&[0], &[1]), (&[2], &[3]), (&[0, 1], &[2, 3])],
            Topology::Quad3p1 => &[(&[0], &[1]), (&[0, 1], &[2]), (&[0, 1, 2], &[3])],
        }
    }

    /// Index of the outermost orbit.
    pub fn outer_orbit(self) -> usize {
        self.n_orbits() - 1
    }

    /// Pairs `(inner, outer)` of orbit indices where the inner orbit is
    /// nested directly inside the outer one.
    pub fn nesting(self) -> &'static [(usize, usize)] {
        match self {
            Topology::Triple => &[(0, 1)],
            Topology::Quad2p2 => &[(0, 2), (1, 2)],
            Topology::Quad3p1 => &[(0, 1), (1, 2)],
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triple" | "3" => Ok(Topology::Triple),
            "2p2" | "2+2" | "quad2p2" => Ok(Topology::Quad2p2),
            "3p1" | "3+1" | "quad3p1" => Ok(Topology::Quad3p1),
            other => Err(Error::Spec(format!("unknown topology `{other}`"))),
        }
    }
}

/// A hierarchical system: topology, stellar masses and one orbit per binary.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchySpec<T> {
    pub topology: Topology,
    pub masses: Vec<T>,
    pub orbits: Vec<OrbitElements<T>>,
}

impl<T: Real> HierarchySpec<T> {
    pub fn new(topology: Topology, masses: Vec<T>, orbits: Vec<OrbitElements<T>>) -> Result<Self> {
        let spec = Self { topology, masses, orbits };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.topology;
        if self.masses.len() != t.n_bodies() {
            return Err(Error::Spec(format!("{t} needs {} masses, got {}", t.n_bodies(), self.masses.len())));
        }
        if self.orbits.len() != t.n_orbits() {
            return Err(Error::Spec(format!("{t} needs {} orbits, got {}", t.n_orbits(), self.orbits.len())));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > T::zero() && m.is_finite())) {
            return Err(Error::Spec(format!("non-positive mass {m}")));
        }
        for o in &self.orbits {
            o.validate().map_err(|e| Error::Spec(e.to_string()))?;
        }
        for &(inner, outer) in t.nesting() {
            if !(self.orbits[inner].a < self.orbits[outer].a) {
                return Err(Error::Spec(format!(
                    "orbit {} (a = {}) is not inside orbit {} (a = {})",
                    t.orbit_names()[inner],
                    self.orbits[inner].a,
                    t.orbit_names()[outer],
                    self.orbits[outer].a
                )));
            }
        }
        Ok(())
    }

    pub fn group_mass(&self, group: &[usize]) -> T {
        group.iter().map(|&i| self.masses[i]).sum()
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }

    /// Total mass of the two groups joined by orbit `k`.
    pub fn orbit_mass(&self, k: usize) -> T {
        let (a, b) = self.topology.orbit_groups()[k];
        self.group_mass(a) + self.group_mass(b)
    }

    pub fn outer(&self) -> &OrbitElements<T> {
        &self.orbits[self.topology.outer_orbit()]
    }

    /// Keplerian period of the outermost orbit.
    pub fn outer_period(&self) -> T {
        let k = self.topology.outer_orbit();
        self.orbits[k].period(self.orbit_mass(k))
    }
}

/// Point masses with barycentric positions (AU) and velocities (AU/yr).
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianSystem<T> {
    pub masses: Vec<T>,
    pub positions: Vec<Vec3<T>>,
    pub velocities: Vec<Vec3<T>>,
}

impl<T: Real> CartesianSystem<T> {
    pub fn new(masses: Vec<T>, positions: Vec<Vec3<T>>, velocities: Vec<Vec3<T>>) -> Result<Self> {
        if masses.len() != positions.len() || masses.len() != velocities.len() {
            return Err(Error::Spec("masses, positions and velocities differ in length".into()));
        }
        Ok(Self { masses, positions, velocities })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }

    pub fn group_mass(&self, group: &[usize]) -> T {
        group.iter().map(|&i| self.masses[i]).sum()
    }

    /// Barycentric position and velocity of a subset of bodies.
    pub fn group_com(&self, group: &[usize]) -> (Vec3<T>, Vec3<T>) {
        let m = self.group_mass(group);
        let mut r = Vec3::zero();
        let mut v = Vec3::zero();
        for &i in group {
            r += self.positions[i] * self.masses[i];
            v += self.velocities[i] * self.masses[i];
        }
        (r / m, v / m)
    }

    pub fn center_of_mass(&self) -> (Vec3<T>, Vec3<T>) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.group_com(&all)
    }

    /// Shifts positions and velocities so the barycenter is at rest at the origin.
    pub fn to_barycentric(&mut self) {
        let (r, v) = self.center_of_mass();
        for p in &mut self.positions {
            *p -= r;
        }
        for q in &mut self.velocities {
            *q -= v;
        }
    }

    /// Relative state of group `b` with respect to group `a`.
    pub fn relative_state(&self, a: &[usize], b: &[usize]) -> (Vec3<T>, Vec3<T>) {
        let (ra, va) = self.group_com(a);
        let (rb, vb) = self.group_com(b);
        (rb - ra, vb - va)
    }

    /// Osculating elements of the orbit joining groups `a` and `b`.
    pub fn orbit_elements(&self, a: &[usize], b: &[usize]) -> Result<OrbitElements<T>> {
        let (r, v) = self.relative_state(a, b);
        rel_state_to_elements(r, v, self.group_mass(a) + self.group_mass(b))
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|v| v.is_finite())
    }
}

/// Places every body so that each orbit of `spec` has exactly its prescribed
/// osculating elements, then moves to the barycentric frame.
///
/// Each orbit displaces the members of its two groups in opposite directions
/// weighted by mass, which leaves the parent group's barycenter untouched;
/// orbit contributions therefore superpose in any order.
pub fn realize_system<T: Real>(spec: &HierarchySpec<T>) -> Result<CartesianSystem<T>> {
    spec.validate()?;
    let n = spec.topology.n_bodies();
    let mut positions = vec![Vec3::zero(); n];
    let mut velocities = vec![Vec3::zero(); n];

    for (k, &(ga, gb)) in spec.topology.orbit_groups().iter().enumerate() {
        let ma = spec.group_mass(ga);
        let mb = spec.group_mass(gb);
        let m = ma + mb;
        let (r, v) = elements_to_rel_state(&spec.orbits[k], m)?;
        for &i in ga {
            positions[i] -= r * (mb / m);
            velocities[i] -= v * (mb / m);
        }
        for &i in gb {
            positions[i] += r * (ma / m);
            velocities[i] += v * (ma / m);
        }
    }

    let mut sys = CartesianSystem { masses: spec.masses.clone(), positions, velocities };
    sys.to_barycentric();
    Ok(sys)
}

/// Osculating elements of every orbit of `spec`'s topology, measured on `sys`.
pub fn measure_orbits<T: Real>(topology: Topology, sys: &CartesianSystem<T>) -> Result<Vec<OrbitElements<T>>> {
    topology.orbit_groups().iter().map(|&(a, b)| sys.orbit_elements(a, b)).collect()
}
