//! Analytic stability diagnostics: the Mardling & Aarseth (2001) triple
//! criterion, its nested-triple extension to quadruples, and Lidov-Kozai
//! timescales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, Topology};
use crate::orbit::{mutual_inclination, period, OrbitElements};
use crate::real::Real;

/// A hierarchical triple, or a quadruple viewed as one by collapsing a
/// sub-binary into a point mass.
///
/// `q_in` and `e_in` describe the inner binary; they do not enter the MA01
/// test but complete the six-parameter triple feature set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleView<T> {
    pub m_in_total: T,
    pub m_out: T,
    pub a_in: T,
    pub a_out: T,
    pub e_in: T,
    pub e_out: T,
    /// Radians, in `[0, π]`.
    pub i_mut: T,
    pub q_in: T,
    pub q_out: T,
}

impl<T: Real> TripleView<T> {
    /// Builds a view from the two inner masses, the tertiary mass and the
    /// two orbits. `q_in` is folded into `(0, 1]`.
    pub fn from_orbits(m_a: T, m_b: T, m_out: T, inner: &OrbitElements<T>, outer: &OrbitElements<T>) -> Result<Self> {
        let m_in_total = m_a + m_b;
        let q = m_b / m_a;
        let view = Self {
            m_in_total,
            m_out,
            a_in: inner.a,
            a_out: outer.a,
            e_in: inner.e,
            e_out: outer.e,
            i_mut: mutual_inclination(inner.inc, inner.raan, outer.inc, outer.raan),
            q_in: if q > T::one() { q.recip() } else { q },
            q_out: m_out / m_in_total,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: T| x > T::zero() && x.is_finite();
        if !(pos(self.m_in_total) && pos(self.m_out) && pos(self.a_in) && pos(self.a_out)) {
            return Err(Error::Domain("triple view needs positive masses and semi-major axes".into()));
        }
        if !(self.e_out >= T::zero() && self.e_out < T::one()) {
            return Err(Error::Domain(format!("e_out {} outside [0, 1)", self.e_out)));
        }
        if !(self.i_mut >= T::zero() && self.i_mut <= T::PI()) {
            return Err(Error::Domain(format!("i_mut {} outside [0, π]", self.i_mut)));
        }
        Ok(())
    }

    pub fn alpha(&self) -> T {
        self.a_in / self.a_out
    }

    /// Outer periapsis in units of the inner semi-major axis.
    pub fn periapsis_ratio(&self) -> T {
        self.a_out * (T::one() - self.e_out) / self.a_in
    }

    /// Triple feature vector `[q_in, q_out, α, e_in, e_out, i_mut]`.
    pub fn features(&self) -> [T; 6] {
        [self.q_in, self.q_out, self.alpha(), self.e_in, self.e_out, self.i_mut]
    }

    pub fn inner_period(&self) -> T {
        period(self.a_in, self.m_in_total)
    }

    pub fn outer_period(&self) -> T {
        period(self.a_out, self.m_in_total + self.m_out)
    }
}

/// The single view of a triple.
pub fn triple_view<T: Real>(spec: &HierarchySpec<T>) -> Result<TripleView<T>> {
    if spec.topology != Topology::Triple {
        return Err(Error::Spec(format!("expected a triple, got {}", spec.topology)));
    }
    let m = &spec.masses;
    TripleView::from_orbits(m[0], m[1], m[2], &spec.orbits[0], &spec.orbits[1])
}

/// Decomposes a quadruple into its two nested triples.
///
/// 2+2: each inner binary with the other binary as a point-mass tertiary.
/// 3+1: the inner binary with the third star, and the middle orbit (inner
/// binary as a point mass) with the fourth star.
pub fn nested_triples<T: Real>(spec: &HierarchySpec<T>) -> Result<(TripleView<T>, TripleView<T>)> {
    let m = &spec.masses;
    let o = &spec.orbits;
    match spec.topology {
        Topology::Triple => Err(Error::Spec("a triple has no nested-triple decomposition".into())),
        Topology::Quad2p2 => Ok((
            TripleView::from_orbits(m[0], m[1], m[2] + m[3], &o[0], &o[2])?,
            TripleView::from_orbits(m[2], m[3], m[0] + m[1], &o[1], &o[2])?,
        )),
        Topology::Quad3p1 => Ok((
            TripleView::from_orbits(m[0], m[1], m[2], &o[0], &o[1])?,
            TripleView::from_orbits(m[0] + m[1], m[2], m[3], &o[1], &o[2])?,
        )),
    }
}

/// Critical outer periapsis over inner semi-major axis. `i_mut` in radians.
pub fn ma01_rp_crit_ratio<T: Real>(q_out: T, e_out: T, i_mut: T) -> Result<T> {
    if !(e_out >= T::zero() && e_out < T::one()) {
        return Err(Error::Domain(format!("e_out {e_out} outside [0, 1)")));
    }
    if !(q_out > T::zero()) {
        return Err(Error::Domain(format!("q_out {q_out} must be positive")));
    }
    let one = T::one();
    let bracket = (one + q_out) * (one + e_out) / (one - e_out).sqrt();
    Ok(T::lit(2.8) * bracket.powf(T::lit(0.4)) * (one - T::lit(0.3) * i_mut / T::PI()))
}

/// Strict inequality: a system exactly on the boundary is unstable.
pub fn ma01_triple_stable<T: Real>(view: &TripleView<T>) -> bool {
    match ma01_rp_crit_ratio(view.q_out, view.e_out, view.i_mut) {
        Ok(crit) => view.periapsis_ratio() > crit,
        Err(_) => false,
    }
}

/// A quadruple is stable only if both nested triples are.
pub fn ma01_quad_stable<T: Real>(spec: &HierarchySpec<T>) -> Result<bool> {
    let (t1, t2) = nested_triples(spec)?;
    Ok(ma01_triple_stable(&t1) && ma01_triple_stable(&t2))
}

/// MA01 verdict for any topology.
pub fn ma01_stable<T: Real>(spec: &HierarchySpec<T>) -> Result<bool> {
    match spec.topology {
        Topology::Triple => Ok(ma01_triple_stable(&triple_view(spec)?)),
        _ => ma01_quad_stable(spec),
    }
}

/// Lidov-Kozai timescale
/// `(P_out² / P_in) · ((m_in + m_out) / m_out) · (1 - e_out)^{3/2}`.
///
/// The eccentricity factor uses `1 - e_out`, not the more common
/// `1 - e_out²`.
pub fn lk_timescale<T: Real>(p_in: T, p_out: T, m_in_total: T, m_out: T, e_out: T) -> T {
    let one = T::one();
    p_out * p_out / p_in * ((m_in_total + m_out) / m_out) * (one - e_out).powf(T::lit(1.5))
}

pub fn lk_timescale_view<T: Real>(view: &TripleView<T>) -> T {
    lk_timescale(view.inner_period(), view.outer_period(), view.m_in_total, view.m_out, view.e_out)
}

/// Ratio of the LK timescales of the two nested triples.
pub fn lk_period_ratio<T: Real>(spec: &HierarchySpec<T>) -> Result<T> {
    let (t1, t2) = nested_triples(spec)?;
    Ok(lk_timescale_view(&t1) / lk_timescale_view(&t2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circular(a: f64) -> OrbitElements<f64> {
        OrbitElements::planar(a, 0.0)
    }

    fn view(a_in: f64, q_out: f64) -> TripleView<f64> {
        TripleView::from_orbits(1.0, 1.0, 2.0 * q_out, &circular(a_in), &circular(1.0)).unwrap()
    }

    #[test]
    fn rp_crit_examples() {
        let base = 2.8 * 2f64.powf(0.4);
        assert!((ma01_rp_crit_ratio(1.0, 0.0, 0.0).unwrap() - base).abs() < 1e-12);
        assert!((base - 3.694_622_150_164_1).abs() < 1e-12);
        assert!((ma01_rp_crit_ratio(1.0, 0.0, PI).unwrap() - 0.7 * base).abs() < 1e-12);
        assert!((ma01_rp_crit_ratio(1e-15f64, 0.0, 0.0).unwrap() - 2.8).abs() < 1e-12);
        assert!(ma01_rp_crit_ratio(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn triple_verdicts() {
        assert!(ma01_triple_stable(&view(0.2, 1.0)));
        assert!(!ma01_triple_stable(&view(0.3, 1.0)));
        // place the inner orbit exactly on the boundary
        let crit = ma01_rp_crit_ratio(1.0, 0.0, 0.0).unwrap();
        let mut v = view(0.2, 1.0);
        v.a_in = v.a_out / crit;
        if v.periapsis_ratio() == crit {
            assert!(!ma01_triple_stable(&v));
        }
        v.a_in = v.a_out / crit * (1.0 + 1e-12);
        assert!(!ma01_triple_stable(&v));
    }

    #[test]
    fn nested_views_masses() {
        let orbits = vec![circular(0.05), circular(0.05), circular(1.0)];
        let spec = HierarchySpec::new(Topology::Quad2p2, vec![1.0; 4], orbits.clone()).unwrap();
        let (t1, t2) = nested_triples(&spec).unwrap();
        assert_eq!(t1.q_out, 1.0);
        assert_eq!(t2.q_out, 1.0);

        let spec = HierarchySpec::new(Topology::Quad2p2, vec![2.0, 1.0, 1.0, 1.0], orbits).unwrap();
        let (t1, t2) = nested_triples(&spec).unwrap();
        assert_eq!(t1.m_out, 2.0);
        assert_eq!(t2.m_out, 3.0);

        let spec = HierarchySpec::new(
            Topology::Quad3p1,
            vec![1.0; 4],
            vec![circular(0.01), circular(0.1), circular(1.0)],
        )
        .unwrap();
        let (t1, t2) = nested_triples(&spec).unwrap();
        assert_eq!(t1.q_out, 0.5);
        assert!((t2.q_out - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t2.q_in, 0.5);
        assert_eq!(t2.a_in, 0.1);

        let triple = HierarchySpec::new(Topology::Triple, vec![1.0; 3], vec![circular(0.1), circular(1.0)]).unwrap();
        assert!(nested_triples(&triple).is_err());
    }

    #[test]
    fn quad_is_conjunction() {
        let mk = |a1, a2| {
            HierarchySpec::new(Topology::Quad2p2, vec![1.0; 4], vec![circular(a1), circular(a2), circular(1.0)]).unwrap()
        };
        assert!(ma01_quad_stable(&mk(0.1, 0.1)).unwrap());
        assert!(!ma01_quad_stable(&mk(0.1, 0.3)).unwrap());
        assert!(!ma01_quad_stable(&mk(0.3, 0.1)).unwrap());
        let (t1, t2) = nested_triples(&mk(0.2, 0.2)).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(ma01_quad_stable(&mk(0.2, 0.2)).unwrap(), ma01_triple_stable(&t1));
    }

    #[test]
    fn lk_examples() {
        assert_eq!(lk_timescale(1.0, 10.0, 2.0, 1.0, 0.0), 300.0);
        assert!(lk_timescale(1.0, 10.0, 2.0, 1.0, 1.0 - 1e-12) < 1e-10);
        let base = lk_timescale(1.0, 10.0, 2.0, 1.0, 0.3);
        assert!((lk_timescale(1.0f64, 20.0, 2.0, 1.0, 0.3) - 4.0 * base).abs() < 1e-9);
        assert!((lk_timescale(3.0f64, 30.0, 2.0, 1.0, 0.3) - 3.0 * base).abs() < 1e-9);
    }

    #[test]
    fn lk_ratio_3p1_composes() {
        // semi-major axes chosen so P_in = 1, P_mid = 10, P_out = 100 yr
        let a_for = |p: f64, m: f64| (p * p * m).cbrt();
        let spec = HierarchySpec::new(
            Topology::Quad3p1,
            vec![1.0; 4],
            vec![circular(a_for(1.0, 2.0)), circular(a_for(10.0, 3.0)), circular(a_for(100.0, 4.0))],
        )
        .unwrap();
        let expected = lk_timescale(1.0f64, 10.0, 2.0, 1.0, 0.0) / lk_timescale(10.0, 100.0, 3.0, 1.0, 0.0);
        assert!((expected - 0.075).abs() < 1e-15);
        assert!((lk_period_ratio(&spec).unwrap() - expected).abs() < 1e-9);

        let sym = HierarchySpec::new(Topology::Quad2p2, vec![1.0; 4], vec![circular(0.1), circular(0.1), circular(1.0)])
            .unwrap();
        assert!((lk_period_ratio(&sym).unwrap() - 1.0).abs() < 1e-14);
    }
}
