//! Keplerian elements, Kepler's equation and two-body state conversions.
//!
//! Units throughout: AU, M_sun, yr, with G = 4π².

use crate::error::{Error, Result};
use crate::real::{wrap_two_pi, Real, Vec3};

/// Osculating elements of one binary orbit.
///
/// For states returned by [`rel_state_to_elements`] that are not bound,
/// `a` is negative (or infinite for a parabolic state), `e >= 1`, and
/// `mean_anomaly` carries the true anomaly instead. Use [`OrbitElements::is_bound`]
/// before treating the set as an ellipse.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OrbitElements<T> {
    pub a: T,
    pub e: T,
    pub inc: T,
    /// Longitude of the ascending node.
    pub raan: T,
    /// Argument of periapsis.
    pub argp: T,
    pub mean_anomaly: T,
}

impl<T: Real> OrbitElements<T> {
    pub fn new(a: T, e: T, inc: T, raan: T, argp: T, mean_anomaly: T) -> Self {
        Self { a, e, inc, raan, argp, mean_anomaly }
    }

    /// Coplanar orbit with all angles zero.
    pub fn planar(a: T, e: T) -> Self {
        Self::new(a, e, T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn is_bound(&self) -> bool {
        self.a > T::zero() && self.a.is_finite() && self.e < T::one()
    }

    pub fn periapsis(&self) -> T {
        self.a * (T::one() - self.e)
    }

    pub fn apoapsis(&self) -> T {
        self.a * (T::one() + self.e)
    }

    /// Orbital period in years for total mass `m_total` (Kepler's third law).
    pub fn period(&self, m_total: T) -> T {
        period(self.a, m_total)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a > T::zero()
            && self.a.is_finite()
            && self.e >= T::zero()
            && self.e < T::one()
            && self.inc.is_finite()
            && self.raan.is_finite()
            && self.argp.is_finite()
            && self.mean_anomaly.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("not a bound orbit: {self:?}")))
        }
    }
}

pub fn period<T: Real>(a: T, m_total: T) -> T {
    T::two_pi() * (a * a * a / (T::grav() * m_total)).sqrt()
}

/// Solves Kepler's equation `E - e sin E = M` for the eccentric anomaly.
///
/// `M` is reduced into `[0, 2π)` first and the returned `E` lies in the same
/// range. Newton's method is safeguarded by a bisection bracket, so the
/// iteration cannot leave `[0, 2π]` even for `e` close to one.
pub fn kepler_solve<T: Real>(mean_anomaly: T, e: T) -> Result<T> {
    if !(e >= T::zero() && e < T::one()) {
        return Err(Error::Domain(format!("eccentricity {e} outside [0, 1)")));
    }
    if !mean_anomaly.is_finite() {
        return Err(Error::Domain("non-finite mean anomaly".into()));
    }
    let m = wrap_two_pi(mean_anomaly);
    let tau = T::two_pi();
    let tol = T::epsilon() * T::lit(8.0) * (T::one() + m);

    let residual = |ea: T| ea - e * ea.sin() - m;

    let mut lo = T::zero();
    let mut hi = tau;
    let s = m.sin();
    let sign = if s > T::zero() {
        T::one()
    } else if s < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let mut ea = m + T::lit(0.85) * e * sign;
    if !(ea > lo && ea < hi) {
        ea = m;
    }

    for _ in 0..200 {
        let f = residual(ea);
        if f.abs() <= tol {
            return Ok(ea);
        }
        if f > T::zero() {
            hi = ea;
        } else {
            lo = ea;
        }
        let fp = T::one() - e * ea.cos();
        let next = ea - f / fp;
        ea = if next > lo && next < hi {
            next
        } else {
            (lo + hi) * T::lit(0.5)
        };
        if hi - lo <= T::epsilon() * tau {
            break;
        }
    }
    Ok(ea)
}

/// True anomaly from eccentric anomaly.
pub fn true_from_eccentric<T: Real>(ea: T, e: T) -> T {
    let (s, c) = ea.sin_cos();
    ((T::one() - e * e).sqrt() * s).atan2(c - e)
}

/// Relative position and velocity of the secondary with respect to the
/// primary for an elliptic orbit of total mass `m_total`.
pub fn elements_to_rel_state<T: Real>(el: &OrbitElements<T>, m_total: T) -> Result<(Vec3<T>, Vec3<T>)> {
    el.validate()?;
    if !(m_total > T::zero()) {
        return Err(Error::Domain(format!("total mass {m_total} must be positive")));
    }
    let e = el.e;
    let ea = kepler_solve(el.mean_anomaly, e)?;
    let (s, c) = ea.sin_cos();
    let beta = (T::one() - e * e).sqrt();
    let n = (T::grav() * m_total / (el.a * el.a * el.a)).sqrt();
    let denom = T::one() - e * c;

    let r_pf = Vec3::new(el.a * (c - e), el.a * beta * s, T::zero());
    let v_pf = Vec3::new(-el.a * n * s / denom, el.a * n * beta * c / denom, T::zero());

    let to_inertial = |v: Vec3<T>| v.rot_z(el.argp).rot_x(el.inc).rot_z(el.raan);
    Ok((to_inertial(r_pf), to_inertial(v_pf)))
}

/// Osculating elements of a relative two-body state.
///
/// Angles are reduced to their canonical ranges. Degenerate angles are fixed
/// by convention: `raan = 0` for equatorial orbits, `argp = 0` for circular
/// ones. Unbound states are returned with `e >= 1` (see [`OrbitElements`]).
pub fn rel_state_to_elements<T: Real>(r: Vec3<T>, v: Vec3<T>, m_total: T) -> Result<OrbitElements<T>> {
    let rn = r.norm();
    if !(rn > T::zero()) || !r.is_finite() || !v.is_finite() {
        return Err(Error::Singular(format!("relative separation {rn}")));
    }
    let mu = T::grav() * m_total;
    let h = r.cross(v);
    let hn = h.norm();
    if !(hn > T::zero()) {
        return Err(Error::Singular("radial trajectory with zero angular momentum".into()));
    }
    let energy = v.norm_sq() * T::lit(0.5) - mu / rn;
    let a = -mu / (T::lit(2.0) * energy);

    let e_vec = v.cross(h) / mu - r / rn;
    let e = e_vec.norm();

    let h_xy = (h.x * h.x + h.y * h.y).sqrt();
    let inc = h_xy.atan2(h.z);
    // Node direction is z × h = (-h_y, h_x, 0).
    let raan = if h_xy > T::epsilon() * hn { wrap_two_pi(h.x.atan2(-h.y)) } else { T::zero() };

    // Express r and e in the frame whose x axis is the node line and whose
    // z axis is along h; the orbit is then a prograde planar ellipse.
    let to_plane = |w: Vec3<T>| w.rot_z(-raan).rot_x(-inc);
    let r_p = to_plane(r);
    let e_p = to_plane(e_vec);

    let circular = e <= T::epsilon() * T::lit(16.0);
    let argp = if circular { T::zero() } else { wrap_two_pi(e_p.y.atan2(e_p.x)) };
    let nu = wrap_two_pi(r_p.y.atan2(r_p.x) - argp);

    let mean_anomaly = if e < T::one() && energy < T::zero() {
        let (sn, cn) = nu.sin_cos();
        let ea = ((T::one() - e * e).sqrt() * sn).atan2(e + cn);
        wrap_two_pi(ea - e * ea.sin())
    } else {
        nu
    };

    Ok(OrbitElements { a, e, inc, raan, argp, mean_anomaly })
}

/// Mutual inclination of two orbits from their inclinations and nodes.
pub fn mutual_inclination<T: Real>(i1: T, raan1: T, i2: T, raan2: T) -> T {
    let c = i1.cos() * i2.cos() + i1.sin() * i2.sin() * (raan1 - raan2).cos();
    c.max(-T::one()).min(T::one()).acos()
}
