//! Ghost-system stability labeling.
//!
//! A system is integrated alongside a copy whose designated inner orbit is
//! widened by a tiny offset. Chaotic systems amplify that offset; the
//! relative difference of the two inner semi-major axes, δ(t), is sampled on
//! the shared output grid and compared against a threshold.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{realize_system, CartesianSystem, HierarchySpec, Topology};
use crate::nbody::{output_grid, total_energy, Advance, Ias15, IntegratorConfig};
use crate::real::Real;

/// Which inner binary of a 2+2 system receives the ghost offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GhostRule {
    /// The binary with the smaller total mass (ties go to the first binary).
    #[default]
    SmallerMass,
    /// The binary with the smaller binding energy `G m_a m_b / 2a`.
    WeakerBinding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StabilityLabel {
    Stable,
    UnstableUnbound,
    UnstableChaotic,
    Timeout,
}

impl StabilityLabel {
    pub fn is_unstable(self) -> bool {
        matches!(self, Self::UnstableUnbound | Self::UnstableChaotic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::UnstableUnbound => "unstable_unbound",
            Self::UnstableChaotic => "unstable_chaotic",
            Self::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for StabilityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StabilityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "stable" => Self::Stable,
            "unstable_unbound" => Self::UnstableUnbound,
            "unstable_chaotic" => Self::UnstableChaotic,
            "timeout" => Self::Timeout,
            other => return Err(Error::Domain(format!("unknown label `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub label: StabilityLabel,
    /// First unbound detection or first threshold crossing, in years.
    pub t_trigger: Option<f64>,
    pub max_abs_delta: f64,
    pub n_outer_completed: usize,
    pub energy_drift_final: f64,
    pub wall_time: f64,
    /// Set when a timeout was caused by an integrator failure rather than
    /// the wall-clock or step budget.
    pub numerical_failure: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub n_outer: usize,
    pub delta_threshold: f64,
    /// Offset added to the designated inner semi-major axis (AU).
    pub ghost_offset: f64,
    /// Escape distance in units of the initial outer semi-major axis.
    pub escape_factor: f64,
    pub ghost_rule: GhostRule,
    /// Stop at the first chaos trigger instead of finishing the run. Saves
    /// most of the cost of unstable systems; a system that would later have
    /// escaped is then reported as chaotic rather than unbound.
    pub early_stop: bool,
    pub integrator: IntegratorConfig,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_outer: 100,
            delta_threshold: 1e-2,
            ghost_offset: 1e-6,
            escape_factor: 20.0,
            ghost_rule: GhostRule::SmallerMass,
            early_stop: true,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Index of the orbit that receives the ghost offset.
pub fn ghost_orbit<T: Real>(spec: &HierarchySpec<T>, rule: GhostRule) -> usize {
    match spec.topology {
        Topology::Triple | Topology::Quad3p1 => 0,
        Topology::Quad2p2 => {
            let m = &spec.masses;
            let second = match rule {
                GhostRule::SmallerMass => m[2] + m[3] < m[0] + m[1],
                GhostRule::WeakerBinding => {
                    m[2] * m[3] / spec.orbits[1].a < m[0] * m[1] / spec.orbits[0].a
                }
            };
            usize::from(second)
        }
    }
}

/// Copy of `spec` with the designated inner orbit widened by `offset` AU.
pub fn make_ghost_with<T: Real>(spec: &HierarchySpec<T>, rule: GhostRule, offset: T) -> HierarchySpec<T> {
    let mut ghost = spec.clone();
    ghost.orbits[ghost_orbit(spec, rule)].a += offset;
    ghost
}

pub fn make_ghost<T: Real>(spec: &HierarchySpec<T>) -> HierarchySpec<T> {
    make_ghost_with(spec, GhostRule::SmallerMass, T::lit(1e-6))
}

/// Relative divergence `(a_orig - a_ghost) / a_orig`, or `None` when the
/// original orbit is not bound at this instant.
pub fn delta<T: Real>(a_orig: T, a_ghost: T) -> Option<T> {
    if a_orig > T::zero() && a_orig.is_finite() && a_ghost.is_finite() {
        Some((a_orig - a_ghost) / a_orig)
    } else {
        None
    }
}

/// Osculating semi-major axis between two single bodies; negative when the
/// pair is unbound.
fn pair_sma<T: Real>(ias: &Ias15<T>, masses: &[T], i: usize, j: usize) -> T {
    let (r, v) = ias.pair_state(i, j);
    let gm = T::grav() * (masses[i] + masses[j]);
    T::one() / (T::lit(2.0) / r.norm() - v.norm_sq() / gm)
}

/// True if some bipartition of the bodies is energetically unbound, farther
/// apart than `escape_radius`, and receding.
pub fn is_unbound_at<T: Real>(sys: &CartesianSystem<T>, escape_radius: T) -> bool {
    let n = sys.len();
    if n < 2 || n > 16 {
        return false;
    }
    let g = T::grav();
    // each bipartition once: body n-1 always sits in the second group
    for mask in 1u32..(1 << (n - 1)) {
        let a: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let b: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) == 0).collect();
        let (r, v) = sys.relative_state(&a, &b);
        let sep = r.norm();
        if !(sep > escape_radius) || r.dot(v) <= T::zero() {
            continue;
        }
        let ma = sys.group_mass(&a);
        let mb = sys.group_mass(&b);
        let mu = ma * mb / (ma + mb);
        let energy = T::lit(0.5) * mu * v.norm_sq() - g * ma * mb / sep;
        if energy > T::zero() {
            return true;
        }
    }
    false
}

/// Unbound test with the escape radius tied to the initial outer orbit.
pub fn is_unbound<T: Real>(snapshot: &CartesianSystem<T>, spec: &HierarchySpec<T>) -> bool {
    is_unbound_at(snapshot, T::lit(20.0) * spec.outer().a)
}

enum Stop {
    Finished,
    Visitor,
    Timeout { numerical: bool },
}

/// Per-integration wall budget tracking for lockstep runs.
struct Budget {
    cap: Option<Duration>,
    used: Duration,
}

impl Budget {
    fn new(cap: Option<f64>) -> Self {
        Self { cap: cap.map(Duration::from_secs_f64), used: Duration::ZERO }
    }

    fn advance<T: Real>(&mut self, ias: &mut Ias15<T>, t: T, max_steps: Option<u64>) -> Result<Advance> {
        let start = Instant::now();
        let deadline = self.cap.map(|c| start + c.saturating_sub(self.used));
        let r = ias.advance_to(t, deadline, max_steps);
        self.used += start.elapsed();
        r
    }
}

/// Integrates one or two systems on a common grid, calling `visit` after
/// each grid time with the original and (if present) ghost integrators.
fn lockstep<T: Real>(
    orig: &CartesianSystem<T>,
    ghost: Option<&CartesianSystem<T>>,
    grid: &[T],
    cfg: &IntegratorConfig,
    mut visit: impl FnMut(T, &Ias15<T>, Option<&Ias15<T>>) -> ControlFlow<()>,
) -> Result<(Stop, Ias15<T>)> {
    let mut a = Ias15::new(orig, cfg)?;
    let mut b = ghost.map(|g| Ias15::new(g, cfg)).transpose()?;
    let mut budget_a = Budget::new(cfg.max_wall_seconds);
    let mut budget_b = Budget::new(cfg.max_wall_seconds);

    if let ControlFlow::Break(()) = visit(grid[0], &a, b.as_ref()) {
        return Ok((Stop::Visitor, a));
    }
    for &t in &grid[1..] {
        let res = budget_a.advance(&mut a, t, cfg.max_steps);
        let res = match (res, b.as_mut()) {
            (Ok(Advance::Reached), Some(g)) => budget_b.advance(g, t, cfg.max_steps),
            (r, _) => r,
        };
        match res {
            Ok(Advance::Reached) => {}
            Ok(_) => return Ok((Stop::Timeout { numerical: false }, a)),
            Err(Error::Numerical { .. }) => return Ok((Stop::Timeout { numerical: true }, a)),
            Err(e) => return Err(e),
        }
        if let ControlFlow::Break(()) = visit(t, &a, b.as_ref()) {
            return Ok((Stop::Visitor, a));
        }
    }
    Ok((Stop::Finished, a))
}

/// δ(t) of a pair of single bodies `(i, j)` sampled on the grid of
/// `samples_per_period` points per `period`, for `original` and `ghost`
/// given directly as Cartesian systems.
pub fn delta_series<T: Real>(
    original: &CartesianSystem<T>,
    ghost: &CartesianSystem<T>,
    pair: (usize, usize),
    t_end: T,
    period: T,
    cfg: &IntegratorConfig,
) -> Result<Vec<Option<T>>> {
    let grid = output_grid(t_end, period, cfg.output_samples_per_outer_orbit);
    let mut out = Vec::with_capacity(grid.len());
    let masses = original.masses.clone();
    let (stop, _) = lockstep(original, Some(ghost), &grid, cfg, |_, a, b| {
        let b = b.expect("ghost present");
        out.push(delta(pair_sma(a, &masses, pair.0, pair.1), pair_sma(b, &masses, pair.0, pair.1)));
        ControlFlow::Continue(())
    })?;
    match stop {
        Stop::Finished => Ok(out),
        _ => Err(Error::Numerical { time: f64::NAN, reason: "integration did not finish".into() }),
    }
}

/// Labels `spec` by integrating it and its ghost for `cfg.n_outer` outer
/// orbits.
pub fn classify_stability_with<T: Real>(spec: &HierarchySpec<T>, cfg: &StabilityConfig) -> Result<StabilityRecord> {
    spec.validate()?;
    let start = Instant::now();
    let ghost_spec = make_ghost_with(spec, cfg.ghost_rule, T::lit(cfg.ghost_offset));
    let k = ghost_orbit(spec, cfg.ghost_rule);
    let (ga, gb) = spec.topology.orbit_groups()[k];
    let (i, j) = (ga[0], gb[0]);

    let orig = realize_system(spec)?;
    let ghost = realize_system(&ghost_spec)?;
    let e0 = total_energy(&orig)?;
    let period = spec.outer_period();
    let t_end = period * T::from_usize(cfg.n_outer).expect("orbit count");
    let grid = output_grid(t_end, period, cfg.integrator.output_samples_per_outer_orbit);
    let escape = T::lit(cfg.escape_factor) * spec.outer().a;
    let threshold = T::lit(cfg.delta_threshold);

    let mut max_abs = T::zero();
    let mut chaos_at: Option<T> = None;
    let mut unbound_at: Option<T> = None;
    let mut last_t = T::zero();
    let masses = spec.masses.clone();

    let (stop, final_state) = lockstep(&orig, Some(&ghost), &grid, &cfg.integrator, |t, a, b| {
        last_t = t;
        if is_unbound_at(&a.state(), escape) {
            unbound_at = Some(t);
            return ControlFlow::Break(());
        }
        if let Some(b) = b {
            if let Some(d) = delta(pair_sma(a, &masses, i, j), pair_sma(b, &masses, i, j)) {
                let d = d.abs();
                if d > max_abs {
                    max_abs = d;
                }
                if d > threshold && chaos_at.is_none() {
                    chaos_at = Some(t);
                    if cfg.early_stop {
                        return ControlFlow::Break(());
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })?;

    let n_outer_completed = (last_t / period).floor().to_usize().unwrap_or(0).min(cfg.n_outer);
    let drift = match total_energy(&final_state.state()) {
        Ok(e) => ((e - e0) / e0).abs().to_f64_lossy(),
        Err(_) => f64::NAN,
    };
    let mut record = StabilityRecord {
        label: StabilityLabel::Stable,
        t_trigger: None,
        max_abs_delta: max_abs.to_f64_lossy(),
        n_outer_completed,
        energy_drift_final: drift,
        wall_time: 0.0,
        numerical_failure: false,
    };
    match stop {
        Stop::Timeout { numerical, .. } => {
            record.label = StabilityLabel::Timeout;
            record.numerical_failure = numerical;
            record.t_trigger = chaos_at.map(|t| t.to_f64_lossy());
        }
        _ => {
            if let Some(t) = unbound_at {
                record.label = StabilityLabel::UnstableUnbound;
                record.t_trigger = Some(t.to_f64_lossy());
            } else if let Some(t) = chaos_at {
                record.label = StabilityLabel::UnstableChaotic;
                record.t_trigger = Some(t.to_f64_lossy());
            }
        }
    }
    record.wall_time = start.elapsed().as_secs_f64();
    Ok(record)
}

pub fn classify_stability<T: Real>(
    spec: &HierarchySpec<T>,
    n_outer: usize,
    integrator: &IntegratorConfig,
) -> Result<StabilityRecord> {
    let cfg = StabilityConfig { n_outer, integrator: integrator.clone(), ..Default::default() };
    classify_stability_with(spec, &cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundedness {
    Bound,
    Unbound,
    Timeout,
}

/// Long integration of the original system only, checking for escape.
pub fn boundedness_check<T: Real>(
    spec: &HierarchySpec<T>,
    n_outer: usize,
    cfg: &IntegratorConfig,
) -> Result<Boundedness> {
    spec.validate()?;
    let sys = realize_system(spec)?;
    let period = spec.outer_period();
    let t_end = period * T::from_usize(n_outer).expect("orbit count");
    let grid = output_grid(t_end, period, cfg.output_samples_per_outer_orbit);
    let escape = T::lit(20.0) * spec.outer().a;
    let mut unbound = false;
    let (stop, _) = lockstep(&sys, None, &grid, cfg, |_, a, _| {
        if is_unbound_at(&a.state(), escape) {
            unbound = true;
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(match stop {
        Stop::Timeout { .. } => Boundedness::Timeout,
        _ if unbound => Boundedness::Unbound,
        _ => Boundedness::Bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{elements_to_rel_state, OrbitElements};
    use crate::real::Vec3;

    fn quad_2p2(masses: [f64; 4], a1: f64, a2: f64, e_out: f64) -> HierarchySpec<f64> {
        HierarchySpec::new(
            Topology::Quad2p2,
            masses.to_vec(),
            vec![OrbitElements::planar(a1, 0.0), OrbitElements::planar(a2, 0.0), OrbitElements::planar(1.0, e_out)],
        )
        .unwrap()
    }

    #[test]
    fn ghost_offsets() {
        let triple = HierarchySpec::new(
            Topology::Triple,
            vec![1.0, 1.0, 1.0],
            vec![OrbitElements::planar(0.2, 0.0), OrbitElements::planar(1.0, 0.0)],
        )
        .unwrap();
        let g = make_ghost(&triple);
        assert_eq!(g.orbits[0].a, 0.2 + 1e-6);
        assert_eq!(g.orbits[1], triple.orbits[1]);

        let heavy_first = quad_2p2([2.0, 2.0, 1.0, 1.0], 0.1, 0.1, 0.0);
        let g = make_ghost(&heavy_first);
        assert_eq!(g.orbits[1].a, 0.1 + 1e-6);
        assert_eq!(g.orbits[0].a, 0.1);

        let equal = quad_2p2([1.0; 4], 0.1, 0.1, 0.0);
        assert_eq!(make_ghost(&equal).orbits[0].a, 0.1 + 1e-6);
    }

    #[test]
    fn binding_rule_picks_wider_binary() {
        let spec = quad_2p2([1.0; 4], 0.05, 0.1, 0.0);
        assert_eq!(ghost_orbit(&spec, GhostRule::WeakerBinding), 1);
        assert_eq!(ghost_orbit(&spec, GhostRule::SmallerMass), 0);
    }

    #[test]
    fn delta_arithmetic() {
        assert_eq!(delta(1.0, 1.0), Some(0.0));
        assert!((delta(1.0f64, 0.99).unwrap() - 0.01).abs() < 1e-15);
        assert!((delta(0.2f64, 0.2 + 1e-6).unwrap() + 5e-6).abs() < 1e-15);
        assert_eq!(delta(-1.0, 0.5), None);
    }

    #[test]
    fn initial_snapshot_is_bound() {
        let spec = quad_2p2([1.0; 4], 0.1, 0.1, 0.5);
        assert!(!is_unbound(&realize_system(&spec).unwrap(), &spec));
    }

    #[test]
    fn escaping_body_detected() {
        let m = 1.0;
        let v_circ = (4.0 * std::f64::consts::PI.powi(2) * 2.0 * m / 30.0).sqrt();
        let sys = CartesianSystem::new(
            vec![m, m],
            vec![Vec3::zero(), Vec3::new(30.0, 0.0, 0.0)],
            vec![Vec3::zero(), Vec3::new(2.0 * v_circ, 0.0, 0.0)],
        )
        .unwrap();
        assert!(is_unbound_at(&sys, 20.0));
        assert!(!is_unbound_at(&sys, 40.0));
        // approaching bodies are not escaping
        let mut back = sys.clone();
        back.velocities[1] = -back.velocities[1];
        assert!(!is_unbound_at(&back, 20.0));
    }

    #[test]
    fn two_body_kicked_to_escape() {
        // v = 2 v_circ at r = a gives positive energy; integrate until far
        let (r, v) = elements_to_rel_state(&OrbitElements::planar(1.0, 0.0), 1.0).unwrap();
        let sys = CartesianSystem::new(
            vec![0.5, 0.5],
            vec![r * -0.5, r * 0.5],
            vec![v * -1.0, v * 1.0],
        )
        .unwrap();
        let grid = output_grid(40.0, 1.0, 10);
        let mut fired = false;
        lockstep(&sys, None, &grid, &IntegratorConfig::default(), |_, a, _| {
            fired |= is_unbound_at(&a.state(), 20.0);
            ControlFlow::Continue(())
        })
        .unwrap();
        assert!(fired);
    }

    #[test]
    fn forced_timeout() {
        let spec = quad_2p2([1.0; 4], 0.01, 0.01, 0.0);
        let cfg = IntegratorConfig { max_wall_seconds: Some(0.0), ..Default::default() };
        let rec = classify_stability(&spec, 100, &cfg).unwrap();
        assert_eq!(rec.label, StabilityLabel::Timeout);
        assert!(!rec.numerical_failure);
        assert_eq!(boundedness_check(&spec, 10, &cfg).unwrap(), Boundedness::Timeout);
    }

    #[test]
    fn initial_delta_matches_offset() {
        let spec = quad_2p2([1.0, 0.8, 0.6, 0.5], 0.15, 0.1, 0.2);
        let ghost = make_ghost(&spec);
        let k = ghost_orbit(&spec, GhostRule::SmallerMass);
        assert_eq!(k, 1);
        let cfg = IntegratorConfig::default();
        let series = delta_series(
            &realize_system(&spec).unwrap(),
            &realize_system(&ghost).unwrap(),
            (2, 3),
            spec.outer_period() * 0.1,
            spec.outer_period(),
            &cfg,
        )
        .unwrap();
        let d0 = series[0].unwrap();
        assert!((d0.abs() - 1e-6 / 0.1).abs() < 1e-9, "{d0}");
    }

    #[test]
    fn label_strings_round_trip() {
        for l in [
            StabilityLabel::Stable,
            StabilityLabel::UnstableUnbound,
            StabilityLabel::UnstableChaotic,
            StabilityLabel::Timeout,
        ] {
            assert_eq!(l.as_str().parse::<StabilityLabel>().unwrap(), l);
        }
    }
}
