use std::f64::consts::TAU;

use quadstab::criteria::{ma01_rp_crit_ratio, nested_triples, triple_view};
use quadstab::ghost::{classify_stability_with, delta_series, StabilityConfig, StabilityLabel};
use quadstab::hierarchy::realize_system;
use quadstab::nbody::{angular_momentum, integrate, total_energy, IntegratorConfig};
use quadstab::orbit::{elements_to_rel_state, period};
use quadstab::{CartesianSystem, HierarchySpec, OrbitElements, Topology, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_orbit(rng: &mut ChaCha8Rng, a: f64, e_max: f64, i_max: f64) -> OrbitElements {
    let cos_i: f64 = rng.random_range(i_max.cos()..1.0);
    OrbitElements::new(
        a,
        rng.random_range(0.0..e_max),
        cos_i.acos(),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..TAU),
    )
}

/// Random triple or 2+2 quadruple whose nested triples all clear the MA01
/// boundary by 30%. Inclinations stay below 0.3 rad, so mutual inclinations
/// are under the Kozai angle and no inner orbit is driven to e → 1.
fn quiet_system(rng: &mut ChaCha8Rng) -> HierarchySpec {
    loop {
        let quad = rng.random_bool(0.3);
        let topology = if quad { Topology::Quad2p2 } else { Topology::Triple };
        let masses: Vec<f64> = (0..topology.n_bodies()).map(|_| rng.random_range(1.0..10.0)).collect();
        let mut orbits: Vec<OrbitElements> = (0..topology.n_orbits() - 1)
            .map(|_| {
                let a = rng.random_range(0.08..0.2);
                random_orbit(rng, a, 0.5, 0.3)
            })
            .collect();
        orbits.push(random_orbit(rng, 1.0, 0.3, 0.3));
        let spec = HierarchySpec::new(topology, masses, orbits).unwrap();
        let views = if quad {
            let (a, b) = nested_triples(&spec).unwrap();
            vec![a, b]
        } else {
            vec![triple_view(&spec).unwrap()]
        };
        let quiet = views.iter().all(|v| {
            let crit = ma01_rp_crit_ratio(v.q_out, v.e_out, v.i_mut).unwrap();
            v.periapsis_ratio() > 1.3 * crit
        });
        if quiet {
            return spec;
        }
    }
}

#[test]
fn conservation_on_quiet_hierarchies() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = IntegratorConfig { max_wall_seconds: None, output_samples_per_outer_orbit: 10, ..Default::default() };
    for _ in 0..100 {
        let spec = quiet_system(&mut rng);
        let sys = realize_system(&spec).unwrap();
        let p = spec.outer_period();
        let traj = integrate(&sys, 100.0 * p, p, &cfg).unwrap();
        assert!(traj.completed);
        let end = traj.final_state();
        let de = ((total_energy(end).unwrap() - total_energy(&sys).unwrap()) / total_energy(&sys).unwrap()).abs();
        let l0 = angular_momentum(&sys);
        let dl = (angular_momentum(end) - l0).norm() / l0.norm();
        assert!(de < 1e-8, "energy drift {de:e} for {spec:?}");
        assert!(dl < 1e-8, "angular momentum drift {dl:e} for {spec:?}");
    }
}

#[test]
fn two_body_ghost_stays_close() {
    let cfg = IntegratorConfig { max_wall_seconds: None, ..Default::default() };
    let (m1, m2) = (1.0, 0.5);
    let body = |a: f64, e: f64| {
        let (r, v) = elements_to_rel_state(&OrbitElements::new(a, e, 0.3, 1.0, 2.0, 0.5), m1 + m2).unwrap();
        let mut sys = CartesianSystem::new(vec![m1, m2], vec![Vec3::zero(), r], vec![Vec3::zero(), v]).unwrap();
        sys.to_barycentric();
        sys
    };
    for e in [0.0, 0.3, 0.7] {
        let p = period(1.0, m1 + m2);
        let series = delta_series(&body(1.0, e), &body(1.0 + 1e-6, e), (0, 1), 100.0 * p, p, &cfg).unwrap();
        let first = series[0].unwrap();
        assert!((first.abs() - 1e-6).abs() < 1e-9);
        let worst = series.iter().map(|d| d.unwrap().abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "e = {e}: max |δ| = {worst:e}");
    }
}

#[test]
fn raising_the_threshold_never_adds_instability() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let thresholds = [1e-4, 1e-3, 1e-2, 1e-1];
    for k in 0..6 {
        let masses: Vec<f64> = (0..3).map(|_| rng.random_range(1.0..10.0)).collect();
        let a_in = rng.random_range(0.15..0.35);
        let inner = random_orbit(&mut rng, a_in, 0.3, std::f64::consts::PI);
        let spec = HierarchySpec::new(Topology::Triple, masses, vec![inner, OrbitElements::planar(1.0, 0.1)]).unwrap();
        let early_stop = k % 2 == 0;
        let unstable: Vec<bool> = thresholds
            .iter()
            .map(|&th| {
                let cfg = StabilityConfig {
                    n_outer: 20,
                    delta_threshold: th,
                    early_stop,
                    integrator: IntegratorConfig { max_wall_seconds: None, ..Default::default() },
                    ..Default::default()
                };
                let label = classify_stability_with(&spec, &cfg).unwrap().label;
                assert_ne!(label, StabilityLabel::Timeout);
                label.is_unstable()
            })
            .collect();
        for w in unstable.windows(2) {
            assert!(w[0] || !w[1], "{unstable:?}");
        }
    }
}
