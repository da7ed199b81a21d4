//! Acceptance gate. Each test prints one `criterion N [PASS|FAIL]` line.
//!
//! Criteria 7-9 need hours of N-body integration and are `#[ignore]`d; run
//! them with `cargo test --release -p quadstab --test acceptance -- --ignored
//! --test-threads 1`. They share a working directory (`QUADSTAB_ACCEPT_DIR`,
//! default `target/acceptance`); labeling there is resumable, criterion 8
//! reuses the networks trained by criterion 7 and criterion 9 its 2+2 data.
//! `QUADSTAB_ACCEPT_N` overrides the 4000-system dataset size.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use quadstab::criteria::ma01_rp_crit_ratio;
use quadstab::dataset::{label_to_dir, read_labeled_csv, DatasetFiles, LabelJob, LabeledRow};
use quadstab::ghost::{boundedness_check, classify_stability_with, Boundedness, StabilityConfig, StabilityLabel};
use quadstab::metrics::{bad_fraction, confusion, scores, ConfusionCounts};
use quadstab::mlp::{accuracy, gradient_check, train, Hyperparams, Mlp, Standardizer};
use quadstab::nbody::{angular_momentum, integrate, total_energy, IntegratorConfig};
use quadstab::orbit::{elements_to_rel_state, kepler_solve, period, rel_state_to_elements};
use quadstab::slices::{find_slice, slice_grid, Classifier, SliceSpec, Varied};
use quadstab::{CartesianSystem, HierarchySpec, MLPModel, OrbitElements, Topology, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written straight to stderr so the line shows up even for passing tests.
fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n} [{}] {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn gate(n: u32, checks: &[(bool, String)], elapsed: f64, budget: Option<f64>) {
    let mut all = checks.iter().all(|c| c.0);
    let mut parts: Vec<String> = checks.iter().map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "!! " })).collect();
    if let Some(b) = budget {
        let ok = elapsed < b;
        all &= ok;
        parts.push(format!("{}runtime {elapsed:.1} s (budget {b} s)", if ok { "" } else { "!! " }));
    } else {
        parts.push(format!("runtime {elapsed:.1} s"));
    }
    report(n, all, &parts.join("; "));
    assert!(all, "criterion {n} failed: {}", parts.join("; "));
}

#[test]
fn criterion_1_two_body_conservation() {
    let start = Instant::now();
    let cfg = IntegratorConfig { max_wall_seconds: None, ..Default::default() };
    let mut checks = Vec::new();
    for e in [0.0, 0.5, 0.9] {
        let (m1, m2) = (0.5, 0.5);
        let el = OrbitElements::new(1.0, e, 0.0, 0.0, 0.0, 0.0);
        let (r, v) = elements_to_rel_state(&el, m1 + m2).unwrap();
        let mut sys = CartesianSystem::new(vec![m1, m2], vec![Vec3::zero(), r], vec![Vec3::zero(), v]).unwrap();
        sys.to_barycentric();
        let p = period(1.0, m1 + m2);
        let traj = integrate(&sys, 100.0 * p, p, &cfg).unwrap();
        let end = traj.final_state();
        let e0 = total_energy(&sys).unwrap();
        let de = ((total_energy(end).unwrap() - e0) / e0).abs();
        let l0 = angular_momentum(&sys);
        let dl = (angular_momentum(end) - l0).norm() / l0.norm();
        let rel = |s: &CartesianSystem| (s.positions[1] - s.positions[0], s.velocities[1] - s.velocities[0]);
        let (rf, vf) = rel(end);
        let fin = rel_state_to_elements(rf, vf, m1 + m2).unwrap();
        // after exactly 100 analytic periods the mean anomaly must return to 0
        let dm = (fin.mean_anomaly + PI).rem_euclid(TAU) - PI;
        let dp = dm.abs() / (100.0 * TAU);
        checks.push((de < 1e-8, format!("e={e}: |dE/E|={de:.1e}")));
        checks.push((dl < 1e-8, format!("|dL|/|L|={dl:.1e}")));
        checks.push((dp < 1e-6, format!("period err={dp:.1e}")));
    }
    gate(1, &checks, start.elapsed().as_secs_f64(), Some(5.0));
}

#[test]
fn criterion_2_orbital_mechanics_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_trip: f64 = 0.0;
    for _ in 0..10_000 {
        let cos_i: f64 = rng.random_range(-1.0..1.0);
        let el = OrbitElements::new(
            rng.random_range(0.01..10.0),
            rng.random_range(0.0..0.95),
            cos_i.acos(),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
        );
        let m = rng.random_range(0.1..20.0);
        let (r, v) = elements_to_rel_state(&el, m).unwrap();
        let back = rel_state_to_elements(r, v, m).unwrap();
        let (r2, v2) = elements_to_rel_state(&back, m).unwrap();
        let err = ((r2 - r).norm() / r.norm()).max((v2 - v).norm() / v.norm()).max((back.a - el.a).abs() / el.a);
        worst_trip = worst_trip.max(err);
    }
    let mut worst_kepler: f64 = 0.0;
    for i in 0..100 {
        for j in 0..100 {
            let m = TAU * i as f64 / 100.0;
            let e = 0.99 * j as f64 / 99.0;
            let ea = kepler_solve(m, e).unwrap();
            let res = ea - e * ea.sin() - m;
            worst_kepler = worst_kepler.max(((res + PI).rem_euclid(TAU) - PI).abs());
        }
    }
    let checks = [
        (worst_trip < 1e-10, format!("round trip max rel err {worst_trip:.1e} (< 1e-10)")),
        (worst_kepler < 1e-12, format!("Kepler max residual {worst_kepler:.1e} (< 1e-12)")),
    ];
    gate(2, &checks, start.elapsed().as_secs_f64(), Some(5.0));
}

#[test]
fn criterion_3_ma01_scalar_oracle() {
    let start = Instant::now();
    let oracle = 2.8 * 2f64.powf(0.4);
    let got = ma01_rp_crit_ratio(1.0, 0.0, 0.0).unwrap();
    let grid = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / 19.0;
    let mut violations = 0;
    for a in 0..20 {
        for b in 0..20 {
            for c in 0..20 {
                let q = 0.05 * 400f64.powf(a as f64 / 19.0);
                let e = grid(0.0, 0.9, b);
                let i = grid(0.0, PI, c);
                let base = ma01_rp_crit_ratio(q, e, i).unwrap();
                if a < 19 && ma01_rp_crit_ratio(0.05 * 400f64.powf((a + 1) as f64 / 19.0), e, i).unwrap() <= base {
                    violations += 1;
                }
                if b < 19 && ma01_rp_crit_ratio(q, grid(0.0, 0.9, b + 1), i).unwrap() <= base {
                    violations += 1;
                }
                if c < 19 && ma01_rp_crit_ratio(q, e, grid(0.0, PI, c + 1)).unwrap() >= base {
                    violations += 1;
                }
            }
        }
    }
    let checks = [
        ((got - oracle).abs() < 1e-12, format!("crit(1,0,0)={got:.15} vs {oracle:.15}")),
        (violations == 0, format!("{violations} monotonicity violations on 20^3 grid")),
    ];
    gate(3, &checks, start.elapsed().as_secs_f64(), Some(1.0));
}

fn quad_2p2(a1: f64, a2: f64, e_out: f64) -> HierarchySpec {
    let circ = |a| OrbitElements::planar(a, 0.0);
    HierarchySpec::new(Topology::Quad2p2, vec![1.0; 4], vec![circ(a1), circ(a2), OrbitElements::planar(1.0, e_out)])
        .unwrap()
}

#[test]
fn criterion_4_ghost_criterion_sanity() {
    let start = Instant::now();
    // no wall-clock cap: a timeout would make the verdict machine dependent
    let cfg = StabilityConfig { integrator: IntegratorConfig { max_wall_seconds: None, ..Default::default() }, ..Default::default() };
    let deep = quad_2p2(0.01, 0.01, 0.0);
    let packed = quad_2p2(0.6, 0.1, 0.5);
    let run = |s: &HierarchySpec| classify_stability_with(s, &cfg).unwrap();
    let (d1, d2) = (run(&deep), run(&deep));
    let (p1, p2) = (run(&packed), run(&packed));
    let same = |a: &quadstab::ghost::StabilityRecord, b: &quadstab::ghost::StabilityRecord| {
        a.label == b.label && a.t_trigger == b.t_trigger && a.max_abs_delta.to_bits() == b.max_abs_delta.to_bits()
    };
    let checks = [
        (d1.label == StabilityLabel::Stable, format!("deep 2+2 (α=0.01): {} max|δ|={:.1e}", d1.label, d1.max_abs_delta)),
        (p1.label.is_unstable(), format!("packed 2+2 (α=0.6, e_out=0.5): {}", p1.label)),
        (same(&d1, &d2) && same(&p1, &p2), "reruns identical".to_string()),
    ];
    gate(4, &checks, start.elapsed().as_secs_f64(), Some(120.0));
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (TAU * v).cos()
}

fn blobs(n: usize, seed: u64, xor: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..n {
        if xor {
            let sx = if k % 2 == 0 { 1.0 } else { -1.0 };
            let sy = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            xs.push(vec![sx + 0.2 * gaussian(&mut rng), sy + 0.2 * gaussian(&mut rng)]);
            ys.push(if sx * sy < 0.0 { 1.0 } else { 0.0 });
        } else {
            let c = if k % 2 == 1 { 2.0 } else { -2.0 };
            xs.push(vec![c + 0.5 * gaussian(&mut rng), c + 0.5 * gaussian(&mut rng)]);
            ys.push((k % 2) as f64);
        }
    }
    (xs, ys)
}

#[test]
fn criterion_5_mlp_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Vec<f64>> = (0..64).map(|_| (0..11).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<f64> = (0..64).map(|k| (k % 2) as f64).collect();
    let mut m: MLPModel = Mlp::init(11, &Hyperparams::default(), 9);
    m.standardizer = Standardizer::fit(&xs).unwrap();
    let grad_err = gradient_check(&m, &xs, &ys, 300, 2).unwrap();

    let (xs, ys) = blobs(1000, 1, false);
    let sep = accuracy(&train(&xs, &ys, &Hyperparams::default(), 7).unwrap(), &xs, &ys).unwrap();
    let (xs, ys) = blobs(1000, 2, true);
    let h = Hyperparams { batch_size: 100, ..Default::default() };
    let xor = accuracy(&train(&xs, &ys, &h, 3).unwrap(), &xs, &ys).unwrap();
    let checks = [
        (grad_err < 1e-5, format!("max rel gradient error {grad_err:.1e}")),
        (sep >= 0.99, format!("separable accuracy {sep:.3}")),
        (xor >= 0.95, format!("XOR accuracy {xor:.3}")),
    ];
    gate(5, &checks, start.elapsed().as_secs_f64(), Some(60.0));
}

/// A reference `S, P_s, P_u, R_s, R_u` row.
struct Row {
    name: &'static str,
    values: [f64; 5],
}

const TABLE_2P2: [Row; 3] = [
    Row { name: "2+2 MA01", values: [0.83, 0.77, 0.96, 0.95, 0.78] },
    Row { name: "2+2 triple MLP", values: [0.88, 0.85, 0.94, 0.93, 0.87] },
    Row { name: "2+2 MLP", values: [0.94, 0.94, 0.95, 0.94, 0.95] },
];

const TABLE_3P1: [Row; 3] = [
    Row { name: "3+1 MA01", values: [0.56, 0.54, 0.95, 0.95, 0.55] },
    Row { name: "3+1 triple MLP", values: [0.66, 0.59, 0.97, 0.96, 0.62] },
    Row { name: "3+1 MLP", values: [0.93, 0.91, 0.95, 0.91, 0.95] },
];

fn rounds_to(x: f64, printed: f64) -> bool {
    (x - printed).abs() <= 0.005 + 1e-12
}

/// Smallest confusion counts whose scores round to every printed value,
/// found by brute force over the class sizes.
fn consistent_counts(row: &Row, max_class: u64) -> Option<ConfusionCounts> {
    let [s, ps, pu, rs, ru] = row.values;
    let mut best: Option<ConfusionCounts> = None;
    for n_stable in 1..=max_class {
        for n_unstable in 1..=max_class {
            if best.is_some_and(|b| b.total() <= n_stable + n_unstable) {
                continue;
            }
            for ts in 0..=n_stable {
                if !rounds_to(ts as f64 / n_stable as f64, rs) {
                    continue;
                }
                for tu in 0..=n_unstable {
                    if !rounds_to(tu as f64 / n_unstable as f64, ru) {
                        continue;
                    }
                    let c = ConfusionCounts { ts, tu, fs: n_unstable - tu, fu: n_stable - ts };
                    let ok = [(c.ts + c.tu, c.total(), s), (c.ts, c.ts + c.fs, ps), (c.tu, c.tu + c.fu, pu)]
                        .iter()
                        .all(|&(num, den, v)| den > 0 && rounds_to(num as f64 / den as f64, v));
                    if ok {
                        best = Some(c);
                    }
                }
            }
        }
    }
    best
}

#[test]
fn criterion_6_metrics_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..200);
        let t: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let p: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let c = confusion(&t, &p).unwrap();
        let mut ts = 0u64;
        let mut tu = 0u64;
        let mut fs = 0u64;
        let mut fu = 0u64;
        for k in 0..n {
            match (t[k], p[k]) {
                (false, false) => ts += 1,
                (true, true) => tu += 1,
                (true, false) => fs += 1,
                (false, true) => fu += 1,
            }
        }
        let sc = scores(&c);
        let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        let expect = [div(ts + tu, n as u64), div(ts, ts + fs), div(tu, tu + fu), div(ts, ts + fu), div(tu, tu + fs)];
        if c != (ConfusionCounts { ts, tu, fs, fu }) || sc.as_array() != expect {
            mismatches += 1;
        }
    }
    let mut checks = vec![(mismatches == 0, format!("{mismatches}/1000 recount mismatches"))];
    for row in TABLE_2P2.iter().chain(&TABLE_3P1) {
        let required = row.name.ends_with(" MLP") && !row.name.contains("triple");
        match consistent_counts(row, 400) {
            Some(c) => {
                let got = scores(&c).as_array().map(Option::unwrap);
                let ok = got.iter().zip(row.values).all(|(&g, v)| rounds_to(g, v));
                checks.push((ok, format!("{} from TS={} TU={} FS={} FU={} -> S={:.4}", row.name, c.ts, c.tu, c.fs, c.fu, got[0])));
            }
            // the reference MA01 and triple-MLP rows admit no class balance
            // at all; they are reported, and only the network rows are gated
            None => checks.push((!required, format!("{}: reference row is not self-consistent", row.name))),
        }
    }
    gate(6, &checks, start.elapsed().as_secs_f64(), None);
}

fn accept_dir() -> PathBuf {
    std::env::var_os("QUADSTAB_ACCEPT_DIR").map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"),
        PathBuf::from,
    )
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn accept_n() -> usize {
    env_usize("QUADSTAB_ACCEPT_N", 4000)
}

const MASTER_SEED: u64 = 20_240_101;

fn xy(rows: &[LabeledRow]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (rows.iter().map(|r| r.params.features()).collect(), rows.iter().map(LabeledRow::target).collect())
}

/// Labels (or resumes) a dataset and trains a network on its 80% split.
fn dataset_and_model(topology: Topology, n: usize) -> (MLPModel, Vec<LabeledRow>) {
    let dir = accept_dir();
    let files = DatasetFiles::new(&dir, topology);
    let job = LabelJob::new(topology, n, MASTER_SEED);
    let t = Instant::now();
    let ds = label_to_dir(&job, &dir, MASTER_SEED).unwrap();
    let _ = writeln!(
        std::io::stderr(),
        "  {topology}: {} rows, {} timeouts, labeling {:.0} s",
        ds.rows.len(),
        ds.timeouts.len(),
        t.elapsed().as_secs_f64()
    );
    let (_, train_rows) = read_labeled_csv(&files.train).unwrap();
    let (_, test_rows) = read_labeled_csv(&files.test).unwrap();
    let (xs, ys) = xy(&train_rows);
    let mut model = train(&xs, &ys, &Hyperparams::default(), MASTER_SEED).unwrap();
    model.info.topology = Some(topology.tag().to_string());
    model.info.train_score = Some(accuracy(&model, &xs, &ys).unwrap());
    let (xt, yt) = xy(&test_rows);
    model.info.test_score = Some(accuracy(&model, &xt, &yt).unwrap());
    model.save(&dir.join(format!("mlp_{}.json", topology.tag()))).unwrap();
    (model, test_rows)
}

fn score_on(rows: &[LabeledRow], topology: Topology, c: Classifier<'_>) -> f64 {
    let truth: Vec<bool> = rows.iter().map(|r| r.record.label.is_unstable()).collect();
    let pred: Vec<bool> = rows.iter().map(|r| c.predict_unstable(topology, &r.params.features()).unwrap()).collect();
    scores(&confusion(&truth, &pred).unwrap()).score.unwrap()
}

#[test]
#[ignore = "hours of N-body labeling"]
fn criterion_7_end_to_end_desk_experiment() {
    let start = Instant::now();
    let n = accept_n();
    let (triple, _) = dataset_and_model(Topology::Triple, n);
    let mut checks = Vec::new();
    let mut s = std::collections::HashMap::new();
    for topology in [Topology::Quad2p2, Topology::Quad3p1] {
        let (quad, test) = dataset_and_model(topology, n);
        let ma01 = score_on(&test, topology, Classifier::Ma01);
        let tri = score_on(&test, topology, Classifier::TripleMlp(&triple));
        let own = score_on(&test, topology, Classifier::QuadMlp(&quad));
        s.insert(topology, (ma01, tri, own));
        checks.push((own > ma01, format!("{topology}: quad MLP S={own:.3} > MA01 S={ma01:.3} (triple MLP S={tri:.3})")));
    }
    let (_, tri, own) = s[&Topology::Quad3p1];
    checks.push((own - tri >= 0.10, format!("3p1 quad - triple MLP = {:.3} (>= 0.10)", own - tri)));
    let (_, _, own) = s[&Topology::Quad2p2];
    checks.push((own >= 0.85, format!("2p2 quad MLP S={own:.3} (>= 0.85)")));
    checks.push((true, format!("N={n} per topology")));
    gate(7, &checks, start.elapsed().as_secs_f64(), None);
}

#[test]
#[ignore = "needs the networks from criterion 7"]
fn criterion_8_fiducial_slice() {
    let start = Instant::now();
    let dir = accept_dir();
    let quad = MLPModel::load(&dir.join("mlp_3p1.json")).expect("run criterion 7 first");
    let triple = MLPModel::load(&dir.join("mlp_triple.json")).expect("run criterion 7 first");
    let classifiers = [Classifier::Ma01, Classifier::TripleMlp(&triple), Classifier::QuadMlp(&quad)];
    let row = find_slice(Topology::Quad3p1, "fiducial").unwrap();
    let cfg = StabilityConfig::default();
    let mut total = [ConfusionCounts::default(); 3];
    let mut e_bad = Vec::new();
    for varied in [Varied::MassRatio, Varied::Eccentricity] {
        let grid = slice_grid(&SliceSpec::new(row.clone(), varied, 10, 10), &classifiers, &cfg).unwrap();
        for (k, t) in total.iter_mut().enumerate() {
            let c = grid.confusion(k);
            t.ts += c.ts;
            t.tu += c.tu;
            t.fs += c.fs;
            t.fu += c.fu;
        }
        if varied == Varied::Eccentricity {
            e_bad = (0..3).map(|k| bad_fraction(&grid.confusion(k)).unwrap_or(f64::NAN)).collect();
        }
    }
    let bad: Vec<f64> = total.iter().map(|c| bad_fraction(c).unwrap_or(f64::NAN)).collect();
    let checks = [
        (bad[0] > bad[2], format!("bad fraction MA01 {:.3} > 3p1 MLP {:.3} (triple MLP {:.3})", bad[0], bad[2], bad[1])),
        (
            e_bad[0] >= e_bad[1] && e_bad[0] >= e_bad[2],
            format!("e-varied: MA01 {:.3} worst of (triple {:.3}, 3p1 {:.3})", e_bad[0], e_bad[1], e_bad[2]),
        ),
    ];
    gate(8, &checks, start.elapsed().as_secs_f64(), Some(1800.0));
}

#[test]
#[ignore = "1000-orbit integrations of 200 systems"]
fn criterion_9_boundedness_audit() {
    let start = Instant::now();
    let want = env_usize("QUADSTAB_ACCEPT_BOUNDED_N", 200);
    let files = DatasetFiles::new(&accept_dir(), Topology::Quad2p2);
    let (_, rows) = read_labeled_csv(&files.labeled).expect("run criterion 7 first");
    let stable: Vec<&LabeledRow> = rows.iter().filter(|r| r.record.label == StabilityLabel::Stable).take(want).collect();
    // ten times the labeling horizon, so ten times the labeling wall cap
    let cfg = IntegratorConfig { max_wall_seconds: Some(600.0), ..Default::default() };
    let mut counts = [0usize; 3];
    for r in &stable {
        let k = match boundedness_check(r.params.spec(), 1000, &cfg).unwrap() {
            Boundedness::Bound => 0,
            Boundedness::Unbound => 1,
            Boundedness::Timeout => 2,
        };
        counts[k] += 1;
    }
    let rate = counts[0] as f64 / (counts[0] + counts[1]).max(1) as f64;
    let checks = [
        (stable.len() == want, format!("{} of {want} stable 2p2 systems", stable.len())),
        ((rate - 0.92).abs() <= 0.10, format!("bound rate {rate:.3} vs 0.92 ± 0.10 ({} timeouts)", counts[2])),
    ];
    gate(9, &checks, start.elapsed().as_secs_f64(), None);
}
