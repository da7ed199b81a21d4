//! Direct Newtonian N-body integration.
//!
//! The stepper is a 15th-order Gauss-Radau predictor-corrector (IAS15) with
//! the global step-size control of Rein & Spiegel and compensated summation
//! of positions and velocities. There is no regularization; close encounters
//! shrink the step and the wall-clock cap turns pathological runs into
//! timeouts.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::CartesianSystem;
use crate::real::{Real, Vec3};

/// Gauss-Radau spacings.
const H: [f64; 8] = [
    0.0,
    0.056_262_560_536_922_146_465_652_191_031_8,
    0.180_240_691_736_892_364_987_579_942_780,
    0.352_624_717_113_169_637_373_907_769_648,
    0.547_153_626_330_555_383_001_448_554_766,
    0.734_210_177_215_410_531_523_210_605_558,
    0.885_320_946_839_095_768_090_359_771_030,
    0.977_520_613_561_287_501_891_174_488_626,
];

/// `RR[n] = h[j] - h[k]` for `j > k`, row by row.
const RR: [f64; 28] = [
    0.0562625605369221464656522,
    0.1802406917368923649875799,
    0.1239781311999702185219278,
    0.3526247171131696373739078,
    0.2963621565762474909082556,
    0.1723840253762772723863278,
    0.5471536263305553830014486,
    0.4908910657936332365357964,
    0.3669129345936630180138686,
    0.1945289092173857456275408,
    0.7342101772154105315232106,
    0.6779476166784883850575584,
    0.5539694854785181665356307,
    0.3815854601022408941493028,
    0.1870565508848551485217621,
    0.8853209468390957680903598,
    0.8290583863021736216247076,
    0.7050802551022034031027798,
    0.5326962297259261307164520,
    0.3381673205085403850889112,
    0.1511107696236852365671492,
    0.9775206135612875018911745,
    0.9212580530243653554255223,
    0.7972799218243951369035945,
    0.6248958964481178645172667,
    0.4303669872307321188897259,
    0.2433104363458769703679639,
    0.0921996667221917338008147,
];

/// g → b conversion coefficients.
const C: [f64; 21] = [
    -0.0562625605369221464656522,
    0.0101408028300636299864818,
    -0.2365032522738145114532321,
    -0.0035758977292516175949345,
    0.0935376952594620658957485,
    -0.5891279693869841488271399,
    0.0019565654099472210769006,
    -0.0547553868890686864408084,
    0.4158812000823068616886219,
    -1.1362815957175395318285885,
    -0.0014365302363708915424460,
    0.0421585277212687077072973,
    -0.3600995965020568122897665,
    1.2501507118406910258505441,
    -1.8704917729329500633517991,
    0.0012717903090268677492943,
    -0.0387603579159067703699046,
    0.3609622434528459832253398,
    -1.4668842084004269643701553,
    2.9061362593084293014237913,
    -2.7558127197720458314421588,
];

/// b → g conversion coefficients.
const D: [f64; 21] = [
    0.0562625605369221464656522,
    0.0031654757181708292499905,
    0.2365032522738145114532321,
    0.0001780977692217433881125,
    0.0457929855060279188954539,
    0.5891279693869841488271399,
    0.0000100202365223291272096,
    0.0084318571535257015445000,
    0.2535340690545692665214616,
    1.1362815957175395318285885,
    0.0000005637641639318207610,
    0.0015297840025004658189490,
    0.0978342365324440053653648,
    0.8752546646840910912297246,
    1.8704917729329500633517991,
    0.0000000317188154017613665,
    0.0002762930909826476593130,
    0.0360285539837364596003871,
    0.5767330002770787313544596,
    2.2485887607691597933926895,
    2.7558127197720458314421588,
];

const SAFETY: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Step-size control parameter (IAS15 epsilon). Must lie in `(0, 1e-6]`.
    pub rel_tolerance: f64,
    pub output_samples_per_outer_orbit: usize,
    /// Wall-clock budget per integration; `None` disables the cap.
    pub max_wall_seconds: Option<f64>,
    /// Plummer softening length in AU (0 for point masses).
    pub softening: f64,
    /// Deterministic alternative to the wall-clock cap.
    pub max_steps: Option<u64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-9,
            output_samples_per_outer_orbit: 100,
            max_wall_seconds: Some(60.0),
            softening: 0.0,
            max_steps: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance <= 1e-6) {
            return Err(Error::Domain(format!("rel_tolerance {} outside (0, 1e-6]", self.rel_tolerance)));
        }
        if self.output_samples_per_outer_orbit < 10 {
            return Err(Error::Domain("need at least 10 output samples per outer orbit".into()));
        }
        if !(self.softening >= 0.0) {
            return Err(Error::Domain("softening must be non-negative".into()));
        }
        if let Some(w) = self.max_wall_seconds {
            if !(w >= 0.0) {
                return Err(Error::Domain("max_wall_seconds must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn deadline_from(&self, start: Instant) -> Option<Instant> {
        self.max_wall_seconds.map(|s| start + Duration::from_secs_f64(s))
    }
}

/// Result of advancing an integrator towards a target time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Advance {
    Reached,
    WallClock,
    StepLimit,
}

/// Kinetic plus pairwise potential energy.
pub fn total_energy<T: Real>(sys: &CartesianSystem<T>) -> Result<T> {
    let g = T::grav();
    let mut kin = T::zero();
    let mut pot = T::zero();
    for i in 0..sys.len() {
        kin += T::lit(0.5) * sys.masses[i] * sys.velocities[i].norm_sq();
        for j in (i + 1)..sys.len() {
            let r = (sys.positions[j] - sys.positions[i]).norm();
            if !(r > T::zero()) {
                return Err(Error::Singular(format!("bodies {i} and {j} coincide")));
            }
            pot -= g * sys.masses[i] * sys.masses[j] / r;
        }
    }
    Ok(kin + pot)
}

/// Total angular momentum about the barycenter.
pub fn angular_momentum<T: Real>(sys: &CartesianSystem<T>) -> Vec3<T> {
    if sys.is_empty() {
        return Vec3::zero();
    }
    let (rc, vc) = sys.center_of_mass();
    let mut l = Vec3::zero();
    for i in 0..sys.len() {
        l += (sys.positions[i] - rc).cross(sys.velocities[i] - vc) * sys.masses[i];
    }
    l
}

#[inline]
fn add_cs<T: Real>(p: &mut T, cs: &mut T, inp: T) {
    let y = inp - *cs;
    let t = *p + y;
    *cs = (t - *p) - y;
    *p = t;
}

/// IAS15 stepper holding the full integration state.
#[derive(Clone, Debug)]
pub struct Ias15<T> {
    masses: Vec<T>,
    g_masses: Vec<T>,
    softening2: T,
    epsilon: T,
    h: [T; 8],
    /// Reciprocals of `RR`.
    rr: [T; 28],
    c: [T; 21],
    d: [T; 21],

    x0: Vec<T>,
    v0: Vec<T>,
    a0: Vec<T>,
    csx: Vec<T>,
    csv: Vec<T>,
    t: T,
    dt: T,
    dt_last_done: T,

    b: Vec<[T; 7]>,
    g: Vec<[T; 7]>,
    e: Vec<[T; 7]>,
    br: Vec<[T; 7]>,
    er: Vec<[T; 7]>,
    csb: Vec<[T; 7]>,

    xs: Vec<T>,
    at: Vec<T>,

    steps: u64,
    rejected: u64,
}

impl<T: Real> Ias15<T> {
    pub fn new(sys: &CartesianSystem<T>, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if sys.len() < 2 {
            return Err(Error::Domain("need at least two bodies".into()));
        }
        if !sys.is_finite() {
            return Err(Error::Numerical { time: 0.0, reason: "non-finite initial state".into() });
        }
        let n3 = 3 * sys.len();
        let lit = T::lit;
        let mut x0 = Vec::with_capacity(n3);
        let mut v0 = Vec::with_capacity(n3);
        for (p, v) in sys.positions.iter().zip(&sys.velocities) {
            x0.extend_from_slice(&p.to_array());
            v0.extend_from_slice(&v.to_array());
        }
        let zero7 = [T::zero(); 7];
        let mut me = Self {
            masses: sys.masses.clone(),
            g_masses: sys.masses.iter().map(|&m| m * T::grav()).collect(),
            softening2: lit(cfg.softening * cfg.softening),
            epsilon: lit(cfg.rel_tolerance),
            h: H.map(lit),
            rr: RR.map(|x| lit(1.0 / x)),
            c: C.map(lit),
            d: D.map(lit),
            x0,
            v0,
            a0: vec![T::zero(); n3],
            csx: vec![T::zero(); n3],
            csv: vec![T::zero(); n3],
            t: T::zero(),
            dt: T::zero(),
            dt_last_done: T::zero(),
            b: vec![zero7; n3],
            g: vec![zero7; n3],
            e: vec![zero7; n3],
            br: vec![zero7; n3],
            er: vec![zero7; n3],
            csb: vec![zero7; n3],
            xs: vec![T::zero(); n3],
            at: vec![T::zero(); n3],
            steps: 0,
            rejected: 0,
        };
        let x = me.x0.clone();
        let mut a = vec![T::zero(); n3];
        me.accelerations(&x, &mut a);
        me.a0 = a;
        me.dt = me.initial_step();
        Ok(me)
    }

    /// A small fraction of the shortest pairwise free-fall time.
    fn initial_step(&self) -> T {
        let n = self.masses.len();
        let mut tmin = T::infinity();
        for i in 0..n {
            for j in (i + 1)..n {
                let mut r2 = T::zero();
                for k in 0..3 {
                    let d = self.x0[3 * j + k] - self.x0[3 * i + k];
                    r2 += d * d;
                }
                let r3 = r2 * r2.sqrt();
                let tdyn = (r3 / (self.g_masses[i] + self.g_masses[j])).sqrt();
                tmin = tmin.min(tdyn);
            }
        }
        if tmin.is_finite() && tmin > T::zero() {
            tmin * T::lit(1e-3)
        } else {
            T::lit(1e-6)
        }
    }

    pub fn time(&self) -> T {
        self.t
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn rejected_steps(&self) -> u64 {
        self.rejected
    }

    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    /// Current state as a `CartesianSystem`.
    pub fn state(&self) -> CartesianSystem<T> {
        let n = self.masses.len();
        let mut positions = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for i in 0..n {
            positions.push(Vec3::new(self.x0[3 * i], self.x0[3 * i + 1], self.x0[3 * i + 2]));
            velocities.push(Vec3::new(self.v0[3 * i], self.v0[3 * i + 1], self.v0[3 * i + 2]));
        }
        CartesianSystem { masses: self.masses.clone(), positions, velocities }
    }

    /// Relative position and velocity of body `j` with respect to body `i`.
    pub fn pair_state(&self, i: usize, j: usize) -> (Vec3<T>, Vec3<T>) {
        let r = Vec3::new(
            self.x0[3 * j] - self.x0[3 * i],
            self.x0[3 * j + 1] - self.x0[3 * i + 1],
            self.x0[3 * j + 2] - self.x0[3 * i + 2],
        );
        let v = Vec3::new(
            self.v0[3 * j] - self.v0[3 * i],
            self.v0[3 * j + 1] - self.v0[3 * i + 1],
            self.v0[3 * j + 2] - self.v0[3 * i + 2],
        );
        (r, v)
    }

    fn accelerations(&self, x: &[T], a: &mut [T]) {
        a.iter_mut().for_each(|v| *v = T::zero());
        let n = self.masses.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[3 * j] - x[3 * i];
                let dy = x[3 * j + 1] - x[3 * i + 1];
                let dz = x[3 * j + 2] - x[3 * i + 2];
                let r2 = dx * dx + dy * dy + dz * dz + self.softening2;
                let inv_r3 = T::one() / (r2 * r2.sqrt());
                let fi = self.g_masses[j] * inv_r3;
                let fj = self.g_masses[i] * inv_r3;
                a[3 * i] += fi * dx;
                a[3 * i + 1] += fi * dy;
                a[3 * i + 2] += fi * dz;
                a[3 * j] -= fj * dx;
                a[3 * j + 1] -= fj * dy;
                a[3 * j + 2] -= fj * dz;
            }
        }
    }

    fn reset_predictions(&mut self) {
        let zero7 = [T::zero(); 7];
        for k in 0..self.b.len() {
            self.b[k] = zero7;
            self.e[k] = zero7;
        }
    }

    /// Extrapolates the last accepted b-coefficients to a step of
    /// `ratio` times its length.
    fn predict(&mut self, ratio: T) {
        if ratio > T::lit(20.0) || ratio <= T::zero() {
            self.reset_predictions();
            return;
        }
        let q1 = ratio;
        let q2 = q1 * q1;
        let q3 = q1 * q2;
        let q4 = q2 * q2;
        let q5 = q2 * q3;
        let q6 = q3 * q3;
        let q7 = q3 * q4;
        let l = T::lit;
        for k in 0..self.b.len() {
            let br = self.br[k];
            let er = self.er[k];
            let mut e = [T::zero(); 7];
            e[0] = q1 * (br[6] * l(7.0) + br[5] * l(6.0) + br[4] * l(5.0) + br[3] * l(4.0) + br[2] * l(3.0) + br[1] * l(2.0) + br[0]);
            e[1] = q2 * (br[6] * l(21.0) + br[5] * l(15.0) + br[4] * l(10.0) + br[3] * l(6.0) + br[2] * l(3.0) + br[1]);
            e[2] = q3 * (br[6] * l(35.0) + br[5] * l(20.0) + br[4] * l(10.0) + br[3] * l(4.0) + br[2]);
            e[3] = q4 * (br[6] * l(35.0) + br[5] * l(15.0) + br[4] * l(5.0) + br[3]);
            e[4] = q5 * (br[6] * l(21.0) + br[5] * l(6.0) + br[4]);
            e[5] = q6 * (br[6] * l(7.0) + br[5]);
            e[6] = q7 * br[6];
            let mut b = [T::zero(); 7];
            for j in 0..7 {
                b[j] = e[j] + (br[j] - er[j]);
            }
            self.e[k] = e;
            self.b[k] = b;
        }
    }

    /// Takes one accepted step of at most `|limit|` in the direction of
    /// `limit`. Returns true if the step was shortened to exactly `limit`.
    fn step(&mut self, limit: T) -> Result<bool> {
        let n3 = self.x0.len();
        let lit = T::lit;
        if (self.dt > T::zero()) != (limit > T::zero()) {
            // direction change invalidates the extrapolated coefficients
            self.dt = -self.dt;
            self.dt_last_done = T::zero();
        }
        loop {
            let trial = self.dt;
            let clipped = trial.abs() >= limit.abs();
            let dt = if clipped { limit } else { trial };

            if self.dt_last_done != T::zero() {
                self.predict(dt / self.dt_last_done);
            } else {
                self.reset_predictions();
            }

            let d = self.d;
            for k in 0..n3 {
                let b = self.b[k];
                let g = &mut self.g[k];
                g[0] = b[6] * d[15] + b[5] * d[10] + b[4] * d[6] + b[3] * d[3] + b[2] * d[1] + b[1] * d[0] + b[0];
                g[1] = b[6] * d[16] + b[5] * d[11] + b[4] * d[7] + b[3] * d[4] + b[2] * d[2] + b[1];
                g[2] = b[6] * d[17] + b[5] * d[12] + b[4] * d[8] + b[3] * d[5] + b[2];
                g[3] = b[6] * d[18] + b[5] * d[13] + b[4] * d[9] + b[3];
                g[4] = b[6] * d[19] + b[5] * d[14] + b[4];
                g[5] = b[6] * d[20] + b[5];
                g[6] = b[6];
                self.csb[k] = [T::zero(); 7];
            }

            let mut pc_error = T::max_value();
            let mut pc_error_last = lit(2.0);
            let mut iterations = 0;
            let pc_converged = lit(1e-16).max(T::epsilon() * lit(0.5));

            loop {
                if pc_error < pc_converged {
                    break;
                }
                if iterations > 2 && pc_error_last <= pc_error {
                    break;
                }
                if iterations >= 12 {
                    break;
                }
                pc_error_last = pc_error;
                pc_error = T::zero();
                iterations += 1;

                for n in 1..8 {
                    let hn = self.h[n];
                    let mut s = [T::zero(); 9];
                    s[0] = dt * hn;
                    s[1] = s[0] * s[0] / lit(2.0);
                    s[2] = s[1] * hn / lit(3.0);
                    s[3] = s[2] * hn / lit(2.0);
                    s[4] = lit(3.0) * s[3] * hn / lit(5.0);
                    s[5] = lit(2.0) * s[4] * hn / lit(3.0);
                    s[6] = lit(5.0) * s[5] * hn / lit(7.0);
                    s[7] = lit(3.0) * s[6] * hn / lit(4.0);
                    s[8] = lit(7.0) * s[7] * hn / lit(9.0);

                    for k in 0..n3 {
                        let b = &self.b[k];
                        let xk = -self.csx[k]
                            + (s[8] * b[6]
                                + s[7] * b[5]
                                + s[6] * b[4]
                                + s[5] * b[3]
                                + s[4] * b[2]
                                + s[3] * b[1]
                                + s[2] * b[0]
                                + s[1] * self.a0[k]
                                + s[0] * self.v0[k]);
                        self.xs[k] = xk + self.x0[k];
                    }

                    let xs = std::mem::take(&mut self.xs);
                    let mut at = std::mem::take(&mut self.at);
                    self.accelerations(&xs, &mut at);
                    self.xs = xs;

                    let r = &self.rr;
                    let c = &self.c;
                    let mut max_a = T::zero();
                    let mut max_db6 = T::zero();
                    for k in 0..n3 {
                        let gk = at[k] - self.a0[k];
                        let g = &mut self.g[k];
                        let b = &mut self.b[k];
                        let cs = &mut self.csb[k];
                        match n {
                            1 => {
                                let tmp = g[0];
                                g[0] = gk * r[0];
                                let t = g[0] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t);
                            }
                            2 => {
                                let tmp = g[1];
                                g[1] = (gk * r[1] - g[0]) * r[2];
                                let t = g[1] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[0]);
                                add_cs(&mut b[1], &mut cs[1], t);
                            }
                            3 => {
                                let tmp = g[2];
                                g[2] = ((gk * r[3] - g[0]) * r[4] - g[1]) * r[5];
                                let t = g[2] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[1]);
                                add_cs(&mut b[1], &mut cs[1], t * c[2]);
                                add_cs(&mut b[2], &mut cs[2], t);
                            }
                            4 => {
                                let tmp = g[3];
                                g[3] = (((gk * r[6] - g[0]) * r[7] - g[1]) * r[8] - g[2]) * r[9];
                                let t = g[3] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[3]);
                                add_cs(&mut b[1], &mut cs[1], t * c[4]);
                                add_cs(&mut b[2], &mut cs[2], t * c[5]);
                                add_cs(&mut b[3], &mut cs[3], t);
                            }
                            5 => {
                                let tmp = g[4];
                                g[4] = ((((gk * r[10] - g[0]) * r[11] - g[1]) * r[12] - g[2]) * r[13] - g[3]) * r[14];
                                let t = g[4] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[6]);
                                add_cs(&mut b[1], &mut cs[1], t * c[7]);
                                add_cs(&mut b[2], &mut cs[2], t * c[8]);
                                add_cs(&mut b[3], &mut cs[3], t * c[9]);
                                add_cs(&mut b[4], &mut cs[4], t);
                            }
                            6 => {
                                let tmp = g[5];
                                g[5] = (((((gk * r[15] - g[0]) * r[16] - g[1]) * r[17] - g[2]) * r[18] - g[3]) * r[19]
                                    - g[4])
                                    * r[20];
                                let t = g[5] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[10]);
                                add_cs(&mut b[1], &mut cs[1], t * c[11]);
                                add_cs(&mut b[2], &mut cs[2], t * c[12]);
                                add_cs(&mut b[3], &mut cs[3], t * c[13]);
                                add_cs(&mut b[4], &mut cs[4], t * c[14]);
                                add_cs(&mut b[5], &mut cs[5], t);
                            }
                            _ => {
                                let tmp = g[6];
                                g[6] = ((((((gk * r[21] - g[0]) * r[22] - g[1]) * r[23] - g[2]) * r[24] - g[3]) * r[25]
                                    - g[4])
                                    * r[26]
                                    - g[5])
                                    * r[27];
                                let t = g[6] - tmp;
                                add_cs(&mut b[0], &mut cs[0], t * c[15]);
                                add_cs(&mut b[1], &mut cs[1], t * c[16]);
                                add_cs(&mut b[2], &mut cs[2], t * c[17]);
                                add_cs(&mut b[3], &mut cs[3], t * c[18]);
                                add_cs(&mut b[4], &mut cs[4], t * c[19]);
                                add_cs(&mut b[5], &mut cs[5], t * c[20]);
                                add_cs(&mut b[6], &mut cs[6], t);
                                max_a = max_a.max(at[k].abs());
                                max_db6 = max_db6.max(t.abs());
                            }
                        }
                    }
                    if n == 7 {
                        pc_error = if max_a > T::zero() { max_db6 / max_a } else { T::zero() };
                    }
                    self.at = at;
                }
            }

            // Global error estimate from the highest-order coefficient.
            let mut max_a = T::zero();
            let mut max_b6 = T::zero();
            for k in 0..n3 {
                max_a = max_a.max(self.at[k].abs());
                max_b6 = max_b6.max(self.b[k][6].abs());
            }
            let err = max_b6 / max_a;
            let dt_done = dt;
            let growth = lit(1.0 / SAFETY);
            let mut dt_new = if err.is_normal() {
                (self.epsilon / err).powf(lit(1.0 / 7.0)) * dt_done
            } else {
                dt_done * growth
            };

            if (dt_new / dt_done).abs() < lit(SAFETY) {
                self.rejected += 1;
                self.dt = dt_new;
                if !dt_new.is_finite() || dt_new == T::zero() || self.t + dt_new == self.t {
                    return Err(Error::Numerical {
                        time: self.t.to_f64_lossy(),
                        reason: "step size underflow".into(),
                    });
                }
                continue;
            }
            let unconstrained = dt_new;
            if (dt_new / dt_done).abs() > growth {
                dt_new = dt_done * growth;
            }

            let dt2 = dt_done * dt_done;
            for k in 0..n3 {
                let b = self.b[k];
                let (x, csx) = (&mut self.x0[k], &mut self.csx[k]);
                add_cs(x, csx, b[6] / lit(72.0) * dt2);
                add_cs(x, csx, b[5] / lit(56.0) * dt2);
                add_cs(x, csx, b[4] / lit(42.0) * dt2);
                add_cs(x, csx, b[3] / lit(30.0) * dt2);
                add_cs(x, csx, b[2] / lit(20.0) * dt2);
                add_cs(x, csx, b[1] / lit(12.0) * dt2);
                add_cs(x, csx, b[0] / lit(6.0) * dt2);
                add_cs(x, csx, self.a0[k] / lit(2.0) * dt2);
                add_cs(x, csx, self.v0[k] * dt_done);

                let (v, csv) = (&mut self.v0[k], &mut self.csv[k]);
                add_cs(v, csv, b[6] / lit(8.0) * dt_done);
                add_cs(v, csv, b[5] / lit(7.0) * dt_done);
                add_cs(v, csv, b[4] / lit(6.0) * dt_done);
                add_cs(v, csv, b[3] / lit(5.0) * dt_done);
                add_cs(v, csv, b[2] / lit(4.0) * dt_done);
                add_cs(v, csv, b[1] / lit(3.0) * dt_done);
                add_cs(v, csv, b[0] / lit(2.0) * dt_done);
                add_cs(v, csv, self.a0[k] * dt_done);
            }
            if !self.x0.iter().chain(&self.v0).all(|v| v.is_finite()) {
                return Err(Error::Numerical { time: self.t.to_f64_lossy(), reason: "non-finite state".into() });
            }

            self.t += dt_done;
            self.dt_last_done = dt_done;
            self.br.copy_from_slice(&self.b);
            self.er.copy_from_slice(&self.e);
            self.dt = if clipped {
                // a step shortened to hit an output time says little about
                // the natural step, so keep whichever is smaller
                if unconstrained.abs() < trial.abs() {
                    unconstrained
                } else {
                    trial
                }
            } else {
                dt_new
            };

            let x = std::mem::take(&mut self.x0);
            let mut a = std::mem::take(&mut self.a0);
            self.accelerations(&x, &mut a);
            self.x0 = x;
            self.a0 = a;
            self.steps += 1;
            return Ok(clipped);
        }
    }

    /// Integrates until `target` (forwards or backwards), the wall-clock
    /// `deadline`, or the step budget, whichever comes first.
    pub fn advance_to(&mut self, target: T, deadline: Option<Instant>, max_steps: Option<u64>) -> Result<Advance> {
        while self.t != target {
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    return Ok(Advance::WallClock);
                }
            }
            if let Some(m) = max_steps {
                if self.steps >= m {
                    return Ok(Advance::StepLimit);
                }
            }
            let remaining = target - self.t;
            if self.step(remaining)? {
                self.t = target;
            }
        }
        Ok(Advance::Reached)
    }
}

/// Trajectory sampled on a uniform output grid.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<CartesianSystem<T>>,
    /// `|E(t) - E0| / |E0|` per snapshot.
    pub energy_drift: Vec<T>,
    pub completed: bool,
    pub wall_time: f64,
    pub steps: u64,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &CartesianSystem<T> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_energy_drift(&self) -> T {
        *self.energy_drift.last().expect("trajectory holds the initial state")
    }
}

/// Uniform grid `0, Δ, 2Δ, …, t_end` with `samples_per_period` points per
/// `period`. The last point is exactly `t_end`.
pub fn output_grid<T: Real>(t_end: T, period: T, samples_per_period: usize) -> Vec<T> {
    let spacing = period / T::from_usize(samples_per_period).expect("sample count");
    let n = (t_end / spacing).round().to_usize().unwrap_or(1).max(1);
    let nt = T::from_usize(n).expect("grid size");
    (0..=n).map(|k| t_end * T::from_usize(k).expect("grid index") / nt).collect()
}

/// Integrates `sys` to `t_end`, recording snapshots every
/// `period / cfg.output_samples_per_outer_orbit`.
///
/// Hitting the wall-clock cap or step budget is not an error: the returned
/// trajectory has `completed == false` and holds the snapshots reached so far.
pub fn integrate<T: Real>(
    sys: &CartesianSystem<T>,
    t_end: T,
    period: T,
    cfg: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    if !(t_end > T::zero()) {
        return Err(Error::Domain(format!("t_end {t_end} must be positive")));
    }
    let start = Instant::now();
    let deadline = cfg.deadline_from(start);
    let grid = output_grid(t_end, period, cfg.output_samples_per_outer_orbit);
    let mut ias = Ias15::new(sys, cfg)?;
    let e0 = total_energy(sys)?;

    let mut traj = Trajectory {
        times: vec![T::zero()],
        states: vec![sys.clone()],
        energy_drift: vec![T::zero()],
        completed: false,
        wall_time: 0.0,
        steps: 0,
    };
    let mut completed = true;
    for &t in &grid[1..] {
        match ias.advance_to(t, deadline, cfg.max_steps)? {
            Advance::Reached => {}
            Advance::WallClock | Advance::StepLimit => {
                completed = false;
                break;
            }
        }
        let state = ias.state();
        let drift = ((total_energy(&state)? - e0) / e0).abs();
        traj.times.push(t);
        traj.states.push(state);
        traj.energy_drift.push(drift);
    }
    traj.completed = completed;
    traj.wall_time = start.elapsed().as_secs_f64();
    traj.steps = ias.steps();
    Ok(traj)
}
