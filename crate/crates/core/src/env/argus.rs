//! Linear-axis controller tuning in simulation.
//!
//! Plant: drive lag, five resonance/anti-resonance pairs and a rigid-body
//! double integrator (order 13), zero-order-hold discretized, with the force
//! command delayed by the dead time. Controller: position P loop with
//! velocity feedforward around a velocity PI loop, all at the sample rate.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::EnvError;

/// Gains (PKP, VKP, VKI).
pub const BOUNDS: [(f64, f64); 3] = [(100.0, 400.0), (300.0, 1200.0), (500.0, 4000.0)];
pub const SAFE_SEED: [f64; 3] = [200.0, 800.0, 1000.0];

pub const SAMPLE_RATE: f64 = 10_000.0;
pub const T_END: f64 = 1.2;
pub const DEAD_TIME: f64 = 2e-3;
pub const JERK: f64 = 200.0;
pub const MAX_ACCEL: f64 = 20.0;
pub const MAX_VEL: f64 = 1.0;
pub const STEP_RANGE: (f64, f64) = (1e-5, 1e-2);

/// (f_n Hz, lambda_n, f_d Hz, lambda_d): anti-resonance over resonance.
pub const RESONANCES: [(f64, f64, f64, f64); 5] = [
    (390.0, 0.1, 400.0, 0.1),
    (475.0, 0.03, 500.0, 0.05),
    (690.0, 0.03, 800.0, 0.06),
    (870.0, 0.03, 900.0, 0.04),
    (1050.0, 0.03, 1100.0, 0.06),
];

/// FFT windows as fractions of the Nyquist frequency, and the weight of the
/// second window.
pub const FFT_WINDOW_1: (f64, f64) = (0.03, 0.07);
pub const FFT_WINDOW_2: (f64, f64) = (0.08, 0.1);
pub const FFT_WEIGHT: f64 = 5.0;
pub const KAPPA_FACTOR: f64 = 1.5;

const MASS: f64 = 1.0;
const DRIVE_BANDWIDTH_HZ: f64 = 2000.0;
// gain scalings: velocity-loop crossover VKP * VEL_SCALE / MASS rad/s, PI
// zero at VKI * INT_SCALE rad/s, position-loop bandwidth PKP * POS_SCALE rad/s
const VEL_SCALE: f64 = 0.3125;
const INT_SCALE: f64 = 0.0625;
const POS_SCALE: f64 = 0.3;
const DIVERGENCE_FACTOR: f64 = 1e3;

/// Single-input single-output state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `(b2 s² + b1 s + b0) / (s² + a1 s + a0)` in controllable form.
    fn biquad(b2: f64, b1: f64, b0: f64, a1: f64, a0: f64) -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -a0, -a1]),
            b: DVector::from_vec(vec![0.0, 1.0]),
            c: RowDVector::from_vec(vec![b0 - a0 * b2, b1 - a1 * b2]),
            d: b2,
        }
    }

    /// `self` followed by `next`.
    fn then(&self, next: &StateSpace) -> Self {
        let (n1, n2) = (self.order(), next.order());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        let mut b = DVector::zeros(n1 + n2);
        b.rows_mut(0, n1).copy_from(&self.b);
        b.rows_mut(n1, n2).copy_from(&(&next.b * self.d));
        let mut c = RowDVector::zeros(n1 + n2);
        c.columns_mut(0, n1).copy_from(&(&self.c * next.d));
        c.columns_mut(n1, n2).copy_from(&next.c);
        Self {
            a,
            b,
            c,
            d: self.d * next.d,
        }
    }

    /// Zero-order-hold discretization via the augmented matrix exponential.
    pub fn discretize(&self, ts: f64) -> Self {
        let n = self.order();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.a * ts));
        m.view_mut((0, n), (n, 1)).copy_from(&(&self.b * ts));
        let e = m.exp();
        Self {
            a: e.view((0, 0), (n, n)).into_owned(),
            b: e.view((0, n), (n, 1)).column(0).into_owned(),
            c: self.c.clone(),
            d: self.d,
        }
    }
}

/// Natural frequency in rad/s from a peak frequency in Hz.
fn omega(f_hz: f64, lambda: f64) -> f64 {
    2.0 * PI * f_hz / (1.0 - 2.0 * lambda * lambda).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgusPlant {
    pub continuous: StateSpace,
    pub discrete: StateSpace,
    pub delay: usize,
    pub ts: f64,
}

impl ArgusPlant {
    pub fn new() -> Self {
        let wb = 2.0 * PI * DRIVE_BANDWIDTH_HZ;
        let mut sys = StateSpace {
            a: DMatrix::from_element(1, 1, -wb),
            b: DVector::from_element(1, 1.0),
            c: RowDVector::from_element(1, wb),
            d: 0.0,
        };
        for &(f_n, l_n, f_d, l_d) in &RESONANCES {
            let (wn, wd) = (omega(f_n, l_n), omega(f_d, l_d));
            // (s²/wn² + 2 l_n s/wn + 1) / (s²/wd² + 2 l_d s/wd + 1)
            let k = wd * wd / (wn * wn);
            sys = sys.then(&StateSpace::biquad(k, k * 2.0 * l_n * wn, k * wn * wn, 2.0 * l_d * wd, wd * wd));
        }
        let rigid = StateSpace {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DVector::from_vec(vec![0.0, 1.0 / MASS]),
            c: RowDVector::from_vec(vec![1.0, 0.0]),
            d: 0.0,
        };
        let continuous = sys.then(&rigid);
        let ts = 1.0 / SAMPLE_RATE;
        let discrete = continuous.discretize(ts);
        Self {
            continuous,
            discrete,
            delay: (DEAD_TIME * SAMPLE_RATE).round() as usize,
            ts,
        }
    }

    pub fn shared() -> &'static ArgusPlant {
        static PLANT: OnceLock<ArgusPlant> = OnceLock::new();
        PLANT.get_or_init(ArgusPlant::new)
    }

    pub fn order(&self) -> usize {
        self.continuous.order()
    }

    /// Discrete-time frequency response from force to position, dead time
    /// included.
    pub fn frequency_response(&self, f_hz: f64) -> Complex<f64> {
        let sys = &self.discrete;
        let n = sys.order();
        let w = 2.0 * PI * f_hz * self.ts;
        let z = Complex::new(w.cos(), w.sin());
        let mut m = sys.a.map(|v| Complex::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let b = sys.b.map(|v| Complex::new(v, 0.0));
        let x = m.lu().solve(&b).expect("z is not an eigenvalue on the unit circle");
        let c = sys.c.map(|v| Complex::new(v, 0.0));
        let h = (c * x)[0] + Complex::new(sys.d, 0.0);
        h * z.powi(-(self.delay as i32))
    }
}

impl Default for ArgusPlant {
    fn default() -> Self {
        Self::new()
    }
}

/// Jerk-limited point-to-point reference: seven constant-jerk segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SCurve {
    /// Segment start times, jerks and start states (p, v, a).
    starts: Vec<(f64, f64, [f64; 3])>,
    duration: f64,
}

impl SCurve {
    pub fn new(distance: f64, jerk: f64, a_max: f64, v_max: f64) -> Self {
        let mut t1 = (a_max / jerk).min((v_max / jerk).sqrt());
        let mut t2 = ((v_max - jerk * t1 * t1) / (jerk * t1)).max(0.0);
        let mut t3;
        let v_peak = jerk * t1 * (t1 + t2);
        let d_ramp = v_peak * (2.0 * t1 + t2);
        if d_ramp <= distance {
            t3 = (distance - d_ramp) / v_peak;
        } else {
            t3 = 0.0;
            // shrink the constant-acceleration phase, then the jerk phase
            let disc = t1 * t1 + 4.0 * distance / (jerk * t1);
            t2 = 0.5 * (-3.0 * t1 + disc.sqrt());
            if t2 < 0.0 {
                t2 = 0.0;
                t1 = (distance / (2.0 * jerk)).cbrt();
            }
        }
        if !t3.is_finite() {
            t3 = 0.0;
        }
        let plan = [
            (t1, jerk),
            (t2, 0.0),
            (t1, -jerk),
            (t3, 0.0),
            (t1, -jerk),
            (t2, 0.0),
            (t1, jerk),
        ];
        let mut starts = Vec::with_capacity(7);
        let (mut t, mut s) = (0.0, [0.0; 3]);
        for (dt, j) in plan {
            starts.push((t, j, s));
            s = advance(s, j, dt);
            t += dt;
        }
        Self { starts, duration: t }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn sample(&self, t: f64) -> [f64; 3] {
        if t >= self.duration {
            let (t0, j, s) = *self.starts.last().expect("seven segments");
            let mut end = advance(s, j, self.duration - t0);
            end[1] = 0.0;
            end[2] = 0.0;
            return end;
        }
        let k = self.starts.iter().rposition(|(t0, _, _)| *t0 <= t).unwrap_or(0);
        let (t0, j, s) = self.starts[k];
        advance(s, j, t - t0)
    }
}

fn advance([p, v, a]: [f64; 3], j: f64, dt: f64) -> [f64; 3] {
    [
        p + v * dt + a * dt * dt / 2.0 + j * dt * dt * dt / 6.0,
        v + a * dt + j * dt * dt / 2.0,
        a + j * dt,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub position_error: Vec<f64>,
    pub velocity_error: Vec<f64>,
    pub move_time: f64,
    pub ts: f64,
}

/// Closed-loop response to an s-curve step of `step_size` meters.
pub fn simulate(plant: &ArgusPlant, gains: &[f64], step_size: f64) -> Result<SimOutput, EnvError> {
    if gains.len() != 3 {
        return Err(EnvError::InvalidParameter(format!("expected 3 gains, got {}", gains.len())));
    }
    let (pkp, vkp, vki) = (gains[0], gains[1], gains[2]);
    let reference = SCurve::new(step_size, JERK, MAX_ACCEL, MAX_VEL);
    let sys = &plant.discrete;
    let ts = plant.ts;
    let steps = (T_END * SAMPLE_RATE).round() as usize;
    let mut x = DVector::zeros(sys.order());
    let mut delay = vec![0.0; plant.delay.max(1)];
    let mut head = 0;
    let mut p_prev = 0.0;
    let mut integral = 0.0;
    let mut pe = Vec::with_capacity(steps);
    let mut ve = Vec::with_capacity(steps);
    let limit = DIVERGENCE_FACTOR * step_size;
    for k in 0..steps {
        let [p_ref, v_ff, _] = reference.sample(k as f64 * ts);
        let p = sys.c.dot(&x.transpose());
        let e = p_ref - p;
        let v_meas = (p - p_prev) / ts;
        p_prev = p;
        let v_cmd = POS_SCALE * pkp * e + v_ff;
        let ev = v_cmd - v_meas;
        integral += ev * ts;
        let u = VEL_SCALE * vkp * (ev + INT_SCALE * vki * integral);
        let u_delayed = if plant.delay == 0 {
            u
        } else {
            let out = delay[head];
            delay[head] = u;
            head = (head + 1) % delay.len();
            out
        };
        x = &sys.a * &x + &sys.b * u_delayed;
        if !e.is_finite() || e.abs() > limit {
            return Err(EnvError::Divergence(format!(
                "position error {e:.3e} m at t={:.4} s for gains {gains:?}",
                k as f64 * ts
            )));
        }
        pe.push(e);
        ve.push(ev);
    }
    Ok(SimOutput {
        position_error: pe,
        velocity_error: ve,
        move_time: reference.duration(),
        ts,
    })
}

/// Sample period times the total variation of the position error after the
/// reference has stopped.
pub fn tv_objective(out: &SimOutput) -> f64 {
    let start = ((out.move_time / out.ts).ceil() as usize).min(out.position_error.len());
    let tail = &out.position_error[start..];
    out.ts * tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
}

/// Weighted peak FFT magnitude of the velocity error in the two windows,
/// normalized by the signal length.
pub fn fft_max(out: &SimOutput) -> f64 {
    let n = out.velocity_error.len();
    let mut buf: Vec<Complex<f64>> = out.velocity_error.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = |(lo, hi): (f64, f64)| {
        (0..=n / 2)
            .filter(|&k| {
                let nu = 2.0 * k as f64 / n as f64;
                lo <= nu && nu <= hi
            })
            .map(|k| buf[k].norm() / n as f64)
            .fold(0.0, f64::max)
    };
    peak(FFT_WINDOW_1) + FFT_WEIGHT * peak(FFT_WINDOW_2)
}

/// One task: a step size with its constraint limit and divergence penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgusParams {
    pub step_size: f64,
    pub kappa: f64,
    pub f_penalty: f64,
}

impl ArgusParams {
    /// Calibrates the constraint limit against the safe seed gains.
    pub fn for_step_size(step_size: f64) -> Result<Self, EnvError> {
        if !(STEP_RANGE.0..=STEP_RANGE.1).contains(&step_size) {
            return Err(EnvError::InvalidParameter(format!(
                "step size {step_size} outside [{}, {}]",
                STEP_RANGE.0, STEP_RANGE.1
            )));
        }
        let out = simulate(ArgusPlant::shared(), &SAFE_SEED, step_size)?;
        Ok(Self {
            step_size,
            kappa: KAPPA_FACTOR * fft_max(&out),
            f_penalty: 100.0 * tv_objective(&out),
        })
    }

    /// Raw `(f, q)`; a diverging rollout returns the penalty objective and a
    /// constraint value of `kappa`, i.e. a clear violation.
    pub fn evaluate(&self, gains: &[f64]) -> (f64, f64) {
        match simulate(ArgusPlant::shared(), gains, self.step_size) {
            Ok(out) => (tv_objective(&out), fft_max(&out) - self.kappa),
            Err(e) => {
                log::warn!("{e}");
                (self.f_penalty, self.kappa)
            }
        }
    }
}
