//! Dormand–Prince 5(4) stepping with proportional-integral step control.

use crate::error::{Error, Result};
use crate::linalg::C64;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Step-control settings. The system is autonomous, so stage times are not needed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    /// Bound on the max-norm local error per step.
    pub tol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    /// Steps below `h_min · max(1, t)` abort with [`Error::StepSizeUnderflow`].
    pub h_min: f64,
    /// Upper limit on a single step.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { tol: 1e-9, h_init: None, h_min: 1e-12, h_max: f64::INFINITY, max_steps: 10_000_000 }
    }
}

/// Counters reported by the integrator.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest accepted local error estimate (max norm).
    pub max_local_error: f64,
    pub last_step: f64,
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Integrates the autonomous system `y' = f(y)` and calls `observe(k, t_k, y)`
/// at every point of `times` (which must start at the initial time and increase).
pub fn integrate<F, O>(f: F, mut y: Vec<C64>, times: &[f64], ctl: &StepControl, mut observe: O) -> Result<IntegratorStats>
where
    F: Fn(&[C64], &mut [C64]),
    O: FnMut(usize, f64, &[C64]) -> Result<()>,
{
    if !(ctl.tol > 0.0) {
        return Err(Error::Precondition("tolerance must be positive".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("time grid must be nonempty and strictly increasing".into()));
    }
    let n = y.len();
    let mut stats = IntegratorStats::default();
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); n]).collect();
    let mut stage = vec![C64::new(0.0, 0.0); n];
    let mut t = times[0];
    observe(0, t, &y)?;
    if times.len() == 1 {
        return Ok(stats);
    }

    f(&y, &mut k[0]);
    stats.evaluations += 1;
    let mut h = match ctl.h_init {
        Some(h) => h,
        None => initial_step(&f, &y, &k[0], ctl.tol, &mut stats),
    }
    .min(ctl.h_max);
    let mut err_prev: f64 = 1e-4;

    for (idx, &target) in times.iter().enumerate().skip(1) {
        while t < target {
            if stats.accepted + stats.rejected >= ctl.max_steps {
                return Err(Error::StepSizeUnderflow { t, h });
            }
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let step = if last { remaining } else { h };
            if step < ctl.h_min * t.abs().max(1.0) && !last {
                return Err(Error::StepSizeUnderflow { t, h: step });
            }
            for s in 1..7 {
                let row = &A[s];
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, &a) in row.iter().enumerate().take(s) {
                        if a != 0.0 {
                            acc += k[j][i] * (step * a);
                        }
                    }
                    stage[i] = acc;
                }
                f(&stage, &mut k[s]);
            }
            stats.evaluations += 6;
            // The last stage point is the fifth-order solution and k[6] its slope.
            let mut err = 0.0f64;
            for i in 0..n {
                let mut e = C64::new(0.0, 0.0);
                for (j, &c) in E.iter().enumerate() {
                    if c != 0.0 {
                        e += k[j][i] * c;
                    }
                }
                err = err.max((e * step).norm());
            }
            let ratio = err / ctl.tol;
            if ratio <= 1.0 {
                y.copy_from_slice(&stage);
                t = if last { target } else { t + step };
                k.swap(0, 6);
                stats.accepted += 1;
                stats.max_local_error = stats.max_local_error.max(err);
                stats.last_step = step;
                let fac = 0.9 * ratio.max(1e-10).powf(-0.17) * err_prev.powf(0.04);
                let grown = step * fac.clamp(0.2, 10.0);
                if !last || grown < h {
                    h = grown.min(ctl.h_max);
                }
                err_prev = ratio.max(1e-4);
            } else {
                stats.rejected += 1;
                h = step * (0.9 * ratio.powf(-0.2)).max(0.2);
                if h < ctl.h_min * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
        observe(idx, target, &y)?;
    }
    Ok(stats)
}

fn initial_step<F: Fn(&[C64], &mut [C64])>(f: &F, y: &[C64], f0: &[C64], tol: f64, stats: &mut IntegratorStats) -> f64 {
    let d0 = max_abs(y) / tol;
    let d1 = max_abs(f0) / tol;
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<C64> = y.iter().zip(f0).map(|(a, b)| a + b * h0).collect();
    let mut f1 = vec![C64::new(0.0, 0.0); y.len()];
    f(&y1, &mut f1);
    stats.evaluations += 1;
    let d2 = f1.iter().zip(f0).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / tol / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1)
}
