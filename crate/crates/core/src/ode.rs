//! Embedded adaptive Runge-Kutta integration (Dormand-Prince 5(4)) with
//! cubic-Hermite dense output and event location.

use crate::error::{CoreError, Result};

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One accepted integration step with endpoint derivatives, enough for
/// cubic-Hermite reconstruction anywhere inside.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub f0: [f64; N],
    pub f1: [f64; N],
}

impl<const N: usize> StepRecord<N> {
    /// Cubic Hermite interpolation at t in [t0, t1].
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] =
                h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
        out
    }
}

/// Why the integration stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    ReachedEnd,
    /// Event function crossed zero from below; location refined by
    /// bisection on the dense output.
    Event { t: f64 },
}

pub struct Integration<const N: usize> {
    pub steps: Vec<StepRecord<N>>,
    pub stop: StopReason,
    pub y_end: [f64; N],
    pub t_end: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
}

impl<const N: usize> Integration<N> {
    /// Dense evaluation at any t covered by the accepted steps.
    pub fn sample(&self, t: f64) -> Option<[f64; N]> {
        if self.steps.is_empty() {
            return None;
        }
        let first = &self.steps[0];
        if t < first.t0 - 1e-12 || t > self.t_end + 1e-12 {
            return None;
        }
        if t <= first.t0 {
            return Some(first.y0);
        }
        // Binary search for the covering step.
        let mut lo = 0usize;
        let mut hi = self.steps.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.steps[mid].t1 < t {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Some(self.steps[lo].interpolate(t.min(self.steps[lo].t1)))
    }
}

pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    /// Cap on the step relative to |t|; keeps the cubic-Hermite dense
    /// output at the accuracy of the integrator on log-spanning runs.
    pub h_max_rel: Option<f64>,
    /// Event refinement tolerance on the event function value.
    pub event_value_tol: f64,
    /// Event refinement tolerance on the abscissa, relative to |t|.
    pub event_t_rel_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            h_max_rel: None,
            event_value_tol: 1e-8,
            event_t_rel_tol: 1e-10,
        }
    }
}

/// Integrate y' = f(t, y) from t0 to t_end (t_end > t0).
///
/// `event`: optional monitor g(t, y); integration stops at the first
/// upcrossing g >= 0 (checked per accepted step, located by bisection).
/// `check`: state validity predicate evaluated after each accepted step;
/// an Err aborts the integration.
pub fn integrate<const N: usize>(
    f: &dyn Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
    event: Option<&dyn Fn(f64, &[f64; N]) -> f64>,
    check: Option<&dyn Fn(f64, &[f64; N]) -> Result<()>>,
) -> Result<Integration<N>> {
    assert!(t_end > t0);
    let mut t = t0;
    let mut y = y0;
    let mut dy = f(t, &y);

    if let Some(ev) = event {
        if ev(t0, &y0) >= 0.0 {
            return Ok(Integration {
                steps: Vec::new(),
                stop: StopReason::Event { t: t0 },
                y_end: y0,
                t_end: t0,
                n_accepted: 0,
                n_rejected: 0,
            });
        }
    }

    let span = t_end - t0;
    let mut h = opts.h_init.unwrap_or(span * 1e-4).min(span);
    if let Some(hm) = opts.h_max {
        h = h.min(hm);
    }
    let mut steps = Vec::new();
    let mut n_accepted = 0usize;
    let mut n_rejected = 0usize;

    let mut k = [[0.0f64; N]; 7];
    while t < t_end {
        if let Some(r) = opts.h_max_rel {
            h = h.min(r * t.abs().max(1.0));
        }
        h = h.min(t_end - t);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(CoreError::StepUnderflow { s: t, h });
        }
        k[0] = dy;
        for stage in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(stage) {
                let a = A[stage][j];
                if a != 0.0 {
                    for i in 0..N {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k[stage] = f(t + C[stage] * h, &ys);
        }
        let mut y5 = y;
        let mut y4 = y;
        for (j, kj) in k.iter().enumerate() {
            for i in 0..N {
                y5[i] += h * B5[j] * kj[i];
                y4[i] += h * B4[j] * kj[i];
            }
        }
        // Error estimate against mixed tolerance.
        let mut err = 0.0f64;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((y5[i] - y4[i]).abs() / sc);
        }
        if err <= 1.0 || h <= 1e-13 * t.abs().max(1.0) {
            // FSAL: k[6] = f(t+h, y5).
            let f1 = k[6];
            let rec = StepRecord {
                t0: t,
                t1: t + h,
                y0: y,
                y1: y5,
                f0: dy,
                f1,
            };
            t += h;
            y = y5;
            dy = f1;
            n_accepted += 1;

            if let Some(chk) = check {
                chk(t, &y)?;
            }

            if let Some(ev) = event {
                if ev(t, &y) >= 0.0 {
                    // Bisection on the dense output for the upcrossing.
                    let mut lo = rec.t0;
                    let mut hi = rec.t1;
                    let mut t_ev = hi;
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        let ym = rec.interpolate(mid);
                        let g = ev(mid, &ym);
                        if g >= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                        if g.abs() < opts.event_value_tol {
                            t_ev = mid;
                            break;
                        }
                        t_ev = hi;
                        if (hi - lo) < opts.event_t_rel_tol * hi.abs().max(1.0) {
                            break;
                        }
                    }
                    let y_ev = rec.interpolate(t_ev);
                    steps.push(rec);
                    return Ok(Integration {
                        steps,
                        stop: StopReason::Event { t: t_ev },
                        y_end: y_ev,
                        t_end: t_ev,
                        n_accepted,
                        n_rejected,
                    });
                }
            }
            steps.push(rec);
            // PI-free basic controller with safety factor.
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            n_rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if let Some(hm) = opts.h_max {
            h = h.min(hm);
        }
    }

    Ok(Integration {
        steps,
        stop: StopReason::ReachedEnd,
        y_end: y,
        t_end: t,
        n_accepted,
        n_rejected,
    })
}
