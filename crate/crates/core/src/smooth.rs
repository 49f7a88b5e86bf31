//! Smooth (C^∞) transition functions.
//!
//! Several objects are pinned only on zones — the cutoff χ, the tail
//! connector, the weights φ_i and ψ — with freedom in between. All
//! transitions here are built from the classical exp(-1/t) bump, so the
//! stitched functions match their zone formulas together with all
//! derivatives.

/// sigma(t) = exp(-1/t) for t > 0, else 0. C^∞ on the line.
#[inline]
pub fn bump_half(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// C^∞ step: 0 for t <= 0, 1 for t >= 1, strictly increasing between.
#[inline]
pub fn smooth_step(t: f64) -> f64 {
    let a = bump_half(t);
    let b = bump_half(1.0 - t);
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

/// Derivative of [`smooth_step`] (analytic).
#[inline]
pub fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let a = bump_half(t);
    let b = bump_half(1.0 - t);
    let da = a / (t * t);
    let db = -b / ((1.0 - t) * (1.0 - t));
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

/// A C^∞ plateau bump supported on (0, 1): exactly 1 on [0.2, 0.8],
/// flat zero contact at the endpoints. The plateau matters for the
/// monotone welds below: corrections e^{κ·bump} then scale a whole
/// mid-zone band uniformly instead of digging a sharp well whose floor
/// ruins the derivative-ratio constants of the welded weights.
#[inline]
pub fn interior_bump(t: f64) -> f64 {
    smooth_step(t / 0.2) * smooth_step((1.0 - t) / 0.2)
}

/// A strictly positive C^∞ derivative profile on a transition zone [a, c]
/// that matches the branch derivatives `dl` (left) and `dr` (right) to all
/// orders at the endpoints, with total integral pinned to `target`.
///
/// The profile is exp(blend of log-derivatives + kappa * bump); kappa is
/// solved by bisection since the integral is monotone in it. Used to stitch
/// monotone functions whose zone values and slopes are both prescribed —
/// a plain Hermite blend of the values cannot stay monotone here.
#[derive(Debug, Clone, Copy)]
pub struct MonotoneZoneBlend {
    pub a: f64,
    pub c: f64,
    log_dl: f64,
    log_dr: f64,
    kappa: f64,
}

impl MonotoneZoneBlend {
    /// `dl`, `dr`: branch derivatives at the endpoints (must be > 0);
    /// `target`: required integral of the derivative over [a, c]
    /// (= value jump across the zone), must be > 0.
    pub fn new(a: f64, c: f64, dl: f64, dr: f64, target: f64) -> Self {
        assert!(c > a && dl > 0.0 && dr > 0.0 && target > 0.0);
        let mut blend = Self {
            a,
            c,
            log_dl: dl.ln(),
            log_dr: dr.ln(),
            kappa: 0.0,
        };
        // Bisection in kappa; the integral is strictly increasing in kappa
        // and spans (integral outside the bump support, +inf).
        let mut lo = -1.0;
        let mut hi = 1.0;
        while blend.with_kappa(lo).integral() > target {
            lo *= 2.0;
            assert!(lo > -1e4, "zone blend cannot reach target {target}");
        }
        while blend.with_kappa(hi).integral() < target {
            hi *= 2.0;
            assert!(hi < 1e4, "zone blend cannot reach target {target}");
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if blend.with_kappa(mid).integral() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        blend.kappa = 0.5 * (lo + hi);
        blend
    }

    fn with_kappa(&self, kappa: f64) -> Self {
        Self { kappa, ..*self }
    }

    /// The derivative profile; strictly positive on (a, c).
    pub fn deriv(&self, y: f64) -> f64 {
        let t = (y - self.a) / (self.c - self.a);
        if t <= 0.0 {
            return self.log_dl.exp();
        }
        if t >= 1.0 {
            return self.log_dr.exp();
        }
        let s = smooth_step(t);
        ((1.0 - s) * self.log_dl + s * self.log_dr + self.kappa * interior_bump(t)).exp()
    }

    /// ∫_a^y deriv, fixed-order Simpson panels (deterministic).
    pub fn integral_to(&self, y: f64) -> f64 {
        let y = y.min(self.c).max(self.a);
        let panels = 256usize;
        let h = (y - self.a) / panels as f64;
        if h == 0.0 {
            return 0.0;
        }
        let mut s = self.deriv(self.a) + self.deriv(y);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.deriv(self.a + h * i as f64);
        }
        s * h / 3.0
    }

    fn integral(&self) -> f64 {
        self.integral_to(self.c)
    }
}
