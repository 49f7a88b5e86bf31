//! Two-parameter shooting on the instability rectangle.
//!
//! The threshold trajectory has F = G = 0; both coordinates are repelled,
//! so the exit time s* (first crossing of H = F² + G² through 1) is
//! maximized by data closest to the threshold. The search exploits the
//! triangular parameter structure — g₀ is strictly monotone in b₀ at
//! fixed λ₀ and in the reduced model sign(exit G) = sign(g₀), while
//! exit F tracks f₀, monotone in λ₀ — and alternates 1-D bisections in
//! b₀ (targeting a G sign change) and λ₀ (targeting an F sign change).
//! The boundary winding number of the exit-angle map is kept as the 2-D
//! degree diagnostic.

use crate::error::{CoreError, Result};
use crate::ode::{self, StopReason};
use crate::reduced::{
    self, h_derivative, instability_coords, RegimeParams, ReducedState,
};
use rayon::prelude::*;
use serde::Serialize;

/// Search rectangle in (λ₀, b₀); must sit inside the admissible box
/// D = {|λ - s₀^{-β}| ≤ s₀^{-β-1/10}, |b - β s₀^{-1}| ≤ s₀^{-1-1/10}}.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShootRectangle {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub b_lo: f64,
    pub b_hi: f64,
}

impl ShootRectangle {
    /// The full admissible box D for the given parameters.
    pub fn full(params: &RegimeParams) -> Self {
        let s0 = params.s0;
        let lam_c = s0.powf(-params.beta);
        let lam_r = s0.powf(-params.beta - 0.1);
        let b_c = params.beta / s0;
        let b_r = s0.powf(-1.1);
        Self {
            lambda_lo: lam_c - lam_r,
            lambda_hi: lam_c + lam_r,
            b_lo: b_c - b_r,
            b_hi: b_c + b_r,
        }
    }

    pub fn validate_within(&self, params: &RegimeParams) -> Result<()> {
        let d = Self::full(params);
        let eps = 1e-12;
        if self.lambda_lo < d.lambda_lo - eps
            || self.lambda_hi > d.lambda_hi + eps
            || self.b_lo < d.b_lo - eps
            || self.b_hi > d.b_hi + eps
            || self.lambda_lo >= self.lambda_hi
            || self.b_lo >= self.b_hi
        {
            return Err(CoreError::OutOfRange(format!(
                "rectangle {self:?} not inside the admissible box {d:?}"
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.lambda_lo + self.lambda_hi),
            0.5 * (self.b_lo + self.b_hi),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitStatus {
    /// H crossed 1 at finite s* < s_max.
    Exited,
    /// H(s₀) was already ≥ 1.
    ImmediateExit,
    /// Ran to s_max without exiting (the sentinel for "never exits").
    ReachedSMax,
    /// The model failed before an exit (full-PDE decomposition loss or
    /// blow-up); treated as an exit with a sentinel angle.
    Truncated,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitRecord {
    pub lambda0: f64,
    pub b0: f64,
    pub s_star: f64,
    pub status: ExitStatus,
    pub exit_f: f64,
    pub exit_g: f64,
    /// atan2(G, F) at exit; NaN for truncated runs.
    pub exit_angle: f64,
    /// dH/ds at exit (analytic for the reduced model); the outgoing
    /// property of the repelling structure is H' > 0.
    pub h_prime: f64,
    /// Initial instability coordinates (F₀, G₀).
    pub f0: f64,
    pub g0: f64,
    pub reason: Option<String>,
}

impl ExitRecord {
    pub fn exited(&self) -> bool {
        matches!(self.status, ExitStatus::Exited | ExitStatus::ImmediateExit)
    }
}

/// A dynamical model the shooting search can drive.
pub trait ShootModel: Sync {
    fn params(&self) -> &RegimeParams;
    /// Integrate from (λ₀, b₀) at s₀ (with the tail foot x₀ = x(s₀))
    /// until H = 1 or s_max.
    fn run(&self, lambda0: f64, b0: f64, s_max: f64) -> ExitRecord;
}

/// The reduced modulation system as a shooting target.
pub struct ReducedShoot {
    pub params: RegimeParams,
    pub tol: f64,
}

impl ReducedShoot {
    pub fn new(params: RegimeParams) -> Self {
        Self { params, tol: 1e-10 }
    }
}

impl ShootModel for ReducedShoot {
    fn params(&self) -> &RegimeParams {
        &self.params
    }

    fn run(&self, lambda0: f64, b0: f64, s_max: f64) -> ExitRecord {
        simulate_until_exit_reduced(&self.params, lambda0, b0, s_max, self.tol)
    }
}

/// Integrate the reduced system, monitoring H(s); stop at the event H = 1
/// (located by bisection on the dense output, |H - 1| < 1e-8) or s_max.
pub fn simulate_until_exit_reduced(
    params: &RegimeParams,
    lambda0: f64,
    b0: f64,
    s_max: f64,
    tol: f64,
) -> ExitRecord {
    let s0 = params.s0;
    let x0 = params.x0();
    let state_of = |s: f64, y: &[f64; 4]| ReducedState {
        s,
        lambda: y[0],
        x: y[1],
        b: y[2],
    };
    let coords0 = instability_coords(
        &ReducedState {
            s: s0,
            lambda: lambda0,
            x: x0,
            b: b0,
        },
        params,
    );
    let f = reduced::reduced_rhs_with_time(params);
    let event = |s: f64, y: &[f64; 4]| instability_coords(&state_of(s, y), params).h - 1.0;
    let check = |s: f64, y: &[f64; 4]| {
        if y[0] > 0.0 && y[1] > 0.0 && y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::IntegrationHalt {
                s,
                reason: "positivity lost".into(),
            })
        }
    };
    let opts = reduced::reduced_ode_options(tol);
    let run = ode::integrate(
        &f,
        s0,
        [lambda0, x0, b0, 0.0],
        s_max,
        &opts,
        Some(&event),
        Some(&check),
    );
    match run {
        Ok(sol) => {
            let (s_star, status) = match sol.stop {
                StopReason::Event { t } if t <= s0 => (s0, ExitStatus::ImmediateExit),
                StopReason::Event { t } => (t, ExitStatus::Exited),
                StopReason::ReachedEnd => (s_max, ExitStatus::ReachedSMax),
            };
            let st = state_of(s_star, &sol.y_end);
            let c = instability_coords(&st, params);
            ExitRecord {
                lambda0,
                b0,
                s_star,
                status,
                exit_f: c.big_f,
                exit_g: c.big_g,
                exit_angle: c.big_g.atan2(c.big_f),
                h_prime: h_derivative(&st, params),
                f0: coords0.big_f,
                g0: coords0.big_g,
                reason: None,
            }
        }
        Err(e) => ExitRecord {
            lambda0,
            b0,
            s_star: s0,
            status: ExitStatus::Truncated,
            exit_f: f64::NAN,
            exit_g: f64::NAN,
            exit_angle: f64::NAN,
            h_prime: f64::NAN,
            f0: coords0.big_f,
            g0: coords0.big_g,
            reason: Some(e.to_string()),
        },
    }
}

/// grid_n × grid_n sweep of exit records over the rectangle, row-major in
/// (λ₀ outer, b₀ inner); cells run concurrently.
pub fn exit_map(
    rect: &ShootRectangle,
    model: &dyn ShootModel,
    grid_n: usize,
    s_max: f64,
) -> Result<Vec<ExitRecord>> {
    if grid_n < 2 {
        return Err(CoreError::OutOfRange(format!("grid_n = {grid_n} < 2")));
    }
    let cells: Vec<(f64, f64)> = (0..grid_n * grid_n)
        .map(|idx| {
            let (i, j) = (idx / grid_n, idx % grid_n);
            let lam = rect.lambda_lo
                + (rect.lambda_hi - rect.lambda_lo) * i as f64 / (grid_n - 1) as f64;
            let b = rect.b_lo + (rect.b_hi - rect.b_lo) * j as f64 / (grid_n - 1) as f64;
            (lam, b)
        })
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(lam, b)| model.run(lam, b, s_max))
        .collect())
}

/// Exit records along the rectangle boundary, counterclockwise starting
/// at (λ_lo, b_lo), `per_side` samples per side.
pub fn boundary_sweep(
    rect: &ShootRectangle,
    model: &dyn ShootModel,
    per_side: usize,
    s_max: f64,
) -> Vec<ExitRecord> {
    assert!(per_side >= 2);
    let mut pts = Vec::with_capacity(4 * per_side);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    for k in 0..per_side {
        let t = k as f64 / per_side as f64;
        pts.push((lerp(rect.lambda_lo, rect.lambda_hi, t), rect.b_lo));
    }
    for k in 0..per_side {
        let t = k as f64 / per_side as f64;
        pts.push((rect.lambda_hi, lerp(rect.b_lo, rect.b_hi, t)));
    }
    for k in 0..per_side {
        let t = k as f64 / per_side as f64;
        pts.push((lerp(rect.lambda_hi, rect.lambda_lo, t), rect.b_hi));
    }
    for k in 0..per_side {
        let t = k as f64 / per_side as f64;
        pts.push((rect.lambda_lo, lerp(rect.b_hi, rect.b_lo, t)));
    }
    pts.par_iter()
        .map(|&(lam, b)| model.run(lam, b, s_max))
        .collect()
}

/// Winding number of a closed angle sequence (wrapped increments summed);
/// also reports the largest single increment as an aliasing guard.
pub fn winding_number(angles: &[f64]) -> (i32, f64) {
    let mut total = 0.0;
    let mut max_step = 0.0f64;
    let n = angles.len();
    for i in 0..n {
        let mut d = angles[(i + 1) % n] - angles[i];
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        total += d;
        max_step = max_step.max(d.abs());
    }
    (
        (total / (2.0 * std::f64::consts::PI)).round() as i32,
        max_step,
    )
}

fn better(a: &ExitRecord, b: &ExitRecord) -> bool {
    // Prefer the sentinel (never exited), then the later exit.
    match (a.status, b.status) {
        (ExitStatus::ReachedSMax, ExitStatus::ReachedSMax) => false,
        (ExitStatus::ReachedSMax, _) => true,
        (_, ExitStatus::ReachedSMax) => false,
        _ => a.s_star > b.s_star,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineOutcome {
    pub best: ExitRecord,
    pub history: Vec<ExitRecord>,
    /// Best s* after each probe (non-decreasing).
    pub best_curve: Vec<f64>,
}

/// Alternating-bisection refinement: a 3×3 probe of the rectangle, then
/// repeated 1-D bisections in b₀ (sign of exit G) and λ₀ (sign of exit F),
/// shrinking toward the threshold; the best record is monotone in the
/// probe count. `budget` counts model runs (minimum 9).
pub fn refine(
    rect: &ShootRectangle,
    model: &dyn ShootModel,
    budget: usize,
    s_max: f64,
) -> Result<RefineOutcome> {
    if budget < 9 {
        return Err(CoreError::OutOfRange(format!("budget = {budget} < 9")));
    }
    let mut history: Vec<ExitRecord> = Vec::new();
    let mut best_curve = Vec::new();
    let mut best: Option<ExitRecord> = None;

    macro_rules! run {
        ($lam:expr, $b:expr) => {{
            let rec = model.run($lam, $b, s_max);
            let improved = best.as_ref().map_or(true, |b| better(&rec, b));
            if improved {
                best = Some(rec.clone());
            }
            history.push(rec.clone());
            best_curve.push(best.as_ref().unwrap().s_star);
            rec
        }};
    }

    // 3×3 probe.
    let mut probe_best: Option<ExitRecord> = None;
    for i in 0..3 {
        for j in 0..3 {
            let lam = rect.lambda_lo + (rect.lambda_hi - rect.lambda_lo) * i as f64 / 2.0;
            let b = rect.b_lo + (rect.b_hi - rect.b_lo) * j as f64 / 2.0;
            let rec = run!(lam, b);
            if probe_best.as_ref().map_or(true, |p| better(&rec, p)) {
                probe_best = Some(rec);
            }
        }
    }
    let mut lam_star = probe_best.as_ref().unwrap().lambda0;
    let mut b_star = probe_best.as_ref().unwrap().b0;
    // Bracket widths; each phase bisects 4 times and hands the other
    // direction an inflated window, since moving one parameter shifts the
    // other's sign-change locus.
    let mut b_width = rect.b_hi - rect.b_lo;
    let mut lam_width = rect.lambda_hi - rect.lambda_lo;

    // Bracketing signs: exit G for the b-search, exit F for the λ-search.
    // Truncated runs fall back to the initial coordinates.
    let g_sign = |r: &ExitRecord| {
        if r.exit_g.is_nan() {
            r.g0 > 0.0
        } else {
            r.exit_g > 0.0
        }
    };
    let f_sign = |r: &ExitRecord| {
        if r.exit_f.is_nan() {
            r.f0 > 0.0
        } else {
            r.exit_f > 0.0
        }
    };

    let mut phase_b = true;
    let mut stalled_phases = 0usize;
    while history.len() < budget {
        let (full_lo, full_hi, width, center) = if phase_b {
            (rect.b_lo, rect.b_hi, b_width, b_star)
        } else {
            (rect.lambda_lo, rect.lambda_hi, lam_width, lam_star)
        };
        let mut lo = (center - 0.5 * width).max(full_lo);
        let mut hi = (center + 0.5 * width).min(full_hi);
        let rec_lo = if phase_b {
            run!(lam_star, lo)
        } else {
            run!(lo, b_star)
        };
        if history.len() >= budget {
            break;
        }
        let rec_hi = if phase_b {
            run!(lam_star, hi)
        } else {
            run!(hi, b_star)
        };
        let sign = |r: &ExitRecord| if phase_b { g_sign(r) } else { f_sign(r) };
        if sign(&rec_lo) == sign(&rec_hi) {
            // No sign change in this window: widen for the next visit (or
            // give up when the full edge already fails in both directions).
            let at_full = lo <= full_lo + 1e-300 && hi >= full_hi - 1e-300;
            if at_full {
                stalled_phases += 1;
                if stalled_phases >= 2 {
                    return Err(CoreError::SearchFailed(format!(
                        "no sign change across either full edge after {} probes",
                        history.len()
                    )));
                }
            } else if phase_b {
                b_width = (b_width * 4.0).min(full_hi - full_lo);
            } else {
                lam_width = (lam_width * 4.0).min(full_hi - full_lo);
            }
            phase_b = !phase_b;
            continue;
        }
        stalled_phases = 0;
        let lo_sign = sign(&rec_lo);
        for _ in 0..4 {
            if history.len() >= budget {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let rec = if phase_b {
                run!(lam_star, mid)
            } else {
                run!(mid, b_star)
            };
            if sign(&rec) == lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if phase_b {
            b_star = 0.5 * (lo + hi);
            b_width = (hi - lo) * 4.0;
        } else {
            lam_star = 0.5 * (lo + hi);
            lam_width = (hi - lo) * 4.0;
        }
        phase_b = !phase_b;
    }

    Ok(RefineOutcome {
        best: best.unwrap(),
        history,
        best_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduced::params_from_beta;

    const INT_Q: f64 = 3.450821807669628;

    fn setup() -> (RegimeParams, ReducedShoot) {
        let params = params_from_beta(0.4, INT_Q, 100.0).unwrap();
        (params, ReducedShoot::new(params))
    }

    #[test]
    fn threshold_data_never_exits() {
        let (params, model) = setup();
        let rec = model.run(params.lambda0(), params.b0(), 100.0 * params.s0);
        assert_eq!(rec.status, ExitStatus::ReachedSMax);
        assert!(rec.exit_f.abs() < 1e-4 && rec.exit_g.abs() < 1e-4,
            "threshold coords at s_max: F = {}, G = {}", rec.exit_f, rec.exit_g);
    }

    #[test]
    fn perturbed_b_exits_with_dominant_g() {
        let (params, model) = setup();
        // The full edge perturbation has |G₀| = s₀^{1/10} > 1 at desk
        // scale: exit is immediate.
        let edge = model.run(params.lambda0(), params.b0() + params.s0.powf(-1.1), 100.0 * params.s0);
        assert!(edge.exited());
        // A fraction of it produces a genuine excursion.
        let b0 = params.b0() + 0.3 * params.s0.powf(-1.1);
        let rec = model.run(params.lambda0(), b0, 100.0 * params.s0);
        assert_eq!(rec.status, ExitStatus::Exited);
        assert!(rec.s_star > params.s0 && rec.s_star < 100.0 * params.s0);
        assert!(rec.exit_g.abs() > rec.exit_f.abs(), "G should dominate");
        assert!(rec.exit_g > 0.0);
        // H = 1 at the located exit within the event tolerance.
        let h = rec.exit_f * rec.exit_f + rec.exit_g * rec.exit_g;
        assert!((h - 1.0).abs() < 1e-8, "H(s*) = {h}");
        // Outgoing: H'(s*) > 0, and the asymptotic floor 1/(20 s*) is
        // reported alongside.
        assert!(rec.h_prime > 0.0);
        println!("H'(s*) = {:e} vs floor {:e}", rec.h_prime, 1.0 / (20.0 * rec.s_star));
    }

    #[test]
    fn shrinking_perturbations_delay_exit() {
        let (params, model) = setup();
        let mut last = params.s0;
        for k in 1..5 {
            let b0 = params.b0() + params.s0.powf(-1.1) * 0.5f64.powi(k);
            let rec = model.run(params.lambda0(), b0, 1e4 * params.s0);
            assert!(rec.s_star > last, "s* not increasing at k = {k}");
            last = rec.s_star;
        }
    }

    #[test]
    fn exit_map_structure() {
        let (params, model) = setup();
        let rect = ShootRectangle::full(&params);
        rect.validate_within(&params).unwrap();
        let s_max = 100.0 * params.s0;
        let map = exit_map(&rect, &model, 3, s_max).unwrap();
        assert_eq!(map.len(), 9);
        // Center cell is the exact threshold: the sentinel beats every
        // other cell.
        let center = &map[4];
        assert_eq!(center.status, ExitStatus::ReachedSMax);
        for (k, rec) in map.iter().enumerate() {
            if k != 4 {
                assert!(rec.s_star < s_max, "cell {k} should exit");
            }
        }
        // Corners of D exit on the s₀ scale (the g and f shifts partially
        // cancel at the (hi, hi) corner, which lingers longest).
        for k in [0usize, 2, 6, 8] {
            assert!(
                map[k].s_star < 10.0 * params.s0,
                "corner {k} exits at {}",
                map[k].s_star
            );
        }
        assert!(exit_map(&rect, &model, 1, s_max).is_err());
    }

    #[test]
    fn boundary_angles_wind_once() {
        let (params, model) = setup();
        let rect = ShootRectangle::full(&params);
        let sweep = boundary_sweep(&rect, &model, 16, 50.0 * params.s0);
        let angles: Vec<f64> = sweep.iter().map(|r| r.exit_angle).collect();
        assert!(angles.iter().all(|a| a.is_finite()));
        let (winding, max_step) = winding_number(&angles);
        assert_eq!(winding, 1, "degree must be 1");
        // Continuity of the angle along the boundary (no aliasing).
        assert!(max_step < std::f64::consts::PI, "angle step {max_step}");
    }

    #[test]
    fn winding_number_synthetic_loops() {
        let n = 64;
        let ccw: Vec<f64> = (0..n)
            .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64)
            .collect();
        assert_eq!(winding_number(&ccw).0, 1);
        let cw: Vec<f64> = ccw.iter().rev().cloned().collect();
        assert_eq!(winding_number(&cw).0, -1);
        let wobble: Vec<f64> = (0..n)
            .map(|k| 0.3 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin())
            .collect();
        assert_eq!(winding_number(&wobble).0, 0);
    }

    #[test]
    fn refine_deep_search() {
        let (params, model) = setup();
        let rect = ShootRectangle::full(&params);
        let s_max = 1e4 * params.s0;
        let out = refine(&rect, &model, 40, s_max).unwrap();
        assert_eq!(out.history.len(), 40);
        // Monotone growth of the best exit time.
        for w in out.best_curve.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(
            out.best.s_star >= 10.0 * params.s0,
            "best s* = {} after 40 probes",
            out.best.s_star
        );
        // Every finite exit in the history is outgoing.
        for rec in &out.history {
            if rec.status == ExitStatus::Exited {
                assert!(rec.h_prime > 0.0, "H' = {} at s* = {}", rec.h_prime, rec.s_star);
            }
        }
    }

    #[test]
    fn refine_degenerate_budget_is_probe_max() {
        let (params, model) = setup();
        let rect = ShootRectangle::full(&params);
        let out = refine(&rect, &model, 9, 100.0 * params.s0).unwrap();
        assert_eq!(out.history.len(), 9);
        // Best of the 3×3 probe: the center (threshold) sentinel.
        assert_eq!(out.best.status, ExitStatus::ReachedSMax);
        assert!(refine(&rect, &model, 8, 100.0 * params.s0).is_err());
    }
}
