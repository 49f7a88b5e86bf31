//! The tail-forced reduced modulation system and its regimes.
//!
//! In rescaled time s (ds/dt = 1/λ³) the geometric parameters obey
//!
//!   λ_s/λ + b = 0,   x_s = λ,   d/ds [ b/λ² + (4c₀/∫Q) λ^{-3/2} x^{-θ} ] = 0,
//!
//! driven by a tail of strength c₀ x^{-θ}. The conserved combination g and
//! the second integral f vanish simul­taneously on the threshold solution
//! λ = s^{-β}, x = s^{1-β}/(1-β), b = β/s; the weighted versions (F, G)
//! are the two instability coordinates of the shooting problem.

use crate::error::{CoreError, Result};
use crate::fitting::{golden_section_min, linear_fit};
use crate::ode::{self, OdeOptions};
use serde::Serialize;

pub const BETA_MAX: f64 = 11.0 / 20.0;
pub const THETA_MAX: f64 = 29.0 / 18.0;

/// Weight exponents of the instability coordinates F = f s^{β/2 + 1/10},
/// G = g s^{1 - 2β + 1/5}.
pub fn f_weight(beta: f64) -> f64 {
    0.5 * beta + 0.1
}
pub fn g_weight(beta: f64) -> f64 {
    1.0 - 2.0 * beta + 0.2
}

pub fn theta_of_beta(beta: f64) -> f64 {
    (1.0 - 0.5 * beta) / (1.0 - beta)
}

pub fn beta_of_theta(theta: f64) -> f64 {
    2.0 * (theta - 1.0) / (2.0 * theta - 1.0)
}

/// Tail strength on the threshold branch:
/// c₀ = -(∫Q/2)(θ-1)(2θ-1)^{θ-1} < 0.
pub fn c0_of_theta(theta: f64, int_q: f64) -> f64 {
    -(int_q / 2.0) * (theta - 1.0) * (2.0 * theta - 1.0).powf(theta - 1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeParams {
    pub beta: f64,
    pub theta: f64,
    pub c0: f64,
    pub int_q: f64,
    pub s0: f64,
}

impl RegimeParams {
    /// Initial tail foot matching the threshold solution, x₀ = x(s₀).
    pub fn x0(&self) -> f64 {
        self.s0.powf(1.0 - self.beta) / (1.0 - self.beta)
    }

    /// Threshold values at s₀.
    pub fn lambda0(&self) -> f64 {
        self.s0.powf(-self.beta)
    }
    pub fn b0(&self) -> f64 {
        self.beta / self.s0
    }
}

pub fn params_from_beta(beta: f64, int_q: f64, s0: f64) -> Result<RegimeParams> {
    if !(0.0 < beta && beta < BETA_MAX) {
        return Err(CoreError::OutOfRange(format!(
            "beta = {beta} outside (0, 11/20)"
        )));
    }
    if s0 <= 1.0 {
        return Err(CoreError::OutOfRange(format!("s0 = {s0} must exceed 1")));
    }
    let theta = theta_of_beta(beta);
    Ok(RegimeParams {
        beta,
        theta,
        c0: c0_of_theta(theta, int_q),
        int_q,
        s0,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReducedState {
    pub s: f64,
    pub lambda: f64,
    pub x: f64,
    pub b: f64,
}

impl ReducedState {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.x > 0.0) && self.lambda.is_finite() && self.x.is_finite() {
            return Err(CoreError::StateInvalid(format!(
                "positivity lost: lambda = {}, x = {}",
                self.lambda, self.x
            )));
        }
        if !(self.lambda.is_finite() && self.x.is_finite() && self.b.is_finite()) {
            return Err(CoreError::StateInvalid("non-finite state".into()));
        }
        Ok(())
    }
}

/// The closed-form threshold solution λ = s^{-β}, x = s^{1-β}/(1-β), b = β/s.
pub fn exact_solution(params: &RegimeParams, s: f64) -> ReducedState {
    ReducedState {
        s,
        lambda: s.powf(-params.beta),
        x: s.powf(1.0 - params.beta) / (1.0 - params.beta),
        b: params.beta / s,
    }
}

/// Right-hand side (λ_s, x_s, b_s). b_s is the exact derivative of the
/// conserved combination (dg/ds = 0), not a truncated expansion:
/// b_s = -2b² - (3/2) b K λ^{1/2} x^{-θ} + θ K λ^{3/2} x^{-θ-1},
/// K = 4c₀/∫Q.
pub fn rhs(state: &ReducedState, params: &RegimeParams) -> Result<[f64; 3]> {
    state.validate()?;
    let k = 4.0 * params.c0 / params.int_q;
    let lam = state.lambda;
    let x = state.x;
    let b = state.b;
    let xt = x.powf(-params.theta);
    let lambda_s = -b * lam;
    let x_s = lam;
    let b_s = -2.0 * b * b - 1.5 * b * k * lam.sqrt() * xt
        + params.theta * k * lam.powf(1.5) * xt / x;
    Ok([lambda_s, x_s, b_s])
}

/// Conserved combination g and the second integral f, plus their weighted
/// instability coordinates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InstabilityCoords {
    pub g: f64,
    pub f: f64,
    pub big_f: f64,
    pub big_g: f64,
    pub h: f64,
}

pub fn instability_coords(state: &ReducedState, params: &RegimeParams) -> InstabilityCoords {
    let g = state.b / (state.lambda * state.lambda)
        + 4.0 / params.int_q * params.c0 * state.lambda.powf(-1.5) * state.x.powf(-params.theta);
    let f = state.lambda.sqrt()
        + 2.0 / params.int_q * params.c0 / (params.theta - 1.0)
            * state.x.powf(1.0 - params.theta);
    let big_f = f * state.s.powf(f_weight(params.beta));
    let big_g = g * state.s.powf(g_weight(params.beta));
    InstabilityCoords {
        g,
        f,
        big_f,
        big_g,
        h: big_f * big_f + big_g * big_g,
    }
}

/// d/ds of H = F² + G² along the reduced flow (g is conserved and
/// f' = -½ λ^{5/2} g exactly, so this is closed-form).
pub fn h_derivative(state: &ReducedState, params: &RegimeParams) -> f64 {
    let c = instability_coords(state, params);
    let wf = f_weight(params.beta);
    let wg = g_weight(params.beta);
    let f_prime = -0.5 * state.lambda.powf(2.5) * c.g;
    let big_f_prime = f_prime * state.s.powf(wf) + wf * c.big_f / state.s;
    let big_g_prime = wg * c.big_g / state.s;
    2.0 * (c.big_f * big_f_prime + c.big_g * big_g_prime)
}

#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub params: RegimeParams,
    pub states: Vec<ReducedState>,
    pub coords: Vec<InstabilityCoords>,
    /// Original time t(s), filled by [`convert_time`].
    pub t: Vec<f64>,
}

impl ReducedTrajectory {
    pub fn series_t_lambda(&self) -> Vec<(f64, f64)> {
        self.t
            .iter()
            .zip(&self.states)
            .map(|(&t, st)| (t, st.lambda))
            .collect()
    }
}

/// Integrate the reduced system from `initial` to `s_end` with relative
/// tolerance `tol`, sampling `n_snapshots` log-uniform snapshots (dense
/// output; the step sequence is adaptive).
///
/// The original time t(s) = ∫ λ³ ds' is accumulated as a fourth state
/// component, i.e. by quadrature at the order of the integrator itself.
pub fn integrate(
    initial: &ReducedState,
    params: &RegimeParams,
    s_end: f64,
    tol: f64,
    n_snapshots: usize,
) -> Result<ReducedTrajectory> {
    assert!(tol > 0.0 && s_end > initial.s && n_snapshots >= 2);
    initial.validate()?;
    let f = reduced_rhs_with_time(params);
    let check = |s: f64, y: &[f64; 4]| {
        if y[0] > 0.0 && y[1] > 0.0 && y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(CoreError::IntegrationHalt {
                s,
                reason: format!("positivity lost (lambda = {}, x = {})", y[0], y[1]),
            })
        }
    };
    let opts = reduced_ode_options(tol);
    let run = ode::integrate(
        &f,
        initial.s,
        [initial.lambda, initial.x, initial.b, 0.0],
        s_end,
        &opts,
        None,
        Some(&check),
    )?;

    let ratio = s_end / initial.s;
    let mut states = Vec::with_capacity(n_snapshots);
    let mut coords = Vec::with_capacity(n_snapshots);
    let mut t = Vec::with_capacity(n_snapshots);
    for j in 0..n_snapshots {
        let s = initial.s * ratio.powf(j as f64 / (n_snapshots - 1) as f64);
        let y = run
            .sample(s.min(run.t_end))
            .expect("snapshot inside integrated span");
        let st = ReducedState {
            s,
            lambda: y[0],
            x: y[1],
            b: y[2],
        };
        coords.push(instability_coords(&st, params));
        states.push(st);
        t.push(y[3]);
    }
    Ok(ReducedTrajectory {
        params: *params,
        states,
        coords,
        t,
    })
}

/// Reduced right-hand side extended with t' = λ³. Invalid states are
/// signalled through NaN and turned into a structured halt by the
/// integrator's validity check.
pub(crate) fn reduced_rhs_with_time(
    params: &RegimeParams,
) -> impl Fn(f64, &[f64; 4]) -> [f64; 4] + '_ {
    move |s: f64, y: &[f64; 4]| {
        let st = ReducedState {
            s,
            lambda: y[0],
            x: y[1],
            b: y[2],
        };
        match rhs(&st, params) {
            Ok(d) => [d[0], d[1], d[2], y[0] * y[0] * y[0]],
            Err(_) => [f64::NAN; 4],
        }
    }
}

pub(crate) fn reduced_ode_options(tol: f64) -> OdeOptions {
    OdeOptions {
        rtol: tol,
        atol: tol * 1e-2,
        h_max_rel: Some(2e-3),
        ..Default::default()
    }
}

/// The (t, λ) series of a trajectory; t was accumulated alongside the
/// integration (t' = λ³), so this is the s ↦ t conversion at integrator
/// order. Validates monotonicity.
pub fn convert_time(traj: &ReducedTrajectory) -> Result<Vec<(f64, f64)>> {
    let n = traj.states.len();
    if n < 3 {
        return Err(CoreError::InsufficientSamples { need: 3, got: n });
    }
    for w in traj.states.windows(2) {
        if w[1].s <= w[0].s {
            return Err(CoreError::StateInvalid("snapshots not monotone in s".into()));
        }
    }
    for w in traj.t.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::StateInvalid("t(s) not monotone".into()));
        }
    }
    Ok(traj
        .t
        .iter()
        .zip(&traj.states)
        .map(|(&t, st)| (t, st.lambda))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    FiniteTimeBlowup,
    ExponentialGrowup,
    PowerGrowup,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeReport {
    pub beta: f64,
    pub theta: f64,
    pub regime: RegimeKind,
    /// ν = β/(3β-1) (finite time), rate 1/3 (exponential),
    /// ν = β/(1-3β) (power grow-up).
    pub predicted_exponent: f64,
    pub fitted_exponent: Option<f64>,
    /// Blow-up time estimate T (finite time) or the fitted rate.
    pub t_or_rate: Option<f64>,
}

const EXP_REGIME_TOL: f64 = 1e-9;

/// Regime determined solely by β against 1/3.
pub fn classify_regime(beta: f64) -> Result<RegimeReport> {
    if !(0.0 < beta && beta < BETA_MAX) {
        return Err(CoreError::OutOfRange(format!(
            "beta = {beta} outside (0, 11/20)"
        )));
    }
    let third = 1.0 / 3.0;
    let (regime, predicted) = if (beta - third).abs() < EXP_REGIME_TOL {
        (RegimeKind::ExponentialGrowup, third)
    } else if beta > third {
        (RegimeKind::FiniteTimeBlowup, beta / (3.0 * beta - 1.0))
    } else {
        (RegimeKind::PowerGrowup, beta / (1.0 - 3.0 * beta))
    };
    Ok(RegimeReport {
        beta,
        theta: theta_of_beta(beta),
        regime,
        predicted_exponent: predicted,
        fitted_exponent: None,
        t_or_rate: None,
    })
}

/// Least-squares exponent fit of a (t, λ) series in the window prescribed
/// by the regime skeleton.
///
/// Finite time: λ ~ C (T-t)^ν with T located by minimizing the fit
/// residual. Exponential: λ ~ C e^{-rt}. Power grow-up: 1/λ ~ C t^ν.
pub fn fit_exponent(series: &[(f64, f64)], skeleton: &RegimeReport) -> Result<RegimeReport> {
    if series.len() < 20 {
        return Err(CoreError::InsufficientSamples {
            need: 20,
            got: series.len(),
        });
    }
    for w in series.windows(2) {
        if w[1].1 >= w[0].1 {
            return Err(CoreError::FitRefused("lambda not strictly decreasing".into()));
        }
    }
    let ts: Vec<f64> = series.iter().map(|p| p.0).collect();
    let lams: Vec<f64> = series.iter().map(|p| p.1).collect();
    let mut out = *skeleton;
    match skeleton.regime {
        RegimeKind::FiniteTimeBlowup => {
            let t_end = *ts.last().unwrap();
            let span = t_end - ts[0];
            let log_lams: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
            let resid = |t_blow: f64| {
                let xs: Vec<f64> = ts.iter().map(|&t| (t_blow - t).ln()).collect();
                linear_fit(&xs, &log_lams).map(|f| f.rms).unwrap_or(f64::MAX)
            };
            let t_blow = golden_section_min(
                t_end + 1e-12 * span.max(1.0),
                t_end + 2.0 * span,
                resid,
                1e-12 * span.max(1.0),
            );
            let xs: Vec<f64> = ts.iter().map(|&t| (t_blow - t).ln()).collect();
            let fit = linear_fit(&xs, &log_lams)?;
            out.fitted_exponent = Some(fit.slope);
            out.t_or_rate = Some(t_blow);
        }
        RegimeKind::ExponentialGrowup => {
            let log_lams: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
            let fit = linear_fit(&ts, &log_lams)?;
            out.fitted_exponent = Some(-fit.slope);
            out.t_or_rate = Some(-fit.slope);
        }
        RegimeKind::PowerGrowup => {
            let pts: Vec<(f64, f64)> = ts
                .iter()
                .zip(&lams)
                .filter(|(t, _)| **t > 0.0)
                .map(|(&t, &l)| (t.ln(), (1.0 / l).ln()))
                .collect();
            if pts.len() < 20 {
                return Err(CoreError::InsufficientSamples {
                    need: 20,
                    got: pts.len(),
                });
            }
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let fit = linear_fit(&xs, &ys)?;
            out.fitted_exponent = Some(fit.slope);
        }
    }
    Ok(out)
}

/// Fitting window: last decade of s, minus the first 20% of the run
/// (transients relax like s^{-1/10}).
pub fn fit_window(traj: &ReducedTrajectory) -> Vec<(f64, f64)> {
    let s0 = traj.states[0].s;
    let s_end = traj.states.last().unwrap().s;
    let s_lo = (s_end / 10.0).max(s0 * (s_end / s0).powf(0.2));
    traj.t
        .iter()
        .zip(&traj.states)
        .filter(|(_, st)| st.s >= s_lo)
        .map(|(&t, st)| (t, st.lambda))
        .collect()
}

/// Integrate and fit in one call; the regime decides a suitable s_end.
pub fn regime_report(params: &RegimeParams, tol: f64) -> Result<RegimeReport> {
    let skeleton = classify_regime(params.beta)?;
    // Power grow-up needs a long run before the additive constant in
    // 1/λ = t/… + s₀^{…} becomes negligible; the other regimes settle fast.
    let s_end = match skeleton.regime {
        RegimeKind::PowerGrowup => params.s0 * 1e9,
        _ => params.s0 * 1e4,
    };
    let traj = integrate(
        &exact_solution(params, params.s0),
        params,
        s_end,
        tol,
        2049,
    )?;
    fit_exponent(&fit_window(&traj), &skeleton)
}
