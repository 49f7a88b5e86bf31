//! gkdv-core: a numerical laboratory for soliton dynamics of the
//! quintic (L²-critical) generalized Korteweg–de Vries equation
//!
//!   u_t + (u_xx + u⁵)_x = 0
//!
//! with slowly decaying tails on the right. The crate provides:
//!
//! * [`profiles`] — the explicit ground state Q, the linearized operator
//!   L = -∂² + 1 - 5Q⁴, the correction profiles Y₀ and P, and the
//!   approximate self-similar family Q_b with its generation error Ψ_b;
//! * [`reduced`] — the tail-forced reduced modulation system for
//!   (λ, x, b), its conserved combination, instability coordinates and
//!   blow-up/grow-up rate classification;
//! * [`pde`] — a dealiased Fourier pseudo-spectral solver with a 4th-order
//!   exponential integrator, tail construction and decay measurement;
//! * [`modulation`] — decomposition of a lab-frame solution into
//!   (λ, x, b, p, ε) by Newton iteration on orthogonality conditions, with
//!   weighted norms and energy–virial functionals for the remainder;
//! * [`shooting`] — exit-time maximization over the (λ₀, b₀) rectangle,
//!   exit maps and the boundary winding-number diagnostic;
//! * [`pipeline`] — the composed full-PDE experiment: build initial data,
//!   evolve, decompose along the flow and compare modulation residuals
//!   against their predicted bounds.

pub mod error;
pub mod fitting;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod modulation;
pub mod ode;
pub mod profiles;
pub mod reduced;
pub mod shooting;
pub mod smooth;

pub use error::{CoreError, Result};
pub use grid::{GridFunction, GridSpec};
pub use profiles::ProfileSet;
pub use reduced::{RegimeParams, ReducedState, ReducedTrajectory};
pub mod pde;
pub mod pipeline;
pub mod spectral;
