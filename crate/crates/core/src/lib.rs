//! Critical superprocesses on finite state spaces.
//!
//! A superprocess is a measure-valued branching Markov process determined by a
//! spatial motion and a local branching mechanism
//! `Ψ(x,z) = -β(x)z + α(x)z² + ∫ (e^{-zy} - 1 + zy) π(x,dy)`.
//! This crate restricts the state space to a finite set of sites, where the
//! spatial motion is an irreducible continuous-time Markov chain (with optional
//! killing) and `π` is a finite atom list per site.  Everything the theory
//! produces on such spaces is then directly computable:
//!
//! * [`model`] — model definition, branching-mechanism evaluation, validation
//!   of the standing assumptions (irreducibility, non-degeneracy, extinction,
//!   criticality).
//! * [`spectral`] — mean semigroup `S_t = e^{tL}` with `L = Q + diag(β)`, the
//!   principal eigen-triple `(λ, φ, φ*)`, criticality calibration, the Doob
//!   h-transform spine generator, and kernel comparability constants.
//! * [`cumulant`] — deterministic ODE oracles: the nonlinear cumulant flow
//!   `V_t f`, the extinction function `v_t`, the occupation solution `u_s`
//!   for atomic test functionals, its first and second variations, second
//!   moments and survival probabilities.
//! * [`prm`] — Poisson random measures on finite atom spaces with exact
//!   Laplace functionals and size-biased transform sampling.
//! * [`pathsim`] — Euler-scheme path simulation, the exact one-site critical
//!   Feller sampler, the split-time law, and ε-mass excursion starts.
//! * [`spine`] — the (g,T)-spine with Poisson immigration, the 2-spine
//!   skeleton, and semi-analytic conditional Laplace evaluators.
//! * [`limits`] — Kolmogorov survival asymptotics, Yaglom exponential limits,
//!   and the supporting uniform-ratio / slope / ergodic checks.
//! * [`harness`] — experiment configuration, seeded parallel execution, and
//!   report persistence.

pub mod cumulant;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod limits;
pub mod model;
pub mod ode;
pub mod pathsim;
pub mod prm;
pub mod rng;
pub mod spectral;
pub mod spine;
pub mod stats;

pub use error::{Error, Result};
