//! Balanced truncation for controlled stochastic differential equations
//! with one-sided-growth polynomial drift.
//!
//! The pipeline is: build a [`StochasticSystem`], compute a Gramian pair with
//! [`gramians`], balance and truncate with [`balancing`], then simulate full
//! and reduced models on shared noise with [`simulate`] and compare against the
//! bounds in [`error_bounds`].

pub mod balancing;
pub mod diagnostics;
pub mod error;
pub mod error_bounds;
pub mod gramians;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod simulate;

pub use error::{Error, ErrorCategory, Result};
pub use model::{
    build_reaction_diffusion, eval_drift, normalize_equilibrium, Boundary, ControlKind, ControlSignal, NoiseProfile,
    Nonlinearity, NonlinearityKind, StochasticSystem,
};
pub use scalar::Scalar;

/// Double-precision aliases.
pub type System = StochasticSystem<f64>;
pub type Control = ControlSignal<f64>;
pub type Drift = Nonlinearity<f64>;
pub type Gramians = gramians::GramianPair<f64>;
pub type Balanced = balancing::BalancedRealization<f64>;
pub type Reduced = balancing::ReducedModel<f64>;
pub type Noise = simulate::NoiseBundle<f64>;
pub type Paths = simulate::Ensemble<f64>;

/// Single-precision aliases.
pub type System32 = StochasticSystem<f32>;
pub type Gramians32 = gramians::GramianPair<f32>;

