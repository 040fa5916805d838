//! G-expectations of Lipschitz cylinder functionals of G-Brownian
//! motion, computed by a monotone finite-difference scheme for the
//! G-heat equation ∂_t V + G(V_xx) = 0, with extraction of the
//! martingale-representation processes (z, η, A) along simulated paths
//! and numerical verification of the structural estimates.

pub mod driver;
pub mod error;
pub mod estimates;
pub mod grid;
pub mod heat;
pub mod nested;
pub mod payoff;
pub mod represent;
pub mod rng;
pub mod simulate;

pub use driver::{GDriver, PerturbedDriver};
pub use error::{GmError, Result};
pub use grid::{SpaceGrid, TimeGrid};
pub use heat::{refinement_study, solve_gheat, ValueSurface};
pub use nested::{nested_expectation, SurfaceStack};
pub use payoff::{eval_payoff, parse_payoff, CylinderPayoff, PayoffExpr};
pub use represent::{
    check_a_monotone, extract_representation, reconstruction_report, symmetric_case_check,
    RepresentationSample,
};
pub use simulate::{
    default_control_family, mc_expectation, qv_functionals, sample_paths, PathBundle,
    VolatilityControl,
};
