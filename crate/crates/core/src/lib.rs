//! Solver for the one-dimensional Vlasov–Poisson system with an
//! infinite-mass neutralizing background,
//!
//! ```text
//! ∂_t f + v ∂_x f - E ∂_v f = 0,   ρ = ∫ (F - f) dv,   E = ½ (∫_{-∞}^x ρ - ∫_x^∞ ρ),
//! ```
//!
//! where `F(v)` is a fixed, compactly supported background and the
//! perturbation `g = F - f` decays like `R(x)^{-p}`, `R(x) = √(1 + x²)`.
//!
//! The solution is computed as the fixed point of the map "transport `f0`
//! along the characteristics of the field of `f`" ([`picard`]); an independent
//! splitting solver ([`oracle`]) and a diagnostic suite ([`diagnostics`])
//! check it.

pub mod characteristics;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod export;
pub mod field;
pub mod grid;
pub mod norms;
pub mod oracle;
pub mod picard;
pub mod profiles;
pub mod quadrature;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::PhaseGrid;
pub use picard::{apply_map, extend, solve, IterationTrace, SolutionHistory, SolveOptions};
pub use profiles::{make_initial_data, BackgroundProfile, InitialData, PerturbationShape};
