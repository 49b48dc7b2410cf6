//! The competing content creation game.
//!
//! Content creators (players) each pick one item from a finite action set.
//! A platform shows every user the `K` most relevant items, and the user picks
//! one of them under a random-utility model with zero-mean Gumbel noise of
//! scale `beta`. This crate evaluates user welfare and creator utilities in
//! closed form, searches for optimal and worst-equilibrium welfare, simulates
//! no-regret (Exp3) creators, and evaluates the theoretical efficiency bounds.
//!
//! Module map:
//!
//! - [`game`]: instance data model and JSON format.
//! - [`slate`] / [`eval`]: top-`K` slates with exact tie handling and the
//!   closed-form utilities.
//! - [`gumbel`]: Monte-Carlo estimators used as an independent oracle.
//! - [`equilibrium`] and [`lp`]: optimal welfare, worst coarse correlated
//!   equilibrium, price of anarchy.
//! - [`dynamics`]: repeated play with Exp3 learners.
//! - [`instances`]: generators for the synthetic and embedding-based games.
//! - [`bounds`]: closed-form efficiency bounds.
//! - [`checks`]: property suites shared by the test suite and the CLI.

pub mod bounds;
pub mod checks;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod eval;
pub mod game;
pub mod gumbel;
pub mod instances;
pub mod lp;
pub mod rng;
pub mod slate;

pub use error::{Error, Result};
pub use eval::{EvaluationReport, Evaluator};
pub use game::{Action, ActionSet, GameInstance, Metric, StrategyProfile, User};
