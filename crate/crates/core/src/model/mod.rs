//! Domain types shared by every solver: time grids, utilities, income
//! processes, interest-rate paths and simulated path ensembles.

mod discount;
mod ensemble;
mod grid;
mod income;
mod rate;
pub mod rng;
mod utility;

pub use discount::{discount_factor, DiscountSpec};
pub use ensemble::{simulate_income, PathEnsemble, WealthLaw};
pub use grid::TimeGrid;
pub use income::{IncomeDynamics, IncomeLaw, IncomeModel};
pub use rate::RatePath;
pub use utility::UtilitySpec;
