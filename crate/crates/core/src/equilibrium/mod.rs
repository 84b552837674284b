//! Market-clearing interest rates: the single-cohort life-cycle economy and
//! the overlapping-generations economy over a flow of demographic measures.

mod demography;
mod lifecycle;
mod olg;

pub use demography::{leibniz_derivative_check, simpson, BirthDensity, DemographicFlow, FlowKind, LeibnizCheck};
pub use lifecycle::{
    capital_derivative, lifecycle_equilibrium_solve, lifecycle_rate_update, rate_sensitivity_dk, CapitalSupply,
    ClearingCheck, EquilibriumOptions, EquilibriumResult, LifecycleEconomy, SensitivityReport,
};
pub use olg::{
    olg_aggregates, olg_equilibrium_solve, olg_phi_map, stationary_checks, stationary_rate_bisect,
    stationary_stability, Aggregates, CohortAgreement, CohortFamily, CohortLayout, Field, OlgEconomy, StabilityReport,
    StationarityReport, StationaryRate,
};
