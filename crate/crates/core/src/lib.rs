//! Exact simulation and analysis of a lattice model of diffusing, coalescing
//! massive particles with monomer deposition and unit-mass evaporation.
//!
//! * [`model`]: state space and transition rules;
//! * [`engine`]: exact kinetic Monte Carlo and replica execution;
//! * [`oracle`]: exact stationary laws of small truncated instances;
//! * [`observables`]: time-weighted estimators, error bars and diagnostics;
//! * [`phase`]: phase classification, critical-curve bisection and the
//!   analytic bounds registry.

pub mod engine;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod phase;
