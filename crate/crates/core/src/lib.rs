pub mod error;
pub mod expectation;
pub mod numeric;
pub mod rng;
pub mod scenario;
pub mod integration;
pub mod stopping;
pub mod ito_formula;
pub mod pde;
pub mod config;
pub mod report;
pub mod suites;
