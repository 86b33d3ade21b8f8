//! Risk-driven anonymisation of tabular microdata.
//!
//! The pipeline runs in three stages over a [`table::Table`]:
//!
//! 1. [`identify`] scores every attribute's re-identification risk from its
//!    g-distinct histogram and labels it DID, QID, SA or NSA.
//! 2. [`deidentify`] applies suppression, masking, generalisation and
//!    aggregation rules, riskiest attribute first.
//! 3. [`dimension`] de-identifies the d riskiest QIDs for every d, scores
//!    each candidate with [`metrics`] (k-anonymity, ℓ-diversity, t-closeness,
//!    NUE) and picks the optimum.
//!
//! [`pipeline`] wires the stages together for the CLI and the HTTP service;
//! [`mockgen`] produces seeded mock datasets.

pub mod config;
pub mod deidentify;
pub mod dimension;
pub mod identify;
pub mod interactive;
pub mod metrics;
pub mod mockgen;
pub mod pipeline;
pub mod table;

/// Rounds half-up to two decimals, for reporting only.
pub fn round_half_up_2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let floor = scaled.floor();
    // treat representation error around .5 as an exact half
    if scaled - floor >= 0.5 - 1e-9 {
        (floor + 1.0) / 100.0
    } else {
        floor / 100.0
    }
}
