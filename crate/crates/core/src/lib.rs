//! Base-station hourly energy estimation with station fingerprints.
//!
//! Pipeline: [`ingest`] telemetry into [`record`]s, [`encoder`] them under a
//! fitted plan, train an [`model::EnergyModel`] (BSID embedding, adaptive
//! re-weighting, MLP) with masked-BSID [`training`], and report cohort MAPE
//! with [`evaluation`]. [`synthgen`] produces fleets with known ground truth.

pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod record;
pub mod selfcheck;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
