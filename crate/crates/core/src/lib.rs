//! Mesoscopic traffic simulation with a cloud-side traffic twin,
//! event-triggered cooperative route planning and a stochastic
//! latency / packet-delivery model.
//!
//! Module map:
//!
//! * [`network`]: road graph, density/speed/journey-time law, journey-time matrix.
//! * [`twin`]: cloud twin state fed by RSU and CAV sensing, event detection.
//! * [`nav`]: fastest-path planning, event masking, re-planning of affected users.
//! * [`comms`]: latency samplers, packet delivery, service deadline and KPI report.
//! * [`sim`]: discrete-time engine and metrics.
//! * [`harness`]: sweeps, KPI runs and the line-delimited JSON route service.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comms;
pub mod error;
pub mod harness;
mod jsonpos;
pub mod nav;
pub mod network;
pub mod rng;
pub mod sim;
pub mod twin;

pub use error::{Error, Result};
