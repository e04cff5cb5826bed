//! Proximity detection from Bluetooth Low Energy RSSI.
//!
//! The pipeline runs from raw measurement CSVs to conditional attenuation
//! densities, likelihood-ratio and M-of-N detectors, and DET / false discovery
//! rate evaluation under the exposure-notification scan model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod densities;
pub mod detectors;
pub mod evaluation;
pub mod measurements;
pub mod scansim;
