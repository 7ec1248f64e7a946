//! Reproducible experiment runner over the `qdesk-core` library.
//!
//! Configs are JSON, validated against a per-experiment schema before a
//! run. Every run writes `results.csv` (numeric columns at 17 significant
//! digits), `results.json`, and `manifest.json` into the output
//! directory; reruns with the same config and seed are byte-identical.

pub mod config;
pub mod experiments;
pub mod output;
pub mod runner;
