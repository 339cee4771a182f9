//! Verification suites and JSON reports behind the `rslab` binary.

pub mod report;
pub mod suites;
