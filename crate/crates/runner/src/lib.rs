//! Scenario execution, seeded batches, trajectory records and the live
//! session service behind the `sim` command.

pub mod batch;
pub mod record;
pub mod run;
pub mod serve;
pub mod train;
