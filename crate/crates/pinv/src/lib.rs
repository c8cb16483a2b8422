//! File formats, reports, the benchmark corpus and the command-line front end
//! for `pinv-core`.

pub mod cli;
pub mod dataset;
pub mod registry;
pub mod report;
