//! Pipeline orchestration and the reward service behind the `guidex` binary.

pub mod pipeline;
pub mod service;
