//! Front-end plumbing for the moment-relaxation solver: sparse SDPA
//! interchange, result and certificate schemas, and the command
//! implementations behind the `stride` binary.

pub mod report;
pub mod run;
pub mod sdpa;
