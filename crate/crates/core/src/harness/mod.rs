//! Oracles, benchmarks, the toy trainer and the ablation sweep.

pub mod bench;
pub mod data;
pub mod manifest;
pub mod oracle;
pub mod sweep;
pub mod train;
pub mod verify;
