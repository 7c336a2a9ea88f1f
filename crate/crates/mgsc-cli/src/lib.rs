//! IO companion to `mgsc-core`: experiment configuration, the ablation
//! runner, checkpoint and dataset file formats, report writers and dumps.

pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod dumps;
pub mod experiment;
pub mod report;
