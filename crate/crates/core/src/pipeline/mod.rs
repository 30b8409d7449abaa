//! Experiment orchestration: a flat run config, per-stage manifests and one
//! function per pipeline stage, all sharing a directory layout under the
//! configured output directory.

mod config;
mod manifest;
mod stages;

pub use config::RunConfig;
pub use manifest::{config_fingerprint, digest, digest_json, RunManifest};
pub use stages::{
    anchor_subset, cmd_ablate, cmd_adapt, cmd_augment, cmd_datagen, cmd_distill, cmd_eval, load_student,
    load_teachers, replay, run_name, EvalVerdict, Layout,
};
