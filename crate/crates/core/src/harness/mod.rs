//! Experiment orchestration: synthetic corpus, manifests, run
//! configuration, the end-to-end pipeline and SVG reporting.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::{sid_label, RunConfig};
pub use manifest::{Manifest, ManifestRow, MANIFEST_HEADER};
pub use pipeline::{
    evaluate, load_or_train, prepare_corpus, resolve_targets, run_attacks, run_pipeline,
    Models, PipelineOutput, TargetSpec, TargetStats,
};
pub use report::{report, SUMMARY_FILE, SUMMARY_HEADER};
pub use synth::{gen_corpus, SynthConfig};
