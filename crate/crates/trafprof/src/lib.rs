//! Std side of trafprof: pcap reading and writing, file formats, the
//! concurrent enrichment cache, parallel grid evaluation, the staged
//! pipeline and the synthetic dataset generator.
//!
//! The algorithms live in `trafprof-core`; this crate feeds them files.

pub mod config;
pub mod enrich;
pub mod formats;
pub mod pcap;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod train;
pub mod wire;

pub use config::{ConfigError, PipelineConfig};
pub use enrich::{FixtureProvider, SharedEnricher};
pub use formats::{FormatError, SCHEMA_VERSION};
pub use pcap::{read_capture, CaptureError};
pub use pipeline::{run_pipeline, RunOutcome, Stage, StageError};
pub use synth::{synth_generate, Family, PlantedEffect, SynthError, SynthOutput, SynthSpec};
pub use train::{grid_search_parallel, loocv_parallel, train_label, LabelReport, ModelDump};
