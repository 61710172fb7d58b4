//! Pipeline orchestration and table output.

mod config;
mod emit;
mod pipeline;
mod table;

pub use config::{AreaIntegrand, BootstrapSelection, OutputFormat, PipelineConfig};
pub use emit::{emit, render_table};
pub use pipeline::{
    build_bundle, load_inputs, memory_digest, run_pipeline, validate_inputs, write_records,
    InputDigest, LoadedInputs, Manifest, ReportBundle, Stage, TableEntry, AGGREGATE_CURVES, AREA,
    COHORTS, CONFIDENCE_INTERVALS, DRIFT, FACTORS, SCHEMA_GAP, SCHEMA_GAP_SUMMARY, TERMS,
};
pub use table::{format_float, Table, Value};
