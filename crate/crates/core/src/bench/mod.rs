//! Experiment configs, synthetic corpora and the report pipelines behind the
//! `edgelab` command line.

pub mod config;
pub mod corpus;
pub mod report;
mod runs;

pub use config::{DraftSpec, ExperimentConfig, HeadInit, MethodSpec, NamedPlan, OutputFormat, OutputSpec, TaskSpec};
pub use corpus::{gen_needle, probe_model, NeedleInstance};
pub use report::{aggregate, Aggregate, RunReport, TrialRow};
pub use runs::{
    run_evict_bench, run_gen, run_lora_demo, run_quant_bench, run_spec_bench, task_prompt, trace_to_string, trial_seed,
};
