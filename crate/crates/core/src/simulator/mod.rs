//! End-to-end federated runs: world construction, client sampling, the
//! round loop with one-shot detection, and report export.

mod report;
mod run;
mod world;

pub use report::{export_report, read_metrics, summary_text, ExperimentReport};
pub use run::{run_experiment, run_on_world, DetectionStatus, RoundMetrics, RoundTranscript, RunOutcome};
pub use world::{build_world, load_datasets, round_half_up, sample_round, World};
