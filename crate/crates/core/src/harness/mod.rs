//! JSON-configured experiments.
//!
//! An [`ExperimentConfig`] names a dataset, a score model, one operator, a
//! noise model and a list of samplers. [`run_experiment`] synthesizes the
//! test problems, trains or loads the model, runs every sampler on every
//! problem (in parallel across runs) and writes:
//!
//! - `results.csv`: one row per run, failures included with an `error`;
//! - `summary.csv`: mean and standard deviation per sampler and grid cell,
//!   computed from the result rows alone;
//! - `curves.csv`: PSNR of the clean estimate at every sampling step;
//! - `images/*.pgm` for image datasets;
//! - `checks.csv`: outcome of every configured check;
//! - `config.json` and, when a model was trained, `training.csv`.
//!
//! [`ablation_sweep`] does the same over one sweep axis.

mod checks;
mod config;
mod dataset;
mod output;
mod run;

pub use checks::{evaluate_checks, CheckOutcome, CheckSpec};
pub use config::{
    fingerprint, BestOfSpec, Cell, ExperimentConfig, ModelSpec, NkGrid, NoiseSpec, OperatorSpec, SamplerSpec,
    ScheduleSpec, SweepAxis, SweepSpec, TrainSpec, OUTPUT_ROOT_ENV,
};
pub use dataset::{generate_dataset, BlobParams, ComponentSpec, Dataset, DatasetKind, DatasetSpec};
pub use output::{format_summary, read_results, summarize, write_csv, write_pgm, CurveRow, ResultRow, SummaryRow};
pub use run::{
    ablation_sweep, build_model, build_problems, mlp_config, run_experiment, summarize_file, train_mlp, train_to,
    BuiltModel, ExperimentReport,
};
