//! Challenge orchestration: manifests describing ID train/test and OOD
//! sets, detector execution or external-score ingestion, hyperparameter
//! sweeps, report generation, and a seeded phantom generator for
//! dataset-free runs.

mod manifest;
mod phantom;
mod report;
mod run;

pub use manifest::{
    load_manifest, CaseEntry, ChallengeManifest, OodSet, SyntheticSpec,
};
pub use phantom::{phantom, write_phantom_challenge, PhantomChallengeSpec, PhantomConfig};
pub use report::{report, severity_chart_svg, CorrelationQuantity, GroupMap, ReportFormat};
pub use run::{
    correlate_methods, load_results, run_challenge, save_results, sweep_hyperparameters,
    write_sweep_csv, ChallengeResult, DetectorSpec, IhfVariant, SweepCell, DEFAULT_TPR_TARGET,
};
