//! Activation-informed, difficulty-aware self-consistency.
//!
//! The pipeline has two halves:
//!
//! * **Offline**: load an activation dump ([`store`]), select
//!   difficulty-sensitive neurons ([`dsn`]), train a linear probe on them
//!   ([`probe`]), and calibrate a routing threshold ([`calibration`]).
//! * **Online**: for each problem, run a sampling-budget controller
//!   ([`controllers`]) against an answer source ([`samplers`]), then
//!   aggregate and render the comparison ([`harness`]).
//!
//! Problem-level work fans out over rayon when the `parallel` feature is
//! on (the default); see [`par`].

pub mod calibration;
pub mod controllers;
pub mod dsn;
pub mod harness;
pub mod numeric;
pub mod par;
pub mod probe;
pub mod samplers;
pub mod store;
pub mod synth;

pub use calibration::{calibrate_tau, TauCalibration};
pub use controllers::{majority_vote, run_actsc, run_ac, run_dsc, run_esc, run_sc, Policy, PolicyConfig, SamplingTrace};
pub use dsn::{identify_dsn, DsnSelection, GapConfig, SelectionMode};
pub use harness::{aggregate_metrics, render_report, run_benchmark, RunReport};
pub use probe::{train_probe, ProbeModel, TrainConfig};
pub use samplers::{AnswerSample, Sampler};
pub use store::{load_dataset, save_dataset, ActivationRecord, Dataset, DatasetManifest, DumpFormat};
