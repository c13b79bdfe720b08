//! Closed-loop simulation of the semantic-arena studies.

pub mod bench;
pub mod env;
pub mod trial;

pub use bench::{
    aggregate, aggregates_csv, records_csv, replay_trial, run_benchmark, run_indexed_trial, AggregateRow,
    AggregateTable, BenchmarkReport, BenchmarkSuite, DetectorTraining, TrialRecord,
};
pub use env::{
    generate_environment, CellRect, Environment, EnvironmentSpec, FeatureLaw, NormalComponent,
    Palette, Terrain, TerrainSpec, TractionLaw,
};
pub use trial::{
    planner_inputs, realize_ground_truth, run_trial, Arm, OodHandling, OodPolicy, SeedTuple,
    TrialResult, TrialSettings,
};
