//! Layered LSH for similarity search on a simulated MapReduce cluster.
//!
//! The crate hashes points with a p-stable family `H`, groups inner buckets
//! onto machines with a second LSH `G`, probes nearby buckets with Entropy LSH
//! offsets, and runs both the Simple and the Layered distribution schemes on
//! an in-process cluster that counts every shuffled message.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common choices.

pub mod bench;
pub mod cluster;
pub mod data_io;
pub mod error;
pub mod lsh;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod schemes;

pub use bench::{
    default_d_bracket, parse_outer_width, recall, run_measured, sweep, tune_d, Objective, RunConfig,
    RunMetrics, SweepVar, TuneOutcome, Workload,
};
pub use cluster::{
    assign_machine, load_summary, run_job, ClusterConfig, JobOutput, LoadSummary, MachineId, MachineLoad,
    MappingMode, ShuffleLedger,
};
pub use data_io::{
    brute_force_near, generate_planted, read_vectors, write_vectors, Dataset, GroundTruth, GroundTruthCache,
    PlantedInstance,
};
pub use error::{Error, Result};
pub use lsh::{
    collision_p, collision_p_inverse, default_num_offsets, gh, lambda_xi, nominal_p1_p2, suggest_k, BucketId,
    HashFamilyH, HashFunctionG, LshParams, MachineKey,
};
pub use probe::{probe_keys_layered, probe_keys_simple, sample_offsets, OffsetSet};
pub use scalar::Scalar;
pub use schemes::{DataRecord, MatchResult, QueryRecord, RunSeeds, Scheme};

pub type HashFamilyH32 = HashFamilyH<f32>;
pub type HashFamilyH64 = HashFamilyH<f64>;
pub type HashFunctionG32 = HashFunctionG<f32>;
pub type HashFunctionG64 = HashFunctionG<f64>;
pub type OffsetSet32 = OffsetSet<f32>;
pub type OffsetSet64 = OffsetSet<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Dataset64 = Dataset<f64>;
pub type GroundTruth32 = GroundTruth<f32>;
pub type GroundTruth64 = GroundTruth<f64>;
pub type Workload32 = Workload<f32>;
pub type Workload64 = Workload<f64>;
pub type JobOutput32 = JobOutput<f32>;
pub type JobOutput64 = JobOutput<f64>;
