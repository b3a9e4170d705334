//! Cooperative active learning for vehicles that share labels, data, or
//! full samples with their neighbors.
//!
//! The crate is organized bottom-up:
//!
//! - [`types`]: labels, feature vectors, timestamps, samples and modes.
//! - [`dataset`]: tabular loading, a synthetic surrogate, stratified partitions.
//! - [`classifiers`]: the five weak labeler families and offline accuracy.
//! - [`integration`]: freshness, correctness probability, MV / WMV / WA.
//! - [`selection`]: quality and diversity scores, QDS and its baselines.
//! - [`simulator`]: fleet topology, per-mode events, network load, experiment runs.

pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod integration;
pub(crate) mod rng;
pub mod selection;
pub mod simulator;
pub mod types;

pub use classifiers::{ClassifierKind, LabelerProfile, Model, TrainingSet};
pub use dataset::{Dataset, LabelColumn, Partition};
pub use error::{Error, Result};
pub use integration::{AggregatedSample, Contribution, IntegrationMethod, WaWeights, WmvVariant};
pub use selection::{CandidatePool, SelectionOutcome, SelectionPolicy};
pub use simulator::{CooperationEvent, FleetTopology, LoadModel, RunMetrics};
pub use types::{FeatureVector, Label, Mode, Observation, Sample, SegmentId, Timestamp, VehicleId};
