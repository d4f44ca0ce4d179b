//! Deployment planning toolkit for ML inference on serverless platforms.
//!
//! The crate answers four questions about a candidate model:
//!
//! * does its deployment package fit a provider's limits ([`providers`], [`packaging`]),
//! * which catalogued model is the best one that still fits ([`catalog`]),
//! * what latency distribution and bill to expect under a traffic pattern
//!   ([`simulator`], [`metrics`], [`cost`]),
//! * how a live endpoint actually behaves under open-loop load ([`harness`]).
//!
//! Everything is wired together by the `faasfit` binary ([`cli`]).

pub mod catalog;
pub mod cli;
pub mod cost;
pub mod fixtures;
pub mod harness;
pub mod metrics;
pub mod packaging;
pub mod providers;
pub mod simulator;
pub mod units;

pub use catalog::{ModelArtifact, SelectionConstraints};
pub use cost::{CostReport, Money, PricingModel, VmBaseline};
pub use metrics::{Sample, SampleSet, Summary};
pub use packaging::{DeploymentPackage, RuntimeLibrary};
pub use providers::{CpuScaling, DeploymentPlan, ProviderLimits, ValidationReport, Violation};
pub use simulator::{LatencyProfile, SimulationConfig, SimulationResult, TrafficPattern};
pub use units::Limit;
