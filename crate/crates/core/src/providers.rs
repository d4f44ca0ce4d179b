//! Serverless platform limits, the memory-to-CPU scaling law, and plan validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packaging::DeploymentPackage;
use crate::units::{mb, Limit};

pub const PROVIDERS_FORMAT_VERSION: u32 = 1;

pub const FUNCTION_SIZE: &str = "function_size";
pub const MEMORY: &str = "memory";
pub const REQUEST_SIZE: &str = "request_size";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("memory must be positive")]
    NonPositiveMemory,
    #[error("invalid cpu scaling: {0}")]
    InvalidScaling(String),
    #[error("invalid limits for provider {name}: {reason}")]
    InvalidLimits { name: String, reason: String },
    #[error("unsupported providers file version {0} (expected {PROVIDERS_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("duplicate provider profile {0:?}")]
    DuplicateProfile(String),
    #[error("unknown provider profile {0:?}")]
    UnknownProfile(String),
    #[error("failed to parse providers file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// How much CPU a function receives for a given memory allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuScaling {
    /// Memory that grants exactly one full vCPU.
    pub bytes_per_full_cpu: u64,
    /// Speedup saturation for a single in-flight request.
    pub max_useful_cpus: f64,
}

impl Default for CpuScaling {
    fn default() -> Self {
        CpuScaling {
            bytes_per_full_cpu: mb(1769),
            max_useful_cpus: 1.0,
        }
    }
}

impl CpuScaling {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.bytes_per_full_cpu == 0 {
            return Err(ProviderError::InvalidScaling(
                "bytes_per_full_cpu must be positive".into(),
            ));
        }
        if !(self.max_useful_cpus >= 1.0 && self.max_useful_cpus.is_finite()) {
            return Err(ProviderError::InvalidScaling(format!(
                "max_useful_cpus must be finite and >= 1, got {}",
                self.max_useful_cpus
            )));
        }
        Ok(())
    }
}

/// Hard limits of one serverless platform profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderLimits {
    pub name: String,
    pub max_package_bytes: Limit,
    pub max_execution_ms: Limit,
    pub max_memory_bytes: u64,
    pub max_request_bytes: u64,
    #[serde(default)]
    pub cpu_scaling: CpuScaling,
}

impl ProviderLimits {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let invalid = |reason: &str| ProviderError::InvalidLimits {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        if self.max_memory_bytes == 0 {
            return Err(invalid("max_memory_bytes must be positive"));
        }
        if self.max_request_bytes == 0 {
            return Err(invalid("max_request_bytes must be positive"));
        }
        if matches!(self.max_package_bytes, Limit::Finite(0))
            || matches!(self.max_execution_ms, Limit::Finite(0))
        {
            return Err(invalid("finite limits must be positive"));
        }
        self.cpu_scaling.validate()
    }
}

/// One exceeded limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub limit_name: String,
    pub limit_value: u64,
    pub actual_value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        let passed = violations.is_empty();
        ValidationReport { violations, passed }
    }
}

/// A package together with the memory it will be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub memory_bytes: u64,
    pub package: DeploymentPackage,
}

pub(crate) fn check(name: &str, limit: Limit, actual: u64, out: &mut Vec<Violation>) {
    if let Limit::Finite(v) = limit {
        if actual > v {
            out.push(Violation {
                limit_name: name.to_string(),
                limit_value: v,
                actual_value: actual,
            });
        }
    }
}

/// Checks package size and memory against `limits`. Invalid plans produce a
/// failing report, never an error.
pub fn validate_plan(plan: &DeploymentPlan, limits: &ProviderLimits) -> ValidationReport {
    let mut violations = Vec::new();
    check(
        FUNCTION_SIZE,
        limits.max_package_bytes,
        plan.package.total_bytes,
        &mut violations,
    );
    check(
        MEMORY,
        Limit::Finite(limits.max_memory_bytes),
        plan.memory_bytes,
        &mut violations,
    );
    ValidationReport::from_violations(violations)
}

/// CPU share granted to a function with `memory_bytes` of RAM:
/// `min(memory / bytes_per_full_cpu, max_useful_cpus)`.
pub fn effective_cpu(memory_bytes: u64, scaling: &CpuScaling) -> Result<f64, ProviderError> {
    if memory_bytes == 0 {
        return Err(ProviderError::NonPositiveMemory);
    }
    scaling.validate()?;
    let share = memory_bytes as f64 / scaling.bytes_per_full_cpu as f64;
    Ok(share.min(scaling.max_useful_cpus))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvidersFile {
    version: u32,
    providers: Vec<ProviderLimits>,
}

/// Named provider profiles in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSet {
    profiles: Vec<ProviderLimits>,
}

impl ProviderSet {
    pub fn new(profiles: Vec<ProviderLimits>) -> Result<Self, ProviderError> {
        for (i, p) in profiles.iter().enumerate() {
            p.validate()?;
            if profiles[..i].iter().any(|q| q.name == p.name) {
                return Err(ProviderError::DuplicateProfile(p.name.clone()));
            }
        }
        Ok(ProviderSet { profiles })
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let file: ProvidersFile = serde_json::from_str(text)?;
        if file.version != PROVIDERS_FORMAT_VERSION {
            return Err(ProviderError::UnsupportedVersion(file.version));
        }
        Self::new(file.providers)
    }

    pub fn to_json(&self) -> String {
        let file = ProvidersFile {
            version: PROVIDERS_FORMAT_VERSION,
            providers: self.profiles.clone(),
        };
        serde_json::to_string_pretty(&file).expect("provider profiles serialize")
    }

    pub fn get(&self, name: &str) -> Result<&ProviderLimits, ProviderError> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ProviderError::UnknownProfile(name.to_string()))
    }

    pub fn profiles(&self) -> &[ProviderLimits] {
        &self.profiles
    }
}
