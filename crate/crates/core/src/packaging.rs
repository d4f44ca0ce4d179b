//! Deployment package composition: function code + inference runtime + model.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ModelArtifact;
use crate::providers::ProviderLimits;
use crate::units::Limit;

pub const RUNTIMES_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PackagingError {
    #[error("model {model:?} has format {format:?}, which runtime {runtime:?} cannot execute (supports: {supported})")]
    IncompatibleFormat {
        model: String,
        format: String,
        runtime: String,
        supported: String,
    },
    #[error("invalid runtime library {name:?}: {reason}")]
    InvalidRuntime { name: String, reason: String },
    #[error("unknown runtime library {0:?}")]
    UnknownRuntime(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("package size overflows u64")]
    Overflow,
    #[error("unsupported runtimes file version {0} (expected {RUNTIMES_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("failed to parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot measure {path}: {source}")]
    Measure { path: PathBuf, source: io::Error },
}

/// A model interpreter/framework shipped inside the package.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeLibrary {
    pub name: String,
    pub size_bytes: u64,
    pub model_formats: BTreeSet<String>,
}

impl RuntimeLibrary {
    pub fn new<I, S>(name: &str, size_bytes: u64, formats: I) -> Result<Self, PackagingError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rt = RuntimeLibrary {
            name: name.to_string(),
            size_bytes,
            model_formats: formats.into_iter().map(Into::into).collect(),
        };
        rt.validate()?;
        Ok(rt)
    }

    pub fn validate(&self) -> Result<(), PackagingError> {
        let invalid = |reason: &str| PackagingError::InvalidRuntime {
            name: self.name.clone(),
            reason: reason.into(),
        };
        if self.size_bytes == 0 {
            return Err(invalid("size_bytes must be positive"));
        }
        if self.model_formats.is_empty() {
            return Err(invalid("model_formats must not be empty"));
        }
        Ok(())
    }

    pub fn executes(&self, format: &str) -> bool {
        self.model_formats.contains(format)
    }
}

/// Everything uploaded to the provider. `total_bytes` is always the exact sum
/// of the three components, and the model format is executable by the runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPackage {
    pub code_bytes: u64,
    pub runtime: RuntimeLibrary,
    pub model: ModelArtifact,
    pub total_bytes: u64,
}

pub fn assemble_package(
    code_bytes: u64,
    runtime: &RuntimeLibrary,
    model: &ModelArtifact,
) -> Result<DeploymentPackage, PackagingError> {
    if !runtime.executes(&model.format) {
        return Err(PackagingError::IncompatibleFormat {
            model: model.name.clone(),
            format: model.format.clone(),
            runtime: runtime.name.clone(),
            supported: runtime
                .model_formats
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join(", "),
        });
    }
    let total_bytes = code_bytes
        .checked_add(runtime.size_bytes)
        .and_then(|s| s.checked_add(model.size_bytes))
        .ok_or(PackagingError::Overflow)?;
    Ok(DeploymentPackage {
        code_bytes,
        runtime: runtime.clone(),
        model: model.clone(),
        total_bytes,
    })
}

/// Space left under a provider's package limit. Negative when the package
/// does not fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Headroom {
    Bytes(i128),
    Unlimited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitRow {
    pub provider: String,
    pub passed: bool,
    pub headroom: Headroom,
}

/// One row per provider, in the given order.
pub fn fit_matrix(package: &DeploymentPackage, providers: &[ProviderLimits]) -> Vec<FitRow> {
    providers
        .iter()
        .map(|p| {
            let (passed, headroom) = match p.max_package_bytes {
                Limit::Unlimited => (true, Headroom::Unlimited),
                Limit::Finite(max) => (
                    package.total_bytes <= max,
                    Headroom::Bytes(max as i128 - package.total_bytes as i128),
                ),
            };
            FitRow {
                provider: p.name.clone(),
                passed,
                headroom,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuntimesFile {
    version: u32,
    runtimes: Vec<RuntimeLibrary>,
}

pub fn load_runtimes(text: &str) -> Result<Vec<RuntimeLibrary>, PackagingError> {
    let file: RuntimesFile = serde_json::from_str(text)?;
    if file.version != RUNTIMES_FORMAT_VERSION {
        return Err(PackagingError::UnsupportedVersion(file.version));
    }
    for rt in &file.runtimes {
        rt.validate()?;
    }
    Ok(file.runtimes)
}

pub fn find_runtime<'a>(
    runtimes: &'a [RuntimeLibrary],
    name: &str,
) -> Result<&'a RuntimeLibrary, PackagingError> {
    runtimes
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| PackagingError::UnknownRuntime(name.to_string()))
}

/// Declarative package description. Sizes come from the runtime and catalog
/// manifests unless a path is given, in which case the on-disk size wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageManifest {
    pub code_bytes: u64,
    pub runtime_name: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
}

impl PackageManifest {
    pub fn resolve(
        &self,
        runtimes: &[RuntimeLibrary],
        models: &[ModelArtifact],
        base_dir: &Path,
    ) -> Result<DeploymentPackage, PackagingError> {
        let runtime = find_runtime(runtimes, &self.runtime_name)?;
        let mut model = models
            .iter()
            .find(|m| m.name == self.model_name)
            .cloned()
            .ok_or_else(|| PackagingError::UnknownModel(self.model_name.clone()))?;
        let mut code_bytes = self.code_bytes;
        if let Some(p) = &self.code_path {
            code_bytes = measure_path_bytes(&base_dir.join(p))?;
        }
        if let Some(p) = &self.model_path {
            model.size_bytes = measure_path_bytes(&base_dir.join(p))?;
        }
        assemble_package(code_bytes, runtime, &model)
    }
}

/// Uncompressed on-disk size of a file, or the recursive sum for a directory.
pub fn measure_path_bytes(path: &Path) -> Result<u64, PackagingError> {
    let wrap = |source: io::Error| PackagingError::Measure {
        path: path.to_path_buf(),
        source,
    };
    let meta = fs::metadata(path).map_err(wrap)?;
    if meta.is_file() {
        return Ok(meta.len());
    }
    let mut total = 0u64;
    for entry in walkdir::WalkDir::new(path) {
        let entry = entry.map_err(|e| wrap(e.into()))?;
        if entry.file_type().is_file() {
            total += entry.metadata().map_err(|e| wrap(e.into()))?.len();
        }
    }
    Ok(total)
}
