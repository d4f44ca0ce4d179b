//! Built-in profile and catalog data, compiled into the binary so the tool
//! works without a profile directory.

use std::path::Path;
use std::{fs, io};

use crate::catalog::{load_catalog, ModelArtifact};
use crate::cost::{load_pricing, PricingModel};
use crate::packaging::{load_runtimes, RuntimeLibrary};
use crate::providers::ProviderSet;

pub const PROVIDERS_JSON: &str = include_str!("../fixtures/providers.json");
pub const RUNTIMES_JSON: &str = include_str!("../fixtures/runtimes.json");
pub const PRICING_JSON: &str = include_str!("../fixtures/pricing.json");
pub const SENTIMENT_MODELS_JSON: &str = include_str!("../fixtures/sentiment_models.json");
pub const STS_MODELS_JSON: &str = include_str!("../fixtures/sts_models.json");
pub const LATENCY_TABLE_JSON: &str = include_str!("../fixtures/latency_table.json");

pub fn providers() -> ProviderSet {
    ProviderSet::from_json(PROVIDERS_JSON).expect("built-in providers.json is valid")
}

pub fn runtimes() -> Vec<RuntimeLibrary> {
    load_runtimes(RUNTIMES_JSON).expect("built-in runtimes.json is valid")
}

pub fn pricing() -> Vec<PricingModel> {
    load_pricing(PRICING_JSON).expect("built-in pricing.json is valid")
}

pub fn sentiment_models() -> Vec<ModelArtifact> {
    load_catalog(SENTIMENT_MODELS_JSON).expect("built-in sentiment catalog is valid")
}

pub fn sts_models() -> Vec<ModelArtifact> {
    load_catalog(STS_MODELS_JSON).expect("built-in sts catalog is valid")
}

/// Reads `dir/name` when a profile directory is given and the file exists,
/// otherwise returns the built-in copy.
pub fn read_profile_file(dir: Option<&Path>, name: &str, builtin: &str) -> io::Result<String> {
    match dir {
        Some(d) => {
            let path = d.join(name);
            if path.exists() {
                fs::read_to_string(path)
            } else {
                Ok(builtin.to_string())
            }
        }
        None => Ok(builtin.to_string()),
    }
}
