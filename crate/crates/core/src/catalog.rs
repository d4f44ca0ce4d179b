//! Model catalog and constrained best-model selection.
//!
//! Quality metrics are opaque, externally reported scores keyed by name
//! (`f1_macro`, `spearman_stsb`, `spearman_target`, ...). Nothing here
//! computes them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packaging::{assemble_package, PackagingError, RuntimeLibrary};
use crate::units::format_mb;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error at line {line}, column {column}: {message}{}", context_suffix(.context))]
    Parse {
        line: usize,
        column: usize,
        message: String,
        context: Option<String>,
    },
    #[error("duplicate model name {0:?}")]
    DuplicateName(String),
    #[error("model {model:?}: {reason}")]
    Invariant { model: String, reason: String },
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("constraints leave no room for a model: limit {limit} bytes <= code + runtime {fixed} bytes")]
    InvalidConstraints { limit: u64, fixed: u64 },
    #[error("no model satisfies the constraints:\n{}", format_rejections(.0))]
    NoFeasibleModel(Vec<Rejection>),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(line) => format!("\n  | {line}"),
        None => String::new(),
    }
}

fn format_rejections(rejections: &[Rejection]) -> String {
    rejections
        .iter()
        .map(|r| format!("  - {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub name: String,
    pub size_bytes: u64,
    pub format: String,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<u32>,
}

impl ModelArtifact {
    /// Unchecked constructor; [`ModelArtifact::validate`] enforces catalog invariants.
    pub fn new(name: &str, size_bytes: u64, format: &str) -> Self {
        ModelArtifact {
            name: name.to_string(),
            size_bytes,
            format: format.to_string(),
            metrics: BTreeMap::new(),
            embedding_dim: None,
        }
    }

    pub fn with_metric(mut self, name: &str, score: f64) -> Self {
        self.metrics.insert(name.to_string(), score);
        self
    }

    pub fn score(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let invalid = |reason: String| CatalogError::Invariant {
            model: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(invalid("empty name".into()));
        }
        if self.size_bytes == 0 {
            return Err(invalid("size_bytes must be positive".into()));
        }
        if self.embedding_dim == Some(0) {
            return Err(invalid("embedding_dim must be positive".into()));
        }
        for (metric, &score) in &self.metrics {
            if !score.is_finite() {
                return Err(invalid(format!("metric {metric} is not finite")));
            }
            if metric.starts_with("f1") && !(0.0..=1.0).contains(&score) {
                return Err(invalid(format!("metric {metric} = {score} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Parses a catalog (a JSON array of models) and checks every invariant.
pub fn load_catalog(text: &str) -> Result<Vec<ModelArtifact>, CatalogError> {
    let models: Vec<ModelArtifact> = serde_json::from_str(text).map_err(|e| {
        let context = text
            .lines()
            .nth(e.line().saturating_sub(1))
            .map(|l| l.trim_end().to_string());
        CatalogError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
            context,
        }
    })?;
    let mut seen = HashSet::new();
    for m in &models {
        m.validate()?;
        if !seen.insert(m.name.as_str()) {
            return Err(CatalogError::DuplicateName(m.name.clone()));
        }
    }
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConstraints {
    pub max_package_bytes: u64,
    pub code_bytes: u64,
    pub runtime: RuntimeLibrary,
    pub objective_metric: String,
    #[serde(default)]
    pub min_score: Option<f64>,
}

/// The constraint that excluded a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Binding {
    IncompatibleFormat {
        format: String,
        runtime: String,
    },
    PackageSize {
        package_bytes: u64,
        max_package_bytes: u64,
    },
    MissingMetric {
        metric: String,
    },
    MinScore {
        score: f64,
        min_score: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub model: String,
    #[serde(flatten)]
    pub binding: Binding,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.model)?;
        match &self.binding {
            Binding::IncompatibleFormat { format, runtime } => {
                write!(f, "format {format} not executable by {runtime}")
            }
            Binding::PackageSize {
                package_bytes,
                max_package_bytes,
            } => write!(
                f,
                "package {} exceeds {}",
                format_mb(*package_bytes),
                format_mb(*max_package_bytes)
            ),
            Binding::MissingMetric { metric } => write!(f, "no {metric} score"),
            Binding::MinScore { score, min_score } => {
                write!(f, "score {score} below minimum {min_score}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: ModelArtifact,
    pub package_bytes: u64,
    pub score: f64,
    pub rejected: Vec<Rejection>,
}

fn rank(a: (&ModelArtifact, f64), b: (&ModelArtifact, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.size_bytes.cmp(&b.0.size_bytes))
        .then_with(|| a.0.name.cmp(&b.0.name))
}

/// Picks the highest-scoring model whose package fits, with ties broken by
/// smaller size and then by name. Also reports why every infeasible model
/// was rejected; rejections are listed in name order.
pub fn select_model_explained(
    catalog: &[ModelArtifact],
    constraints: &SelectionConstraints,
) -> Result<Selection, CatalogError> {
    if catalog.is_empty() {
        return Err(CatalogError::EmptyCatalog);
    }
    let fixed = constraints
        .code_bytes
        .saturating_add(constraints.runtime.size_bytes);
    if constraints.max_package_bytes <= fixed {
        return Err(CatalogError::InvalidConstraints {
            limit: constraints.max_package_bytes,
            fixed,
        });
    }

    let mut best: Option<(&ModelArtifact, f64, u64)> = None;
    let mut rejected = Vec::new();
    for model in catalog {
        let reject = |binding| Rejection {
            model: model.name.clone(),
            binding,
        };
        let package = match assemble_package(constraints.code_bytes, &constraints.runtime, model) {
            Ok(p) => p,
            Err(PackagingError::IncompatibleFormat {
                format, runtime, ..
            }) => {
                rejected.push(reject(Binding::IncompatibleFormat { format, runtime }));
                continue;
            }
            Err(_) => {
                rejected.push(reject(Binding::PackageSize {
                    package_bytes: u64::MAX,
                    max_package_bytes: constraints.max_package_bytes,
                }));
                continue;
            }
        };
        if package.total_bytes > constraints.max_package_bytes {
            rejected.push(reject(Binding::PackageSize {
                package_bytes: package.total_bytes,
                max_package_bytes: constraints.max_package_bytes,
            }));
            continue;
        }
        let Some(score) = model.score(&constraints.objective_metric) else {
            rejected.push(reject(Binding::MissingMetric {
                metric: constraints.objective_metric.clone(),
            }));
            continue;
        };
        if let Some(min_score) = constraints.min_score {
            if score < min_score {
                rejected.push(reject(Binding::MinScore { score, min_score }));
                continue;
            }
        }
        let better = match best {
            None => true,
            Some((b, bs, _)) => rank((model, score), (b, bs)) == Ordering::Less,
        };
        if better {
            best = Some((model, score, package.total_bytes));
        }
    }
    rejected.sort_by(|a, b| a.model.cmp(&b.model));

    match best {
        Some((model, score, package_bytes)) => Ok(Selection {
            model: model.clone(),
            package_bytes,
            score,
            rejected,
        }),
        None => Err(CatalogError::NoFeasibleModel(rejected)),
    }
}

pub fn select_model(
    catalog: &[ModelArtifact],
    constraints: &SelectionConstraints,
) -> Result<ModelArtifact, CatalogError> {
    select_model_explained(catalog, constraints).map(|s| s.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::units::mb;

    fn onnx() -> RuntimeLibrary {
        RuntimeLibrary::new("onnxruntime", mb(14), ["onnx"]).unwrap()
    }

    fn constraints(limit_mb: u64, metric: &str) -> SelectionConstraints {
        SelectionConstraints {
            max_package_bytes: mb(limit_mb),
            code_bytes: mb(1),
            runtime: onnx(),
            objective_metric: metric.into(),
            min_score: None,
        }
    }

    #[test]
    fn sentiment_fixture_matches_table() {
        let cat = fixtures::sentiment_models();
        let got: Vec<(&str, u64, f64)> = cat
            .iter()
            .map(|m| (m.name.as_str(), m.size_bytes, m.score("f1_macro").unwrap()))
            .collect();
        assert_eq!(
            got,
            vec![
                ("BERT_BASE+GRU", mb(426), 0.75),
                ("BERT_BASE_CLS", mb(420), 0.84),
                ("TinyBERT", mb(56), 0.82),
                ("MobileBERT", mb(98), 0.84),
            ]
        );
    }

    #[test]
    fn sts_fixture_has_all_rows() {
        let cat = fixtures::sts_models();
        assert_eq!(cat.len(), 12);
        let aug = cat.iter().find(|m| m.name == "AugSMobileBERT").unwrap();
        assert_eq!(aug.score("spearman_target"), Some(61.75));
        assert_eq!(aug.score("spearman_stsb"), Some(80.47));
        assert_eq!(aug.embedding_dim, Some(512));
        let tiny = cat.iter().find(|m| m.name == "STinyBERT-NLI").unwrap();
        assert_eq!(tiny.embedding_dim, Some(312));
    }

    #[test]
    fn empty_catalog_loads() {
        assert!(load_catalog("[]").unwrap().is_empty());
    }

    #[test]
    fn f1_out_of_range() {
        let text = r#"[{"name":"x","size_bytes":10,"format":"onnx","metrics":{"f1_macro":1.3}}]"#;
        assert!(matches!(
            load_catalog(text),
            Err(CatalogError::Invariant { .. })
        ));
    }

    #[test]
    fn duplicate_names() {
        let text = r#"[{"name":"x","size_bytes":10,"format":"onnx"},
                       {"name":"x","size_bytes":11,"format":"onnx"}]"#;
        assert!(matches!(
            load_catalog(text),
            Err(CatalogError::DuplicateName(n)) if n == "x"
        ));
    }

    #[test]
    fn parse_error_has_line_context() {
        let text = "[\n  {\"name\": \"x\",\n   \"size_bytes\": oops}\n]";
        match load_catalog(text) {
            Err(CatalogError::Parse { line, context, .. }) => {
                assert_eq!(line, 3);
                assert!(context.unwrap().contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn selects_mobilebert_under_250() {
        let cat = fixtures::sentiment_models();
        let sel = select_model_explained(&cat, &constraints(250, "f1_macro")).unwrap();
        assert_eq!(sel.model.name, "MobileBERT");
        assert_eq!(sel.score, 0.84);
        let rejected: Vec<&str> = sel.rejected.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(rejected, vec!["BERT_BASE+GRU", "BERT_BASE_CLS"]);
    }

    #[test]
    fn selects_tinybert_under_75() {
        let cat = fixtures::sentiment_models();
        assert_eq!(
            select_model(&cat, &constraints(75, "f1_macro"))
                .unwrap()
                .name,
            "TinyBERT"
        );
    }

    #[test]
    fn min_score_unreachable() {
        let cat = fixtures::sentiment_models();
        let mut c = constraints(250, "f1_macro");
        c.min_score = Some(0.90);
        match select_model(&cat, &c) {
            Err(CatalogError::NoFeasibleModel(r)) => {
                assert_eq!(r.len(), 4);
                assert!(r
                    .iter()
                    .any(|x| matches!(x.binding, Binding::MinScore { .. })));
                assert!(r
                    .iter()
                    .any(|x| matches!(x.binding, Binding::PackageSize { .. })));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sts_target_selects_aug_mobilebert() {
        let cat = fixtures::sts_models();
        let sel = select_model_explained(&cat, &constraints(250, "spearman_target")).unwrap();
        assert_eq!(sel.model.name, "AugSMobileBERT");
        assert_eq!(sel.score, 61.75);
    }

    #[test]
    fn ties_prefer_smaller_then_name() {
        let cat = vec![
            ModelArtifact::new("b", mb(10), "onnx").with_metric("s", 1.0),
            ModelArtifact::new("a", mb(10), "onnx").with_metric("s", 1.0),
            ModelArtifact::new("c", mb(5), "onnx").with_metric("s", 1.0),
        ];
        assert_eq!(
            select_model(&cat, &constraints(100, "s")).unwrap().name,
            "c"
        );
        let cat = &cat[..2];
        assert_eq!(select_model(cat, &constraints(100, "s")).unwrap().name, "a");
    }

    #[test]
    fn format_and_metric_rejections() {
        let cat = vec![
            ModelArtifact::new("lite", mb(5), "tflite").with_metric("s", 9.0),
            ModelArtifact::new("nometric", mb(5), "onnx"),
            ModelArtifact::new("ok", mb(5), "onnx").with_metric("s", 1.0),
        ];
        let sel = select_model_explained(&cat, &constraints(100, "s")).unwrap();
        assert_eq!(sel.model.name, "ok");
        assert!(matches!(
            sel.rejected[0].binding,
            Binding::IncompatibleFormat { .. }
        ));
        assert!(matches!(
            sel.rejected[1].binding,
            Binding::MissingMetric { .. }
        ));
    }

    #[test]
    fn invalid_constraints_and_empty() {
        let cat = fixtures::sentiment_models();
        assert!(matches!(
            select_model(&cat, &constraints(15, "f1_macro")),
            Err(CatalogError::InvalidConstraints { .. })
        ));
        assert!(matches!(
            select_model(&[], &constraints(250, "f1_macro")),
            Err(CatalogError::EmptyCatalog)
        ));
    }

    mod props {
        use super::*;
        use crate::fixtures;
        use crate::providers::{validate_plan, DeploymentPlan, ProviderLimits};
        use crate::units::{gb, Limit};
        use proptest::prelude::*;

        fn arb_catalog() -> impl Strategy<Value = Vec<ModelArtifact>> {
            prop::collection::vec((1u64..600, 0u8..20), 1..12).prop_map(|rows| {
                rows.into_iter()
                    .enumerate()
                    .map(|(i, (size, score))| {
                        ModelArtifact::new(&format!("m{i:02}"), mb(size), "onnx")
                            .with_metric("s", score as f64 / 20.0)
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn permutation_invariant(cat in arb_catalog(), limit in 20u64..700, rot in 0usize..12) {
                let c = constraints(limit, "s");
                let mut perm = cat.clone();
                perm.reverse();
                let k = rot % perm.len();
                perm.rotate_left(k);
                let a = select_model(&cat, &c).ok().map(|m| m.name);
                let b = select_model(&perm, &c).ok().map(|m| m.name);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn relaxing_limit_never_lowers_score(cat in arb_catalog(), lo in 20u64..700, extra in 0u64..400) {
                let a = select_model_explained(&cat, &constraints(lo, "s")).ok().map(|s| s.score);
                let b = select_model_explained(&cat, &constraints(lo + extra, "s")).ok().map(|s| s.score);
                if let Some(a) = a {
                    prop_assert!(b.unwrap() >= a);
                }
            }

            #[test]
            fn selection_revalidates(cat in arb_catalog(), limit in 20u64..700) {
                let c = constraints(limit, "s");
                if let Ok(sel) = select_model_explained(&cat, &c) {
                    let pkg = assemble_package(c.code_bytes, &c.runtime, &sel.model).unwrap();
                    let limits = ProviderLimits {
                        name: "custom".into(),
                        max_package_bytes: Limit::Finite(c.max_package_bytes),
                        ..fixtures::providers().get("aws").unwrap().clone()
                    };
                    let plan = DeploymentPlan { memory_bytes: gb(1), package: pkg };
                    prop_assert!(validate_plan(&plan, &limits).passed);
                }
            }
        }
    }
}
