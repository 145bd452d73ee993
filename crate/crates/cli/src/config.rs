//! Run configuration files.
//!
//! A file holds either one check or a suite `{"name": …, "checks": [ … ]}`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    VerifyGbc,
    Identity,
    EulerLagrange,
    Reduce,
    Homogeneity,
    Weight,
    Sweep,
    Eval,
    Cylinder,
    Oracle,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::VerifyGbc => "verify-gbc",
            Task::Identity => "identity",
            Task::EulerLagrange => "euler-lagrange",
            Task::Reduce => "reduce",
            Task::Homogeneity => "homogeneity",
            Task::Weight => "weight",
            Task::Sweep => "sweep",
            Task::Eval => "eval",
            Task::Cylinder => "cylinder",
            Task::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankChoice {
    Scalar,
    Tensor,
}

/// A catalog name, optionally with parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifoldSpec {
    Name(String),
    Full {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
}

impl ManifoldSpec {
    pub fn name(&self) -> &str {
        match self {
            ManifoldSpec::Name(n) | ManifoldSpec::Full { name: n, .. } => n,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        match self {
            ManifoldSpec::Name(_) => BTreeMap::new(),
            ManifoldSpec::Full { params, .. } => params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Expected value; defaults to the Gauss–Bonnet–Chern prediction where one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    /// Dimension of random algebraic curvature tensors (identity task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Number of random samples or points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Kulkarni–Nomizu squares per random curvature tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<usize>,
    /// Number of seeded perturbation directions (euler-lagrange).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    /// Explicit perturbation, row-major `n × n` expression sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Vec<String>>,
    /// Parameter sets for a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Vec<BTreeMap<String, f64>>>,
    /// Points for eval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankChoice>,
    /// Trapezoid count on the added circle (cylinder task).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle_resolution: Option<usize>,
    /// Tolerance of the jet-versus-finite-difference part of the oracle task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_tolerance: Option<f64>,
    /// Catalog names for the oracle task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifolds: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub checks: Vec<RunConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn located(path: &str, e: serde_json::Error) -> ConfigError {
    ConfigError(format!("{path}:{}:{}: {e}", e.line(), e.column()))
}

pub fn parse_suite(src: &str, origin: &str) -> Result<SuiteConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(src).map_err(|e| located(origin, e))?;
    let suite = if value.get("checks").is_some() {
        serde_json::from_str::<SuiteConfig>(src).map_err(|e| located(origin, e))?
    } else {
        let check: RunConfig = serde_json::from_str(src).map_err(|e| located(origin, e))?;
        SuiteConfig {
            name: check.name.clone().unwrap_or_else(|| check.task.name().to_string()),
            output: check.output.clone(),
            checks: vec![check],
        }
    };
    if suite.checks.is_empty() {
        return Err(ConfigError(format!("{origin}: suite `{}` has no checks", suite.name)));
    }
    for (i, c) in suite.checks.iter().enumerate() {
        c.validate().map_err(|e| ConfigError(format!("{origin}: checks[{i}] ({}): {e}", c.task.name())))?;
    }
    Ok(suite)
}

pub fn load(path: &Path) -> Result<SuiteConfig, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_suite(&src, &path.display().to_string())
}

impl RunConfig {
    fn require<T>(&self, field: &str, v: &Option<T>) -> Result<(), String> {
        if v.is_none() {
            Err(format!("missing field `{field}`"))
        } else {
            Ok(())
        }
    }

    /// Checks that the fields a task needs are present and sane.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(format!("`tolerance` must be positive, got {t}"));
            }
        }
        if let Some(eps) = &self.eps {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) {
                return Err("`eps` must be a non-empty list of positive numbers".into());
            }
        }
        if let Some(l) = &self.lambda {
            if l.is_empty() || l.iter().any(|x| !(*x > 0.0)) {
                return Err("`lambda` must be a non-empty list of positive numbers".into());
            }
        }
        if let Some(r) = &self.resolution {
            if r.is_empty() || r.iter().any(|&c| c < 2) {
                return Err("`resolution` entries must be at least 2".into());
            }
        }
        if self.format == Some(Format::Csv) && self.task != Task::Sweep {
            return Err("`format: csv` is only available for the sweep task".into());
        }
        match self.task {
            Task::VerifyGbc | Task::Cylinder | Task::Weight | Task::Reduce | Task::Homogeneity => {
                self.require("manifold", &self.manifold)?;
                self.require("k", &self.k)?;
            }
            Task::EulerLagrange | Task::Sweep => {
                self.require("manifold", &self.manifold)?;
                self.require("k", &self.k)?;
            }
            Task::Identity => {
                self.require("k", &self.k)?;
                if self.dim.is_none() && self.manifold.is_none() {
                    return Err("missing field `dim` (or `manifold`)".into());
                }
            }
            Task::Eval => {
                self.require("manifold", &self.manifold)?;
                self.require("points", &self.points)?;
            }
            Task::Oracle => {}
        }
        if self.task == Task::Sweep {
            self.require("family", &self.family)?;
        }
        if matches!(self.task, Task::Weight | Task::Homogeneity) {
            self.require("lambda", &self.lambda)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_check_and_suite() {
        let s = parse_suite(r#"{"task": "verify-gbc", "manifold": "sphere2", "k": 1}"#, "x").unwrap();
        assert_eq!(s.checks.len(), 1);
        assert_eq!(s.name, "verify-gbc");
        let s = parse_suite(
            r#"{"name": "two", "checks": [
                {"task": "verify-gbc", "manifold": {"name": "conformal_sphere2", "params": {"t": 0.2}}, "k": 1},
                {"task": "oracle"}
            ]}"#,
            "x",
        )
        .unwrap();
        assert_eq!(s.checks[0].manifold.as_ref().unwrap().params()["t"], 0.2);
    }

    #[test]
    fn diagnostics_name_the_problem() {
        let e = parse_suite(r#"{"task": "verify-gbc", "manifold": "sphere2"}"#, "c.json").unwrap_err();
        assert!(e.0.contains("missing field `k`"), "{e}");
        let e = parse_suite("{\n  \"task\": \"nope\"\n}", "c.json").unwrap_err();
        assert!(e.0.starts_with("c.json:2:"), "{e}");
        let e = parse_suite(r#"{"task": "eval", "manifold": "sphere2", "points": [], "bogus": 1}"#, "c").unwrap_err();
        assert!(e.0.contains("bogus"), "{e}");
        let e = parse_suite(r#"{"task": "verify-gbc", "manifold": "sphere2", "k": 1, "tolerance": 0}"#, "c").unwrap_err();
        assert!(e.0.contains("tolerance"));
        let e = parse_suite(r#"{"task": "verify-gbc", "manifold": "sphere2", "k": 1, "format": "csv"}"#, "c").unwrap_err();
        assert!(e.0.contains("csv"));
    }
}
