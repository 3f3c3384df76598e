//! Declarative experiment specification, read from TOML.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Marginals,
    SubpopVariance,
    Collision,
    BlowupFunctional,
    Ghost,
    Nimfa,
    Oracle,
    Bounds,
    Homdensity,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Marginals => "marginals",
            Quantity::SubpopVariance => "subpop_variance",
            Quantity::Collision => "collision",
            Quantity::BlowupFunctional => "blowup_functional",
            Quantity::Ghost => "ghost",
            Quantity::Nimfa => "nimfa",
            Quantity::Oracle => "oracle",
            Quantity::Bounds => "bounds",
            Quantity::Homdensity => "homdensity",
        }
    }

    pub fn is_monte_carlo(self) -> bool {
        !matches!(self, Quantity::Nimfa | Quantity::Oracle | Quantity::Bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    LinfCounterexample,
    RegularScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    #[default]
    ErdosRenyi,
    ChungLu,
    Complete,
    DirectedStarOut,
    Path,
    RandomRegular,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// `a / d̄` per interaction order.
    #[default]
    AverageDegree,
    /// `factor · a`, or `n^{-factor_exponent} · a`.
    Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBlock {
    #[serde(default)]
    pub kind: GraphKind,
    #[serde(default)]
    pub n: usize,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub d: Option<usize>,
    pub path: Option<PathBuf>,
    /// Add every triangle `{a, b} → c` as an order-2 hyperedge.
    #[serde(default)]
    pub triangles: bool,
    #[serde(default)]
    pub scaling: Scaling,
    pub factor: Option<f64>,
    pub factor_exponent: Option<f64>,
    /// Defaults to a value derived from the experiment seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sis,
    SimplicialSis,
    Sais,
    TriangleFlip,
    JointSiFlip,
    LinfCounterexample,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    #[serde(default)]
    pub recovery: f64,
    pub beta_s: Option<f64>,
    pub beta_a: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    /// Vertex count for the flip and joint models.
    pub n: Option<usize>,
    pub clique_size: Option<usize>,
    pub hyperedge_cap: Option<usize>,
    /// Rule-set file for `kind = "rules"`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    /// Per-vertex state probabilities by state name; missing states get 0.
    #[serde(default)]
    pub probs: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Subpopulation `M` is the first `subset_size` vertices.
    pub subset_size: Option<usize>,
    /// State name for subpopulation averages.
    pub state: Option<String>,
    pub roots: Option<Vec<usize>>,
    pub pairs: Option<Vec<(usize, usize)>>,
    pub motif: Option<String>,
    pub hom_samples: Option<usize>,
    pub size_cap: Option<usize>,
    pub pop_cap: Option<usize>,
    pub oracle_cap: Option<usize>,
    /// Degrees for the `regular-scaling` preset.
    pub degrees: Option<Vec<usize>>,
    /// `r̃_max` values for the `linf-counterexample` preset.
    pub rtilde: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub quantities: Vec<Quantity>,
    pub preset: Option<Preset>,
    pub output: Option<PathBuf>,
    pub graph: Option<GraphBlock>,
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub init: InitBlock,
    #[serde(default)]
    pub options: Options,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_replicas() -> usize {
    1000
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::SpecInvalid(e.to_string()))
    }

    pub fn from_value(value: toml::Value) -> Result<Self, CliError> {
        value.try_into().map_err(|e: toml::de::Error| CliError::SpecInvalid(e.to_string()))
    }

    /// Structural checks that do not need the built model.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::SpecInvalid(msg));
        if self.preset.is_none() {
            if self.quantities.is_empty() {
                return bad("quantities list is empty".into());
            }
            if self.model.is_none() {
                return bad("missing [model] block".into());
            }
            if self.t_grid.is_empty() && self.quantities.iter().any(|q| *q != Quantity::Bounds) {
                return bad("t_grid is empty".into());
            }
        }
        if self.t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad("t_grid entries must be finite and non-negative".into());
        }
        if self.t_grid.windows(2).any(|w| w[1] < w[0]) {
            return bad("t_grid must be non-decreasing".into());
        }
        if self.quantities.iter().any(|q| q.is_monte_carlo()) && self.replicas < 3 {
            return bad(format!("replicas = {} but Monte Carlo quantities need at least 3", self.replicas));
        }
        let mut seen = Vec::new();
        for q in &self.quantities {
            if seen.contains(q) {
                return bad(format!("quantity `{}` listed twice", q.name()));
            }
            seen.push(*q);
        }
        Ok(())
    }
}

/// Sets `value` at the dotted `path` of a TOML table; the path must already exist.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), CliError> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (k, key) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::SpecInvalid(format!("`{}` is not a table", keys[..k].join("."))))?;
        let slot =
            table.get_mut(*key).ok_or_else(|| CliError::SpecInvalid(format!("parameter `{path}` not in template")))?;
        if k + 1 == keys.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split always yields at least one key")
}

/// Parses a sweep value as a TOML scalar: integer, float, boolean or bare string.
pub fn parse_scalar(text: &str) -> toml::Value {
    if let Ok(i) = text.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = text.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = text.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(text.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        replicas = 10
        t_grid = [0.5, 1.0]
        quantities = ["marginals", "nimfa"]
        [graph]
        kind = "path"
        n = 4
        [model]
        kind = "sis"
        recovery = 0.2
        [init]
        probs = { S = 0.5, I = 0.5 }
    "#;

    #[test]
    fn parses_and_validates() {
        let spec = ExperimentSpec::from_toml(MINIMAL).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.quantities, vec![Quantity::Marginals, Quantity::Nimfa]);
        assert_eq!(spec.graph.unwrap().kind, GraphKind::Path);
    }

    #[test]
    fn empty_quantities_are_rejected() {
        let text = MINIMAL.replace(r#"quantities = ["marginals", "nimfa"]"#, "quantities = []");
        let err = ExperimentSpec::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(matches!(err, CliError::SpecInvalid(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("recovery = 0.2", "recovery = 0.2\nrecovry = 1");
        assert!(ExperimentSpec::from_toml(&text).is_err());
    }

    #[test]
    fn set_path_requires_existing_key() {
        let mut v: toml::Value = toml::from_str(MINIMAL).unwrap();
        set_path(&mut v, "graph.n", toml::Value::Integer(9)).unwrap();
        assert_eq!(v["graph"]["n"].as_integer(), Some(9));
        assert!(set_path(&mut v, "graph.lambda", toml::Value::Float(1.0)).is_err());
        assert_eq!(parse_scalar("12"), toml::Value::Integer(12));
        assert_eq!(parse_scalar("0.5"), toml::Value::Float(0.5));
    }
}
