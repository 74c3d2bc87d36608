use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sublab::verify::Tolerances;
use sublab::ModelSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    /// When present must name the subcommand being run.
    #[serde(default)]
    pub operation: Option<String>,
    /// Operation parameters, checked by the subcommand.
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_model() -> ModelSpec {
    ModelSpec::Heisenberg3
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            operation: None,
            params: empty_object(),
            out: None,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow!("config {}: {e}", path.display()))
    }

    /// Applies `--tol-<name> <value>` overrides; dashes in names map to underscores.
    pub fn apply_tolerances(&mut self, overrides: &[(String, f64)]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut v = serde_json::to_value(&self.tolerances)?;
        let obj = v.as_object_mut().expect("tolerances serialise to an object");
        for (name, value) in overrides {
            let key = name.replace('-', "_");
            if !obj.contains_key(&key) {
                let known: Vec<String> = obj.keys().map(|k| k.replace('_', "-")).collect();
                bail!("unknown tolerance --tol-{name}; known: {}", known.join(", "));
            }
            obj.insert(key, Value::from(*value));
        }
        self.tolerances = serde_json::from_value(v)?;
        Ok(())
    }

    pub fn params<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.params.clone()).map_err(|e| anyhow!("params: {e}"))
    }
}

/// Splits `--tol-<name> <v>` and `--tol-<name>=<v>` out of the argument list.
pub fn extract_tolerances(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, f64)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut tols = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--tol-") else {
            rest.push(a);
            continue;
        };
        let (name, raw) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| anyhow!("--tol-{body} needs a value"))?;
                (body.to_string(), v)
            }
        };
        let value: f64 = raw.parse().map_err(|_| anyhow!("--tol-{name}: '{raw}' is not a number"))?;
        if !(value.is_finite() && value > 0.0) {
            bail!("--tol-{name} must be positive, got {value}");
        }
        tols.push((name, value));
    }
    Ok((rest, tols))
}
