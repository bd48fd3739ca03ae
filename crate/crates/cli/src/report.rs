use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Default, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub inputs: BTreeMap<String, Value>,
    pub results: BTreeMap<String, Value>,
    pub tolerances: BTreeMap<String, f64>,
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl RunReport {
    pub fn input(&mut self, k: &str, v: impl Serialize) {
        self.inputs.insert(k.into(), json!(v));
    }

    pub fn result(&mut self, k: &str, v: impl Serialize) {
        self.results.insert(k.into(), json!(v));
    }

    /// A scalar with the tolerance it was obtained or checked at.
    pub fn scalar(&mut self, k: &str, value: f64, tolerance: f64) {
        self.result(k, json!({ "value": value, "tolerance": tolerance }));
    }

    /// A scalar compared against a reference value.
    pub fn checked(&mut self, k: &str, value: f64, expected: f64, tolerance: f64) -> bool {
        let pass = (value - expected).abs() <= tolerance;
        self.result(k, json!({ "value": value, "expected": expected, "tolerance": tolerance, "pass": pass }));
        pass
    }

    pub fn artifact(&mut self, k: &str, path: &Path) {
        self.artifacts.insert(k.into(), path.display().to_string());
    }
}

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts { dir: dir.to_path_buf() }
    }

    pub fn write(&self, name: &str, value: &impl Serialize) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
