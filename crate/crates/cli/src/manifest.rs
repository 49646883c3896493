use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub timings: Vec<StageTiming>,
    pub results: Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config).expect("configs serialize"),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            threads: rayon::current_num_threads(),
            timings: Vec::new(),
            results: Value::Object(Default::default()),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    pub fn result(&mut self, name: &str, value: impl Serialize) {
        self.results[name] = serde_json::to_value(value).expect("results serialize");
    }

    /// Runs `f` and records its wall-clock time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text)
            .map_err(|e| CliError::Core(styletrf::Error::Io { path: path.into(), source: e }))
    }
}

/// `<file>.run.json` beside a file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    path.with_file_name(name)
}
