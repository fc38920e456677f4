//! Experiment manifests: a TOML document naming one or more experiment
//! configurations plus an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    #[serde(default)]
    out_dir: Option<PathBuf>,
    /// Keyed by experiment id; TOML itself rejects duplicate ids.
    #[serde(rename = "experiment")]
    experiments: BTreeMap<String, SimConfig>,
}

#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub out_dir: PathBuf,
    /// `(id, config)` in id order.
    pub experiments: Vec<(String, SimConfig)>,
}

/// Parse and validate a manifest file. Unknown keys are rejected with the
/// offending key named in the error.
pub fn parse_config(path: &Path) -> Result<ExperimentManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, path)
}

pub fn parse_config_str(text: &str, origin: &Path) -> Result<ExperimentManifest> {
    let doc: ManifestDoc = toml::from_str(text)
        .map_err(|e| Error::config(format!("{}: {e}", origin.display())))?;
    let manifest = ExperimentManifest {
        out_dir: doc.out_dir.unwrap_or_else(|| PathBuf::from("results")),
        experiments: doc.experiments.into_iter().collect(),
    };
    for (id, config) in &manifest.experiments {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::config(format!(
                "experiment id {id:?} may only use alphanumerics, '-' and '_'"
            )));
        }
        config
            .validate()
            .map_err(|e| Error::config(format!("experiment {id:?}: {e}")))?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
out_dir = "out"

[experiment.demo]
seed = 1
rounds = 2
clients = 4
malicious = 1
lr = 0.1
batch_size = 4
local_epochs = 1
target_accuracy = 90.0
hidden_dims = []
dataset = { kind = "synthetic", classes = 2, features = 4, samples = 40, separation = 4.0 }
partition = "iid"
agr = { kind = "fed_avg" }
"#;

    #[test]
    fn minimal_document_parses() {
        let m = parse_config_str(MINIMAL, Path::new("test.toml")).unwrap();
        assert_eq!(m.out_dir, PathBuf::from("out"));
        assert_eq!(m.experiments.len(), 1);
        let (id, cfg) = &m.experiments[0];
        assert_eq!(id, "demo");
        assert_eq!(cfg.clients, 4);
        assert_eq!(cfg.partition, crate::sim::PartitionSpec::Iid);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let doc = MINIMAL.replace("lr = 0.1", "lr = 0.1\nbogus_knob = 3");
        let err = parse_config_str(&doc, Path::new("test.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_knob"), "error was: {msg}");
    }

    #[test]
    fn duplicate_id_is_rejected_naming_the_id() {
        let doc = format!(
            "{MINIMAL}\n[experiment.demo]\nseed = 2\nrounds = 1\nclients = 2\nmalicious = 0\nlr = 0.1\nbatch_size = 2\nlocal_epochs = 1\ntarget_accuracy = 50.0\ndataset = {{ kind = \"synthetic\" }}\nagr = {{ kind = \"median\" }}\n"
        );
        let err = parse_config_str(&doc, Path::new("test.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("demo"), "error was: {msg}");
    }

    #[test]
    fn dirichlet_alpha_string_parses() {
        let doc = MINIMAL.replace("partition = \"iid\"", "partition = \"dirichlet(0.5)\"");
        let m = parse_config_str(&doc, Path::new("test.toml")).unwrap();
        assert_eq!(
            m.experiments[0].1.partition,
            crate::sim::PartitionSpec::Dirichlet(0.5)
        );
    }

    #[test]
    fn invalid_config_names_the_experiment() {
        let doc = MINIMAL.replace("malicious = 1", "malicious = 9");
        let err = parse_config_str(&doc, Path::new("test.toml")).unwrap_err();
        assert!(err.to_string().contains("demo"));
    }
}
