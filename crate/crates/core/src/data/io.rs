//! Dataset directory format: `samples.t`, optional `labels.t`, and a small
//! human-editable `manifest.toml` recording provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::tensor_io::{load_tensor, save_tensor};

use super::{Domain, DomainDataset};

pub const SAMPLES_FILE: &str = "samples.t";
pub const LABELS_FILE: &str = "labels.t";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain: Domain,
    pub class_count: usize,
    pub generator: String,
    pub seed: u64,
    /// Generator parameters, free-form so each generator can record its own.
    #[serde(default)]
    pub params: toml::Table,
}

pub fn save_dataset<T: Scalar>(
    dir: &Path,
    dataset: &DomainDataset<T>,
    manifest: &DatasetManifest,
) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    save_tensor(&dir.join(SAMPLES_FILE), &dataset.samples)?;
    if let Some(labels) = &dataset.labels {
        save_tensor(&dir.join(LABELS_FILE), labels)?;
    }
    let text = toml::to_string(manifest)
        .map_err(|e| Error::Format(format!("manifest serialize: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<(DomainDataset<T>, DatasetManifest)> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Format(format!("cannot read manifest in {}: {e}", dir.display())))?;
    let manifest: DatasetManifest = toml::from_str(&manifest_text)
        .map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
    let samples = load_tensor(&dir.join(SAMPLES_FILE))?;
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        Some(load_tensor(&labels_path)?)
    } else {
        None
    };
    let dataset = DomainDataset::new(samples, labels, manifest.domain, manifest.class_count)?;
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generators::gen_two_moons;

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_two_moons::<f32>(20, 0.1, 30.0, 5).unwrap();
        let mut params = toml::Table::new();
        params.insert("n".into(), toml::Value::Integer(20));
        params.insert("noise".into(), toml::Value::Float(0.1));
        params.insert("rotation_deg".into(), toml::Value::Float(30.0));
        let manifest = DatasetManifest {
            domain: Domain::Source,
            class_count: 2,
            generator: "two-moons".into(),
            seed: 5,
            params,
        };
        save_dataset(dir.path(), &ds, &manifest).unwrap();
        let (back, m2) = load_dataset::<f32>(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m2, manifest);
    }

    #[test]
    fn unlabeled_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = gen_two_moons::<f32>(10, 0.0, 0.0, 1).unwrap();
        ds.labels = None;
        ds.domain = Domain::Target;
        let manifest = DatasetManifest {
            domain: Domain::Target,
            class_count: 2,
            generator: "two-moons".into(),
            seed: 1,
            params: toml::Table::new(),
        };
        save_dataset(dir.path(), &ds, &manifest).unwrap();
        let (back, _) = load_dataset::<f32>(dir.path()).unwrap();
        assert!(back.labels.is_none());
    }
}
