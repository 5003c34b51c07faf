//! Where each stage reads and writes under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn volumes(&self) -> PathBuf {
        self.corpus().join("volumes")
    }

    pub fn volume_header(&self, scan_id: &str) -> PathBuf {
        self.volumes().join(format!(
            "{scan_id}{}",
            axialnet::volgrid::VOLUME_HEADER_SUFFIX
        ))
    }

    pub fn truth_masks(&self) -> PathBuf {
        self.corpus().join("truth")
    }

    pub fn reports(&self) -> PathBuf {
        self.corpus().join("reports")
    }

    pub fn report(&self, scan_id: &str) -> PathBuf {
        self.reports().join(format!("{scan_id}.txt"))
    }

    pub fn truth_labels(&self) -> PathBuf {
        self.corpus().join("truth_labels.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus().join("manifest.json")
    }

    pub fn labels(&self) -> PathBuf {
        self.root.join("labels.json")
    }

    pub fn segmentation(&self) -> PathBuf {
        self.root.join("segmentation")
    }

    pub fn qc_log(&self) -> PathBuf {
        self.segmentation().join("qc.jsonl")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn explain(&self) -> PathBuf {
        self.root.join("explain")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}
