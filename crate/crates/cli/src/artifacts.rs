//! Artifact envelopes, output layout, and the pipeline manifest.
//!
//! Every JSON artifact is wrapped in an envelope carrying (seed, config
//! hash, stage name, artifact version); CSVs carry the same metadata in
//! a leading comment line. Readers turn a missing file into the
//! dedicated missing-upstream error so stages can name exactly which
//! prerequisite was not produced yet.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cfad_core::datasets::{read_canonical_csv, write_canonical_csv};
use cfad_core::scm::Dataset;

use crate::config::RunConfig;
use crate::CliError;

/// Version stamped into every artifact this binary writes.
pub const ARTIFACT_VERSION: u32 = 1;

/// Identity of one run stage, used in envelopes and file metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageMeta<'a> {
    pub seed: u64,
    pub config_hash: &'a str,
    pub stage: &'a str,
}

impl<'a> StageMeta<'a> {
    pub fn new(config: &'a RunConfig, hash: &'a str, stage: &'a str) -> Self {
        StageMeta { seed: config.seed, config_hash: hash, stage }
    }

    fn comment(&self) -> String {
        format!(
            "seed={} config_hash={} stage={} artifact_version={}",
            self.seed, self.config_hash, self.stage, ARTIFACT_VERSION
        )
    }
}

/// JSON envelope: run identity plus the stage payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub seed: u64,
    pub config_hash: String,
    pub stage: String,
    pub version: u32,
    pub payload: T,
}

/// Writes a JSON artifact, creating parent directories as needed.
pub fn write_json<T: Serialize>(path: &Path, meta: StageMeta, payload: &T) -> Result<(), CliError> {
    let artifact = Artifact {
        seed: meta.seed,
        config_hash: meta.config_hash.to_string(),
        stage: meta.stage.to_string(),
        version: ARTIFACT_VERSION,
        payload,
    };
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Reads a JSON artifact. A missing file is the missing-upstream error;
/// anything else unreadable is a runtime error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact { path: path.to_path_buf() })
        }
        Err(e) => return Err(CliError::Runtime(format!("cannot read {}: {e}", path.display()))),
    };
    let artifact: Artifact<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("cannot parse {}: {e}", path.display())))?;
    if artifact.version != ARTIFACT_VERSION {
        return Err(CliError::Runtime(format!(
            "{} has artifact version {}, this binary expects {}",
            path.display(),
            artifact.version,
            ARTIFACT_VERSION
        )));
    }
    Ok(artifact)
}

/// Writes a canonical dataset CSV stamped with the stage metadata.
pub fn write_dataset(
    path: &Path,
    meta: StageMeta,
    data: &Dataset,
    cf_of: Option<&[usize]>,
) -> Result<(), CliError> {
    ensure_parent(path)?;
    write_canonical_csv(path, data, cf_of, Some(&meta.comment()))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Reads a canonical dataset CSV written by an earlier stage.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf() });
    }
    read_canonical_csv(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    Ok(())
}

/// Output layout of one run directory.
#[derive(Clone, Debug)]
pub struct OutDirs {
    root: PathBuf,
}

impl OutDirs {
    pub fn new(root: &Path) -> Self {
        OutDirs { root: root.to_path_buf() }
    }

    pub fn synth_train(&self) -> PathBuf {
        self.root.join("synth/train.csv")
    }

    pub fn synth_test(&self) -> PathBuf {
        self.root.join("synth/test.csv")
    }

    pub fn synth_train_cf(&self) -> PathBuf {
        self.root.join("synth/train_cf.csv")
    }

    pub fn synth_test_cf(&self) -> PathBuf {
        self.root.join("synth/test_cf.csv")
    }

    pub fn synth_spec(&self) -> PathBuf {
        self.root.join("synth/spec.json")
    }

    pub fn estimate(&self) -> PathBuf {
        self.root.join("discover/estimate.json")
    }

    pub fn cf_train(&self) -> PathBuf {
        self.root.join("cf/train_cf.csv")
    }

    pub fn cf_test(&self) -> PathBuf {
        self.root.join("cf/test_cf.csv")
    }

    pub fn detector(&self) -> PathBuf {
        self.root.join("train/detector.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("eval/report.json")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("eval/summary.csv")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("eval/sweep.csv")
    }

    pub fn scores_csv(&self) -> PathBuf {
        self.root.join("eval/scores.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.json")
    }
}

/// Pipeline manifest payload: the resolved config and every artifact the
/// run produced, paths relative to the run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub artifacts: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub path: String,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Manifest { config: config.clone(), artifacts: Vec::new() }
    }

    pub fn record(&mut self, stage: &str, path: &Path) {
        let relative = path
            .strip_prefix(&self.config.out)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.artifacts.push(ManifestEntry { stage: stage.to_string(), path: relative });
    }
}
