//! Atomic file output, content hashes and the run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PipelineConfig, StageSeeds};
use crate::error::{Error, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Opens a prior stage's output or names the command that makes it.
pub fn open_artifact(path: &Path, producer: &'static str) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        },
        _ => Error::Io(e),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open_artifact(path, producer)?))?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// `key=value` pairs from the leading `#` lines of a CSV artifact.
pub fn read_comment_fields(path: &Path, producer: &'static str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in BufReader::new(open_artifact(path, producer)?).lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        for part in rest.split_whitespace() {
            if let Some((k, v)) = part.split_once('=') {
                out.insert(k.to_string(), v.to_string());
            }
        }
    }
    Ok(out)
}

/// Errors unless `found` is the current config hash.
pub fn check_hash(path: &Path, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Content hash of every input, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Run record in the workdir: versions, seeds and what each stage consumed
/// and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: StageSeeds,
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn path(workdir: &Path) -> PathBuf {
        workdir.join(super::MANIFEST)
    }

    pub fn load_or_new(cfg: &PipelineConfig) -> Result<Self> {
        let path = Self::path(&cfg.workdir);
        let stages = if path.exists() {
            let old: Manifest = read_json(&path, "any stage")?;
            old.stages
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            config: cfg.clone(),
            stages,
        })
    }

    pub fn save(&self, workdir: &Path) -> Result<()> {
        write_json(&Self::path(workdir), self)
    }
}

fn key(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Whether a stage was executed or skipped as current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

/// Runs `body` unless the manifest shows the same config, identical inputs
/// and untouched outputs for this stage. `body` returns the files it wrote.
pub fn run_stage(
    cfg: &PipelineConfig,
    stage: &str,
    inputs: &[(PathBuf, &'static str)],
    body: impl FnOnce() -> Result<Vec<PathBuf>>,
) -> Result<StageOutcome> {
    let mut input_hashes = BTreeMap::new();
    for (path, producer) in inputs {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.clone(),
                producer,
            });
        }
        input_hashes.insert(key(path), sha256_file(path)?);
    }
    let hash = cfg.hash();
    let manifest = Manifest::load_or_new(cfg)?;
    if let Some(rec) = manifest.stages.get(stage) {
        let outputs_intact = rec
            .outputs
            .iter()
            .all(|(p, h)| sha256_file(Path::new(p)).is_ok_and(|cur| &cur == h));
        if rec.config_hash == hash && rec.inputs == input_hashes && outputs_intact && !rec.outputs.is_empty() {
            log::info!("{stage}: up to date");
            return Ok(StageOutcome::UpToDate);
        }
    }
    log::info!("{stage}: running");
    let outputs = body()?;
    let mut output_hashes = BTreeMap::new();
    for p in &outputs {
        output_hashes.insert(key(p), sha256_file(p)?);
    }
    // Reload: a nested stage may have updated the manifest meanwhile.
    let mut manifest = Manifest::load_or_new(cfg)?;
    manifest.stages.insert(
        stage.to_string(),
        StageRecord {
            config_hash: hash,
            inputs: input_hashes,
            outputs: output_hashes,
        },
    );
    manifest.save(&cfg.workdir)?;
    Ok(StageOutcome::Ran)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"first version")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"kept")?)).unwrap();
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            Err(Error::invalid("boom"))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "kept");
    }

    #[test]
    fn missing_artifact_names_producer() {
        let err = open_artifact(Path::new("/nonexistent/dataset.jsonl"), "extract").unwrap_err();
        assert!(err.to_string().contains("run `extract` first"), "{err}");
    }

    #[test]
    fn comment_fields_parsed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "# config_hash=abc seed=3\n# note\na,b\n# not=read\n").unwrap();
        let f = read_comment_fields(&p, "score").unwrap();
        assert_eq!(f["config_hash"], "abc");
        assert_eq!(f["seed"], "3");
        assert!(!f.contains_key("not"));
    }

    #[test]
    fn stage_skips_when_nothing_changed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            workdir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "x").unwrap();
        let out = dir.path().join("out.txt");
        let mut runs = 0;
        let go = |runs: &mut i32| {
            run_stage(&cfg, "t", &[(input.clone(), "p")], || {
                *runs += 1;
                std::fs::write(&out, "y")?;
                Ok(vec![out.clone()])
            })
            .unwrap()
        };
        assert_eq!(go(&mut runs), StageOutcome::Ran);
        assert_eq!(go(&mut runs), StageOutcome::UpToDate);
        std::fs::write(&input, "changed").unwrap();
        assert_eq!(go(&mut runs), StageOutcome::Ran);
        std::fs::write(&out, "tampered").unwrap();
        assert_eq!(go(&mut runs), StageOutcome::Ran);
        assert_eq!(runs, 3);
    }
}
