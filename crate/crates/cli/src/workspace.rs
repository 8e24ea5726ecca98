//! Output directory layout, atomic writes and the provenance manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{runtime, CliError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    pub config_sha256: String,
    /// Path to digest. Workspace artifacts are keyed relative to the output
    /// directory, external inputs by their path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_bytes(&fs::read(path)?))
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Stage owning the artifacts under a top-level directory.
fn producer(rel: &str) -> &str {
    rel.split('/').next().unwrap_or(rel)
}

/// Subcommand that regenerates a stage's artifacts.
pub fn command_for(stage: &str) -> &str {
    match stage {
        "flow" => "estimate-flow",
        other => other,
    }
}

pub struct Workspace {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path).map_err(runtime)?;
            serde_json::from_str(&text).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn save(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(runtime)?;
        write_atomic(&self.path(MANIFEST), text.as_bytes()).map_err(runtime)
    }

    /// Checks that a stage's recorded inputs and outputs still match the
    /// files on disk, then does the same for every stage it read from.
    fn verify_stage(&self, stage: &str, seen: &mut BTreeSet<String>) -> Result<(), CliError> {
        if !seen.insert(stage.to_string()) {
            return Ok(());
        }
        let rec = self
            .manifest
            .stages
            .get(stage)
            .ok_or_else(|| CliError::Missing(format!("no record of stage `{stage}`; run `mesocal {}` first", command_for(stage))))?;
        for (rel, digest) in rec.outputs.iter().chain(&rec.inputs) {
            let internal = rec.outputs.contains_key(rel) || self.manifest.stages.contains_key(producer(rel));
            if !internal {
                continue;
            }
            let current = sha256_file(&self.path(rel)).ok();
            if current.as_deref() != Some(digest.as_str()) {
                return Err(CliError::Missing(format!(
                    "mixed provenance: {rel} changed after `{stage}` ran; rerun `mesocal {}` and the stages after it",
                    command_for(stage)
                )));
            }
        }
        let upstream: BTreeSet<&str> = rec
            .inputs
            .keys()
            .map(|k| producer(k))
            .filter(|p| self.manifest.stages.contains_key(*p))
            .collect();
        for p in upstream {
            if p != stage {
                self.verify_stage(p, seen)?;
            }
        }
        Ok(())
    }

    pub fn begin<'a>(&'a mut self, stage: &'static str, seed: u64, config_text: &str) -> StageRun<'a> {
        StageRun {
            ws: self,
            stage,
            record: StageRecord {
                seed,
                config_sha256: sha256_bytes(config_text.as_bytes()),
                ..Default::default()
            },
            verified: BTreeSet::new(),
            started: Instant::now(),
        }
    }
}

/// Collects the digests of one stage's reads and writes.
pub struct StageRun<'a> {
    ws: &'a mut Workspace,
    stage: &'static str,
    record: StageRecord,
    verified: BTreeSet<String>,
    started: Instant,
}

impl StageRun<'_> {
    pub fn root(&self) -> &Path {
        &self.ws.root
    }

    /// An artifact of an upstream stage, verified against the manifest.
    pub fn artifact(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.ws.path(rel);
        let stage = producer(rel);
        if !path.exists() {
            return Err(CliError::Missing(format!(
                "{rel} not found; run `mesocal {}` first",
                command_for(stage)
            )));
        }
        self.ws.verify_stage(stage, &mut self.verified)?;
        let digest = sha256_file(&path).map_err(runtime)?;
        self.record.inputs.insert(rel.to_string(), digest);
        Ok(path)
    }

    /// A file supplied by the user.
    pub fn external(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        if !path.exists() {
            return Err(CliError::Missing(format!("input file {} not found", path.display())));
        }
        let digest = sha256_file(path).map_err(runtime)?;
        self.record.inputs.insert(path.display().to_string(), digest);
        Ok(path.to_path_buf())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        debug_assert_eq!(producer(rel), self.stage);
        write_atomic(&self.ws.path(rel), bytes).map_err(|e| runtime(anyhow::anyhow!("writing {rel}: {e}")))?;
        self.record.outputs.insert(rel.to_string(), sha256_bytes(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Records the stage in the manifest.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.record.elapsed_s = self.started.elapsed().as_secs_f64();
        self.ws.manifest.stages.insert(self.stage.to_string(), self.record);
        self.ws.save()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn detects_changed_upstream_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path()).unwrap();
        let mut run = ws.begin("ingest", 1, "");
        run.write("ingest/x.csv", b"a").unwrap();
        run.finish().unwrap();
        let mut run = ws.begin("cluster", 1, "");
        run.artifact("ingest/x.csv").unwrap();
        run.write("cluster/y.csv", b"b").unwrap();
        run.finish().unwrap();

        let mut ws = Workspace::open(dir.path()).unwrap();
        let mut run = ws.begin("flow", 1, "");
        assert!(run.artifact("cluster/y.csv").is_ok());
        drop(run);
        fs::write(dir.path().join("ingest/x.csv"), b"changed").unwrap();
        let mut run = ws.begin("flow", 1, "");
        let err = run.artifact("cluster/y.csv").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("mixed provenance"));
    }

    #[test]
    fn missing_artifact_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path()).unwrap();
        let mut run = ws.begin("report", 1, "");
        let err = run.artifact("flow/flow_report.json").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("estimate-flow"), "{err}");
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
