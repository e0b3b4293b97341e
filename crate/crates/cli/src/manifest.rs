//! Per-run provenance record: every subcommand writes `run.json` into its
//! output directory before doing real work and finalizes it on exit, so an
//! interrupted run is distinguishable from a finished one.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// The invocation, argv joined by spaces.
    pub command: String,
    /// Fully resolved configuration after defaults, file, and flag merging.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path as given.
    pub input_checksums: BTreeMap<String, String>,
    /// Files this run produced, relative to the output directory when possible.
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
    /// "running" while in flight, then "ok" or an error note.
    pub exit_status: String,
}

/// Live handle for a manifest. Dropping it without calling [`Run::finish`]
/// records the run as aborted.
pub struct Run {
    path: PathBuf,
    manifest: RunManifest,
    started: Instant,
    finished: bool,
}

impl Run {
    pub fn start(out_dir: &Path, config: serde_json::Value, inputs: &[&Path]) -> Result<Run> {
        std::fs::create_dir_all(out_dir)?;
        let mut input_checksums = BTreeMap::new();
        for path in inputs {
            input_checksums.insert(
                path.display().to_string(),
                scalelab_core::checksum::sha256_file(path)?,
            );
        }
        let manifest = RunManifest {
            command: std::env::args().collect::<Vec<_>>().join(" "),
            config,
            input_checksums,
            artifacts: Vec::new(),
            wall_clock_secs: 0.0,
            exit_status: "running".into(),
        };
        let run = Run {
            path: out_dir.join("run.json"),
            manifest,
            started: Instant::now(),
            finished: false,
        };
        run.write()?;
        Ok(run)
    }

    fn write(&self) -> Result<()> {
        let tmp = self.path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?)?;
        std::fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    pub fn finish(mut self, artifacts: Vec<PathBuf>) -> Result<()> {
        self.manifest.artifacts = artifacts
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        self.manifest.exit_status = "ok".into();
        self.finished = true;
        self.write()
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if !self.finished {
            self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
            self.manifest.exit_status = "error: aborted before completion".into();
            let _ = self.write();
        }
    }
}
