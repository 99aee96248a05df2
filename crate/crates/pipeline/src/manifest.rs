//! Run manifest: which stage produced which artifact, with content hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vunwrap_core::{Error, Result};

use crate::store::{read_json, sha256_file, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Calibrate,
    Reconstruct,
    Segment,
    Unwrap,
    All,
}

impl Stage {
    /// Concrete stages in execution order.
    pub const ORDER: [Stage; 5] = [Stage::Simulate, Stage::Calibrate, Stage::Reconstruct, Stage::Segment, Stage::Unwrap];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Calibrate => "calibrate",
            Stage::Reconstruct => "reconstruct",
            Stage::Segment => "segment",
            Stage::Unwrap => "unwrap",
            Stage::All => "all",
        }
    }

    /// Stages whose outputs depend on this one's.
    pub fn downstream(self) -> impl Iterator<Item = Stage> {
        Self::ORDER.into_iter().filter(move |s| *s > self && self != Stage::All)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ORDER
            .into_iter()
            .chain([Stage::All])
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl ArtifactRecord {
    pub fn of(root: &Path, path: &Path) -> Result<Self> {
        let rel = path.strip_prefix(root).unwrap_or(path);
        let bytes = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        Ok(Self {
            path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
            sha256: sha256_file(path)?,
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub outputs: Vec<ArtifactRecord>,
    /// Upstream artifacts as they were when the stage ran.
    pub inputs: Vec<ArtifactRecord>,
    pub seconds: f64,
    /// Stage-specific results (recovered axis, fitness, sheet score, ...).
    #[serde(default)]
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            tool_version: TOOL_VERSION.into(),
            stages: BTreeMap::new(),
        }
    }
}

/// Why a recorded artifact no longer matches the disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Staleness {
    Missing { stage: Stage, path: String },
    Modified { stage: Stage, path: String },
    /// An input changed after the stage consumed it.
    InputChanged { stage: Stage, path: String },
}

impl Manifest {
    /// Loads `manifest.json` from `root`, or an empty manifest.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        read_json(&path)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }

    /// Records `stage` and drops every downstream entry.
    pub fn record(&mut self, stage: Stage, record: StageRecord) {
        for s in stage.downstream() {
            self.stages.remove(&s);
        }
        self.stages.insert(stage, record);
        self.tool_version = TOOL_VERSION.into();
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(&stage)
    }

    /// Hash check of every recorded artifact against the disk.
    pub fn verify(&self, root: &Path) -> Result<Vec<Staleness>> {
        let mut out = Vec::new();
        for (&stage, rec) in &self.stages {
            for a in &rec.outputs {
                let p = root.join(&a.path);
                if !p.exists() {
                    out.push(Staleness::Missing { stage, path: a.path.clone() });
                } else if sha256_file(&p)? != a.sha256 {
                    out.push(Staleness::Modified { stage, path: a.path.clone() });
                }
            }
            for a in &rec.inputs {
                let p = root.join(&a.path);
                if !p.exists() || sha256_file(&p)? != a.sha256 {
                    out.push(Staleness::InputChanged { stage, path: a.path.clone() });
                }
            }
        }
        Ok(out)
    }
}
