//! On-disk layout of one run.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::EvolutionConfig;
use super::evaluate::EvaluationReport;
use crate::microworld::TaskFamily;
use crate::store::SkillStore;
use crate::trajectory::{serialize, Trajectory};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const STAGES_CSV: &str = "stages.csv";
pub const SUMMARY: &str = "summary.json";

/// Column order of `stages.csv`.
pub fn csv_header() -> String {
    let mut cols = vec!["stage", "skill_version", "episodes", "successes", "rate"];
    cols.extend(TaskFamily::ALL.iter().map(|f| f.as_str()));
    cols.join(",")
}

pub fn csv_row(r: &EvaluationReport) -> String {
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut cols = vec![
        r.stage.to_string(),
        r.skill_version.to_string(),
        r.episodes.to_string(),
        r.successes.to_string(),
        fmt(r.rate),
    ];
    cols.extend(
        TaskFamily::ALL
            .iter()
            .map(|f| fmt(r.per_family.get(f).and_then(|c| c.rate()))),
    );
    cols.join(",")
}

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("run directory {0} is not empty")]
    NotEmpty(PathBuf),
    #[error("{0} is not a run directory (no {MANIFEST})")]
    NotARun(PathBuf),
    #[error("run directory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("skill store: {0}")]
    Store(#[from] crate::store::StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub created_unix_secs: u64,
    pub mode: String,
    pub master_seed: u64,
    pub executor_digest: String,
    pub config: EvolutionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub master_seed: u64,
    pub revisions: usize,
    pub stage_count: usize,
    pub train_episodes: usize,
    pub stopped: String,
    pub evaluated_stages: Vec<usize>,
    pub final_skill_version: u64,
    pub initial_rate: Option<f64>,
    pub final_rate: Option<f64>,
}

pub struct RunDir {
    root: PathBuf,
    lines: Mutex<()>,
}

impl RunDir {
    /// Creates the layout; refuses a directory that already has entries.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, RunDirError> {
        let root = root.into();
        if root.exists() && fs::read_dir(&root)?.next().is_some() {
            return Err(RunDirError::NotEmpty(root));
        }
        for sub in ["skills", "trajectories/train", "trajectories/eval", "audit", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root,
            lines: Mutex::new(()),
        })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RunDirError> {
        let root = root.into();
        if !root.join(MANIFEST).is_file() {
            return Err(RunDirError::NotARun(root));
        }
        Ok(Self {
            root,
            lines: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn store(&self) -> Result<SkillStore, RunDirError> {
        Ok(SkillStore::open(self.root.join("skills"))?)
    }

    pub fn write_json(&self, rel: &str, value: &impl Serialize) -> Result<(), RunDirError> {
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        fs::write(self.root.join(rel), text + "\n")?;
        Ok(())
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<(), RunDirError> {
        fs::write(self.root.join(rel), text)?;
        Ok(())
    }

    /// Appends one JSON line to an audit log.
    pub fn append_audit(&self, name: &str, value: &impl Serialize) -> Result<(), RunDirError> {
        let _guard = self.lines.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("audit").join(name))?;
        let line = serde_json::to_string(value).expect("value serializes");
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn trajectory_path(&self, split: &str, trajectory_id: &str) -> PathBuf {
        self.root
            .join("trajectories")
            .join(split)
            .join(format!("{trajectory_id}.jsonl"))
    }

    pub fn write_trajectory(&self, split: &str, traj: &Trajectory) -> Result<PathBuf, RunDirError> {
        let path = self.trajectory_path(split, &traj.trajectory_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(&path)?);
        serialize(traj, &mut out)?;
        out.flush()?;
        Ok(path)
    }

    pub fn report_path(&self, stage: usize) -> PathBuf {
        self.root.join("reports").join(format!("stage_{stage:02}.json"))
    }

    pub fn write_report(&self, report: &EvaluationReport) -> Result<(), RunDirError> {
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        fs::write(self.report_path(report.stage), text + "\n")?;
        Ok(())
    }

    pub fn write_csv(&self, reports: &[EvaluationReport]) -> Result<(), RunDirError> {
        let mut text = csv_header() + "\n";
        for r in reports {
            text += &csv_row(r);
            text.push('\n');
        }
        self.write_text(STAGES_CSV, &text)
    }

    pub fn manifest(&self) -> Result<RunManifest, RunDirError> {
        let text = fs::read_to_string(self.root.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| RunDirError::Io(std::io::Error::other(e)))
    }
}
