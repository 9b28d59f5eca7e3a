//! Append-only, versioned skill store.
//!
//! One human-readable TOML document per version (`v0000.skill.toml`, ...),
//! written once and never rewritten. `store.toml` mirrors the latest version
//! and the run-wide rule id counter.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skill::{AppendixItem, Skill, SkillRule, ValidationReport, DIGEST_ALGORITHM};

pub const DOCUMENT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("version gap: expected version {expected}, got {got}")]
    VersionGap { expected: u64, got: u64 },
    #[error("skill version {0} not found")]
    NotFound(u64),
    #[error("corrupt record for version {version}: {reason}")]
    CorruptRecord { version: u64, reason: String },
    #[error("refusing to store invalid skill: {0}")]
    InvalidSkill(ValidationReport),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct SkillDocument {
    format: u32,
    digest_algorithm: String,
    skill_version: u64,
    body_digest: String,
    next_rule_id: u64,
    #[serde(default)]
    body: Vec<SkillRule>,
    #[serde(default)]
    appendix: Vec<AppendixItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    latest_version: u64,
    next_rule_id: u64,
}

/// Serializes a skill to its on-disk document form.
pub fn to_document(skill: &Skill) -> String {
    let doc = SkillDocument {
        format: DOCUMENT_FORMAT,
        digest_algorithm: DIGEST_ALGORITHM.to_string(),
        skill_version: skill.version,
        body_digest: skill.body_digest.clone(),
        next_rule_id: skill.next_rule_id,
        body: skill.body.clone(),
        appendix: skill.appendix.clone(),
    };
    toml::to_string(&doc).expect("skill documents always serialize")
}

/// Parses a skill document and checks its header against the content.
pub fn from_document(text: &str) -> Result<Skill, String> {
    let doc: SkillDocument = toml::from_str(text).map_err(|e| e.to_string())?;
    if doc.format != DOCUMENT_FORMAT {
        return Err(format!("unsupported document format {}", doc.format));
    }
    if doc.digest_algorithm != DIGEST_ALGORITHM {
        return Err(format!("unknown digest algorithm {}", doc.digest_algorithm));
    }
    let skill = Skill::from_parts(doc.skill_version, doc.body, doc.appendix, doc.next_rule_id);
    if skill.body_digest != doc.body_digest {
        return Err(format!(
            "body digest mismatch: header {}, content {}",
            doc.body_digest, skill.body_digest
        ));
    }
    Ok(skill)
}

pub struct SkillStore {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl SkillStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, version: u64) -> PathBuf {
        self.dir.join(format!("v{version:04}.skill.toml"))
    }

    /// Stored versions in ascending order.
    pub fn versions(&self) -> Result<Vec<u64>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name
                .strip_prefix('v')
                .and_then(|s| s.strip_suffix(".skill.toml"))
            {
                if let Ok(v) = num.parse::<u64>() {
                    out.push(v);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn latest(&self) -> Result<Option<u64>, StoreError> {
        Ok(self.versions()?.last().copied())
    }

    pub fn save_version(&self, skill: &Skill) -> Result<u64, StoreError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let expected = match self.latest()? {
            None => 0,
            Some(v) => v + 1,
        };
        if skill.version != expected {
            return Err(StoreError::VersionGap {
                expected,
                got: skill.version,
            });
        }
        let report = skill.validate();
        if !report.is_ok() {
            return Err(StoreError::InvalidSkill(report));
        }
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(self.path_for(skill.version))?;
        file.write_all(to_document(skill).as_bytes())?;
        file.sync_all()?;

        let meta = StoreMeta {
            latest_version: skill.version,
            next_rule_id: skill.next_rule_id,
        };
        let tmp = self.dir.join("store.toml.tmp");
        fs::write(&tmp, toml::to_string(&meta).expect("meta serializes"))?;
        fs::rename(tmp, self.dir.join("store.toml"))?;
        Ok(skill.version)
    }

    /// Raw document bytes as written.
    pub fn load_raw(&self, version: u64) -> Result<String, StoreError> {
        let path = self.path_for(version);
        if !path.exists() {
            return Err(StoreError::NotFound(version));
        }
        Ok(fs::read_to_string(path)?)
    }

    pub fn load_version(&self, version: u64) -> Result<Skill, StoreError> {
        let raw = self.load_raw(version)?;
        let skill = from_document(&raw).map_err(|reason| StoreError::CorruptRecord { version, reason })?;
        if skill.version != version {
            return Err(StoreError::CorruptRecord {
                version,
                reason: format!("document declares version {}", skill.version),
            });
        }
        Ok(skill)
    }

    pub fn load_latest(&self) -> Result<Option<Skill>, StoreError> {
        match self.latest()? {
            Some(v) => self.load_version(v).map(Some),
            None => Ok(None),
        }
    }
}
