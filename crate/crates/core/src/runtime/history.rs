use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::EmpathicResponse;

/// One stimulus → response turn, plus feedback when the user gives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub turn_id: u64,
    pub timestamp: String,
    pub image_digest: String,
    pub raw_outputs: Vec<String>,
    pub response: EmpathicResponse,
    /// The response is the neutral fallback rather than a model answer.
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub user_feedback: Option<i8>,
}

/// A line of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryLine {
    Turn(InteractionRecord),
    Feedback { turn_id: u64, score: i8, timestamp: String },
}

/// In-memory interaction log, mirrored to newline-delimited JSON when a
/// path is configured. Feedback is appended as its own line and folded
/// into the matching turn on load.
#[derive(Debug, Default)]
pub struct History {
    records: Vec<InteractionRecord>,
    file: Option<(PathBuf, File)>,
    blobs: Option<PathBuf>,
}

impl History {
    pub fn in_memory() -> Self {
        History::default()
    }

    pub fn open(path: impl AsRef<Path>, store_blobs: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records: Vec<InteractionRecord> = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: HistoryLine = serde_json::from_str(&line).map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                match parsed {
                    HistoryLine::Turn(r) => records.push(r),
                    HistoryLine::Feedback { turn_id, score, .. } => {
                        if let Some(r) = records.iter_mut().find(|r| r.turn_id == turn_id) {
                            r.user_feedback = Some(score);
                        }
                    }
                }
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let blobs = store_blobs.then(|| {
            path.parent()
                .map(|p| p.join("blobs"))
                .unwrap_or_else(|| PathBuf::from("blobs"))
        });
        Ok(History {
            records,
            file: Some((path, file)),
            blobs,
        })
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_turn_id(&self) -> u64 {
        self.records.iter().map(|r| r.turn_id).max().unwrap_or(0)
    }

    pub fn get(&self, turn_id: u64) -> Option<&InteractionRecord> {
        self.records.iter().find(|r| r.turn_id == turn_id)
    }

    pub fn page(&self, offset: usize, limit: usize) -> &[InteractionRecord] {
        let start = offset.min(self.records.len());
        let end = start.saturating_add(limit).min(self.records.len());
        &self.records[start..end]
    }

    fn write_line(&mut self, line: &HistoryLine) -> Result<()> {
        if let Some((path, file)) = &mut self.file {
            let mut text = serde_json::to_string(line).expect("history line serializes");
            text.push('\n');
            file.write_all(text.as_bytes()).map_err(|e| Error::io(&*path, e))?;
            file.flush().map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    }

    pub fn append(&mut self, record: InteractionRecord, image_bytes: Option<&[u8]>) -> Result<()> {
        if let (Some(dir), Some(bytes)) = (&self.blobs, image_bytes) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let blob = dir.join(&record.image_digest);
            if !blob.exists() {
                std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
            }
        }
        self.write_line(&HistoryLine::Turn(record.clone()))?;
        self.records.push(record);
        Ok(())
    }

    pub fn feedback(&mut self, turn_id: u64, score: i8) -> Result<()> {
        if !(-1..=1).contains(&score) {
            return Err(Error::Parameter(format!("feedback score {score} outside [-1, 1]")));
        }
        if self.get(turn_id).is_none() {
            return Err(Error::UnknownTurn(turn_id));
        }
        self.write_line(&HistoryLine::Feedback {
            turn_id,
            score,
            timestamp: chrono::Utc::now().to_rfc3339(),
        })?;
        if let Some(r) = self.records.iter_mut().find(|r| r.turn_id == turn_id) {
            r.user_feedback = Some(score);
        }
        Ok(())
    }
}
