//! Append-only JSONL run journal. The first line is a header carrying the
//! config hash; later lines are call events and finished dyads. All writes go
//! through one mutex-guarded writer and are flushed per line.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{CallEvent, CallObserver};

use super::DyadOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalHeader {
    pub run_id: String,
    pub config_hash: String,
    pub created_ms: u64,
    /// Full run configuration, used to explain hash mismatches on resume.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JournalLine {
    Header(JournalHeader),
    Call(CallEvent),
    Dyad(DyadOutcome),
}

pub struct Journal {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
    error: Mutex<Option<String>>,
}

impl Journal {
    /// Creates a fresh journal, replacing any existing file.
    pub fn create(path: impl AsRef<Path>, header: JournalHeader) -> Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let j = Self {
            path: path.to_path_buf(),
            writer: Mutex::new(BufWriter::new(file)),
            error: Mutex::new(None),
        };
        j.append(&JournalLine::Header(header))?;
        Ok(j)
    }

    /// Opens an existing journal for appending. A torn final line from a
    /// crash is cut off first.
    pub fn open_append(path: impl AsRef<Path>) -> Result<(Self, JournalContents)> {
        let path = path.as_ref();
        let contents = read_journal(path)?;
        if contents.torn_tail {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            std::fs::write(path, &text[..keep]).map_err(|e| Error::io(path, e))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                writer: Mutex::new(BufWriter::new(file)),
                error: Mutex::new(None),
            },
            contents,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, line: &JournalLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn record_dyad(&self, outcome: &DyadOutcome) -> Result<()> {
        self.append(&JournalLine::Dyad(outcome.clone()))
    }

    /// First write error raised from inside an observer callback, if any.
    pub fn take_error(&self) -> Option<String> {
        self.error.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

impl CallObserver for Journal {
    fn on_event(&self, event: &CallEvent) {
        if let Err(e) = self.append(&JournalLine::Call(event.clone())) {
            self.error
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get_or_insert_with(|| e.to_string());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JournalContents {
    pub header: JournalHeader,
    pub events: Vec<CallEvent>,
    pub dyads: Vec<DyadOutcome>,
    /// True when the last line was cut off mid-write.
    pub torn_tail: bool,
}

pub fn read_journal(path: impl AsRef<Path>) -> Result<JournalContents> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.split('\n').collect();
    let mut header = None;
    let mut events = Vec::new();
    let mut dyads = Vec::new();
    let mut torn_tail = false;
    let last_nonempty = lines.iter().rposition(|l| !l.trim().is_empty());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JournalLine = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(_) if Some(i) == last_nonempty && !text.ends_with('\n') => {
                torn_tail = true;
                break;
            }
            Err(e) => {
                return Err(Error::JsonAt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    column: e.column(),
                    message: e.to_string(),
                })
            }
        };
        match parsed {
            JournalLine::Header(h) if i == 0 => header = Some(h),
            JournalLine::Header(_) => {
                return Err(Error::invalid(format!(
                    "{}: header on line {}",
                    path.display(),
                    i + 1
                )));
            }
            JournalLine::Call(e) => events.push(e),
            JournalLine::Dyad(d) => dyads.push(d),
        }
    }
    let header = header
        .ok_or_else(|| Error::invalid(format!("{}: journal has no header line", path.display())))?;
    Ok(JournalContents {
        header,
        events,
        dyads,
        torn_tail,
    })
}
