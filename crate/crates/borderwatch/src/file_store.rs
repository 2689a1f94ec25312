//! Append-only JSON-lines event log on disk.
//!
//! Each record is one UTF-8 JSON object followed by LF; see
//! [`LogRecord`] for the two record shapes. Appends go through a single
//! writer and, under [`FlushPolicy::EveryAppend`], are synced before the
//! call returns. On open the whole file is replayed into an [`EventIndex`];
//! an incomplete final line is cut off and reported as a [`TornRecord`].

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use borderwatch_core::store::{
    AppendOutcome, CommandAudit, EventIndex, EventLog, IndexError, IntrusionEvent, LogRecord, NewEvent, Query,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushPolicy {
    /// Flush and fsync after every record.
    #[default]
    EveryAppend,
    /// Buffer records; they reach disk on [`FileLog::flush`] or drop.
    Batched,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("event log line {line} is corrupt: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("event log line {line}: {source}")]
    Inconsistent { line: usize, source: IndexError },
}

/// A partial final record dropped during recovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornRecord {
    /// Byte offset where the torn record started; the file now ends here.
    pub offset: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub events: usize,
    pub audits: usize,
    pub torn: Option<TornRecord>,
}

pub struct FileLog {
    path: PathBuf,
    writer: BufWriter<File>,
    len: u64,
    policy: FlushPolicy,
    index: EventIndex,
}

impl std::fmt::Debug for FileLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FileLog")
            .field("path", &self.path)
            .field("len", &self.len)
            .field("events", &self.index.len())
            .finish()
    }
}

impl FileLog {
    /// Opens (creating if needed) and recovers the log at `path`.
    pub fn open(path: impl AsRef<Path>, policy: FlushPolicy) -> Result<(Self, RecoveryReport), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let (index, report, good_len) = replay(&data)?;
        if good_len < data.len() as u64 {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let log = FileLog { path, writer: BufWriter::new(file), len: good_len, policy, index };
        Ok((log, report))
    }

    /// Opens the log with the default flush policy.
    pub fn recover(path: impl AsRef<Path>) -> Result<(Self, RecoveryReport), StoreError> {
        Self::open(path, FlushPolicy::default())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index(&self) -> &EventIndex {
        &self.index
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }

    fn write_record(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        let line = record.encode();
        let result = self.writer.write_all(&line).and_then(|()| match self.policy {
            FlushPolicy::EveryAppend => {
                self.writer.flush()?;
                self.writer.get_ref().sync_data()
            }
            FlushPolicy::Batched => Ok(()),
        });
        if let Err(e) = result {
            // Cut off whatever part of the line made it out so the next
            // append does not land after a fragment.
            let _ = self.writer.get_ref().set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        Ok(())
    }
}

impl Drop for FileLog {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

fn replay(data: &[u8]) -> Result<(EventIndex, RecoveryReport, u64), StoreError> {
    let mut index = EventIndex::new();
    let mut report = RecoveryReport::default();
    let mut offset = 0usize;
    let mut line_no = 0usize;

    while offset < data.len() {
        line_no += 1;
        let rest = &data[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            report.torn = Some(TornRecord { offset: offset as u64, bytes: rest.to_vec() });
            break;
        };
        let line = &rest[..nl];
        let is_last = offset + nl + 1 == data.len();
        if line.iter().all(u8::is_ascii_whitespace) {
            offset += nl + 1;
            continue;
        }
        let record = match LogRecord::decode(line) {
            Ok(r) => r,
            Err(_) if is_last => {
                report.torn = Some(TornRecord { offset: offset as u64, bytes: rest.to_vec() });
                break;
            }
            Err(e) => return Err(StoreError::Corrupt { line: line_no, reason: e.to_string() }),
        };
        let applied = match record {
            LogRecord::Event(ev) => {
                report.events += 1;
                index.insert(ev)
            }
            LogRecord::Audit(a) => {
                report.audits += 1;
                index.insert_audit(a)
            }
        };
        applied.map_err(|source| StoreError::Inconsistent { line: line_no, source })?;
        offset += nl + 1;
    }
    let good_len = report.torn.as_ref().map_or(data.len() as u64, |t| t.offset);
    Ok((index, report, good_len))
}

impl EventLog for FileLog {
    type Error = StoreError;

    fn append_event(&mut self, candidate: NewEvent) -> Result<AppendOutcome, StoreError> {
        let Some(event) = self.index.prepare(candidate) else {
            return Ok(AppendOutcome::Duplicate);
        };
        let record = LogRecord::Event(event);
        self.write_record(&record)?;
        let LogRecord::Event(event) = record else { unreachable!() };
        let id = event.event_id;
        self.index
            .insert(event)
            .map_err(|source| StoreError::Inconsistent { line: 0, source })?;
        Ok(AppendOutcome::Appended(id))
    }

    fn append_audit(&mut self, audit: CommandAudit) -> Result<(), StoreError> {
        let record = LogRecord::Audit(audit);
        self.write_record(&record)?;
        let LogRecord::Audit(audit) = record else { unreachable!() };
        self.index
            .insert_audit(audit)
            .map_err(|source| StoreError::Inconsistent { line: 0, source })
    }

    fn query(&self, q: &Query) -> Vec<IntrusionEvent> {
        self.index.query(q)
    }

    fn next_cmd_id(&self) -> u64 {
        self.index.next_cmd_id()
    }
}
