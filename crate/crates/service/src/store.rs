//! Append-only newline-delimited JSON event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use her2kit_core::{CaseId, Her2Score, Prediction};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvent {
    pub rater: String,
    pub case_id: CaseId,
    pub score: Her2Score,
    pub pcms: Option<f64>,
    pub confidence: f64,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogLine {
    Score(ScoreEvent),
    Joined { rater: String, joined_at: u64 },
    Closed { session_closed_at: u64 },
}

impl LogLine {
    fn timestamp(&self) -> u64 {
        match self {
            LogLine::Score(e) => e.timestamp,
            LogLine::Joined { joined_at, .. } => *joined_at,
            LogLine::Closed { session_closed_at } => *session_closed_at,
        }
    }
}

/// Replayed view of a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreState {
    pub lines: Vec<LogLine>,
    pub raters: BTreeSet<String>,
    pub closed: bool,
}

impl StoreState {
    pub fn apply(&mut self, line: LogLine) {
        match &line {
            LogLine::Score(e) => {
                self.raters.insert(e.rater.clone());
            }
            LogLine::Joined { rater, .. } => {
                self.raters.insert(rater.clone());
            }
            LogLine::Closed { .. } => self.closed = true,
        }
        self.lines.push(line);
    }

    pub fn events(&self) -> impl Iterator<Item = &ScoreEvent> {
        self.lines.iter().filter_map(|l| match l {
            LogLine::Score(e) => Some(e),
            _ => None,
        })
    }

    pub fn last_timestamp(&self) -> u64 {
        self.lines.iter().map(LogLine::timestamp).max().unwrap_or(0)
    }

    /// Latest event per case for one rater; later lines win on equal timestamps.
    pub fn latest_predictions(&self, rater: &str) -> Vec<Prediction> {
        latest_predictions(self.events(), rater)
    }
}

pub fn latest_predictions<'a>(events: impl IntoIterator<Item = &'a ScoreEvent>, rater: &str) -> Vec<Prediction> {
    let mut latest: BTreeMap<&CaseId, &ScoreEvent> = BTreeMap::new();
    for e in events.into_iter().filter(|e| e.rater == rater) {
        match latest.get(&e.case_id) {
            Some(prev) if prev.timestamp > e.timestamp => {}
            _ => {
                latest.insert(&e.case_id, e);
            }
        }
    }
    latest
        .values()
        .map(|e| Prediction {
            case_id: e.case_id.clone(),
            score: e.score,
            confidence: e.confidence,
            pcms: e.pcms,
        })
        .collect()
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn read_log(path: &Path) -> std::io::Result<StoreState> {
    let mut state = StoreState::default();
    if !path.exists() {
        return Ok(state);
    }
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        state.apply(parsed);
    }
    Ok(state)
}

/// Single appender: each record is written with one `write_all` under the lock and synced.
pub struct EventStore {
    path: PathBuf,
    inner: Mutex<(File, StoreState)>,
}

impl EventStore {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let state = read_log(path)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new((file, state)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a line built from a timestamp no earlier than any already stored.
    pub fn append_with(&self, build: impl FnOnce(u64) -> LogLine) -> std::io::Result<LogLine> {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let (file, state) = &mut *guard;
        let line = build(now_ms().max(state.last_timestamp()));
        let mut text = serde_json::to_string(&line).map_err(std::io::Error::other)?;
        text.push('\n');
        file.write_all(text.as_bytes())?;
        file.sync_data()?;
        state.apply(line.clone());
        Ok(line)
    }

    pub fn snapshot(&self) -> StoreState {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).1.clone()
    }

    pub fn with_state<T>(&self, f: impl FnOnce(&StoreState) -> T) -> T {
        f(&self.inner.lock().unwrap_or_else(|p| p.into_inner()).1)
    }
}
