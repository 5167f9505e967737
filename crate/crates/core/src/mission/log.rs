//! Mission log records and their on-disk form: a JSON-lines file plus a
//! sidecar directory of WAV audio windows.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MissionError;
use crate::grid::{CellId, Grid};
use crate::vehicle::{EkfEstimate, VehicleState};
use crate::world::AudioWindow;

pub const LOG_FORMAT: &str = "reefsurvey-mission-log";
pub const LOG_VERSION: u32 = 1;
pub const LOG_FILE: &str = "mission_log.jsonl";
pub const AUDIO_DIR: &str = "audio";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Transit,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub dt: f64,
    pub imaging_period_s: f64,
    pub drift_duration_s: f64,
    pub audio_fs: u32,
    pub grid: Grid,
    pub vocab_size: usize,
    pub waypoints: Vec<[f64; 2]>,
}

/// Reference from a record to its audio window in the sidecar directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub file: String,
    pub start_time: f64,
    pub n_samples: usize,
    pub fs: u32,
    pub saturated: bool,
    /// Ground-truth snap onsets, seconds from `start_time`.
    pub truth_snap_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub mode: Mode,
    pub truth: VehicleState,
    pub estimate: EkfEstimate,
    pub cell: CellId,
    /// Waypoint being approached (TRANSIT) or held (DRIFT).
    pub waypoint: usize,
    /// Drift window index, set on every record of a drift segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortMarker {
    pub t: f64,
    pub waypoint: usize,
    pub reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Record(LogRecord),
    Abort(AbortMarker),
}

/// The canonical mission record. Audio samples live alongside the records in
/// memory; `audio[i]` belongs to the i-th record that carries an [`AudioRef`].
#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
    pub audio: Vec<AudioWindow>,
    pub abort: Option<AbortMarker>,
}

/// A drift window: its opening record and the recorded audio.
#[derive(Debug, Clone, Copy)]
pub struct DriftWindow<'a> {
    pub index: usize,
    pub record: &'a LogRecord,
    pub audio: &'a AudioWindow,
}

impl MissionLog {
    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }

    /// Records paired with their audio windows, in order.
    pub fn audio_records(&self) -> impl Iterator<Item = (&LogRecord, &AudioWindow)> {
        self.records.iter().filter(|r| r.audio.is_some()).zip(&self.audio)
    }

    pub fn drift_windows(&self) -> Vec<DriftWindow<'_>> {
        self.audio_records()
            .filter(|(r, _)| r.mode == Mode::Drift)
            .map(|(record, audio)| DriftWindow { index: record.drift.unwrap_or(0), record, audio })
            .collect()
    }

    pub fn image_records(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| r.words.is_some())
    }

    /// Checks the structural invariants of a log.
    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::Format(m));
        if self.header.format != LOG_FORMAT {
            return bad(format!("unknown log format {:?}", self.header.format));
        }
        if self.header.version != LOG_VERSION {
            return bad(format!("unsupported log version {}", self.header.version));
        }
        for pair in self.records.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return bad(format!("timestamps not increasing at t = {}", pair[1].t));
            }
        }
        let n_refs = self.records.iter().filter(|r| r.audio.is_some()).count();
        if n_refs != self.audio.len() {
            return bad(format!("{n_refs} audio references but {} windows", self.audio.len()));
        }
        for r in &self.records {
            if r.words.is_some() && r.mode != Mode::Transit {
                return bad(format!("word histogram on a drift record at t = {}", r.t));
            }
            if let Some(a) = &r.audio {
                if r.mode == Mode::Drift && a.saturated {
                    return bad(format!("saturated audio on a drift record at t = {}", r.t));
                }
            }
            if let Some(w) = &r.words {
                if w.len() != self.header.vocab_size {
                    return bad(format!("histogram length {} != vocabulary {}", w.len(), self.header.vocab_size));
                }
            }
        }
        Ok(())
    }

    /// Serializes the records as JSON lines.
    pub fn to_jsonl(&self) -> Result<String, MissionError> {
        let mut out = String::new();
        let mut push = |line: &Line| -> Result<(), MissionError> {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
            Ok(())
        };
        push(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            push(&Line::Record(r.clone()))?;
        }
        if let Some(a) = &self.abort {
            push(&Line::Abort(a.clone()))?;
        }
        Ok(out)
    }

    /// Parses records from JSON lines. Audio windows are not loaded.
    pub fn parse_jsonl(text: &str) -> Result<(LogHeader, Vec<LogRecord>, Option<AbortMarker>), MissionError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            Some((_, l)) => match serde_json::from_str::<Line>(l)? {
                Line::Header(h) => h,
                _ => return Err(MissionError::Format("first line is not a log header".into())),
            },
            None => return Err(MissionError::Format("empty mission log".into())),
        };
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(MissionError::Format(format!(
                "unsupported log {:?} version {}",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        let mut abort = None;
        for (n, l) in lines {
            if abort.is_some() {
                return Err(MissionError::Format(format!("line {}: content after abort marker", n + 1)));
            }
            match serde_json::from_str::<Line>(l)? {
                Line::Record(r) => records.push(r),
                Line::Abort(a) => abort = Some(a),
                Line::Header(_) => return Err(MissionError::Format(format!("line {}: repeated header", n + 1))),
            }
        }
        Ok((header, records, abort))
    }

    /// Writes `mission_log.jsonl` and the `audio/` sidecar into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, MissionError> {
        fs::create_dir_all(dir.join(AUDIO_DIR))?;
        for ((_, window), r) in self.audio_records().zip(self.records.iter().filter_map(|r| r.audio.as_ref())) {
            window.write_wav(&dir.join(&r.file))?;
        }
        let path = dir.join(LOG_FILE);
        fs::write(&path, self.to_jsonl()?)?;
        Ok(path)
    }

    /// Reads a log written by [`Self::write`]. `path` may be the log file or
    /// its directory.
    pub fn read(path: &Path) -> Result<Self, MissionError> {
        let file = if path.is_dir() { path.join(LOG_FILE) } else { path.to_path_buf() };
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&file)?;
        let (header, records, abort) = Self::parse_jsonl(&text)?;
        let mut audio = Vec::new();
        for a in records.iter().filter_map(|r| r.audio.as_ref()) {
            let (samples, fs) = AudioWindow::read_wav_samples(&dir.join(&a.file))?;
            if fs != a.fs || samples.len() != a.n_samples {
                return Err(MissionError::Format(format!("{}: does not match its log reference", a.file)));
            }
            audio.push(AudioWindow {
                samples,
                fs,
                start_time: a.start_time,
                truth_snap_times: a.truth_snap_times.clone(),
                saturated: a.saturated,
            });
        }
        let log = Self { header, records, audio, abort };
        log.validate()?;
        Ok(log)
    }

    /// Per-record navigation error table.
    pub fn ekf_error_csv(&self) -> String {
        let mut out = String::from("t,mode,true_x,true_y,true_z,true_heading,est_x,est_y,est_z,est_heading,position_error,std_x,std_y\n");
        for r in &self.records {
            let e = &r.estimate;
            let err = (r.truth.x - e.mean[0]).hypot(r.truth.y - e.mean[1]);
            let mode = match r.mode {
                Mode::Transit => "TRANSIT",
                Mode::Drift => "DRIFT",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                mode,
                r.truth.x,
                r.truth.y,
                r.truth.z,
                r.truth.heading,
                e.mean[0],
                e.mean[1],
                e.mean[2],
                e.mean[3],
                err,
                e.cov[0][0].sqrt(),
                e.cov[1][1].sqrt()
            );
        }
        out
    }
}
