//! Append-only JSON Lines store for sessions, snapshots, trials and runs.
//!
//! Nothing is ever rewritten: ratings and notes arrive as annotation events
//! and the current view of a trial folds them in. The in-memory state is
//! rebuilt by replaying the log on startup.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use caf_core::templating::{PromptTemplate, RenderedConversation};
use caf_core::{CanonicalAnswer, MatchTrace, OptionSet, RunReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown trial {0}")]
    UnknownTrial(String),
    #[error("rating {0} outside 1..=5")]
    BadRating(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub id: String,
    pub author: String,
    pub created_at: String,
}

/// A session-scoped copy of the template and option set a trial used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub version: u32,
    pub template: PromptTemplate,
    pub option_set: OptionSet,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: String,
    pub session_id: String,
    pub timestamp: String,
    pub clause_id: String,
    pub template_id: String,
    pub option_set_id: String,
    /// Set when the trial ran against edited artifacts.
    pub snapshot_version: Option<u32>,
    pub conversation: RenderedConversation,
    pub raw_response: String,
    pub canonical: CanonicalAnswer,
    pub trace: MatchTrace,
    pub rating: Option<u8>,
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
    /// Started before a restart and never finished.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub id: String,
    pub session_id: String,
    pub dataset_id: String,
    pub clause_ids: Option<Vec<String>>,
    pub started_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    #[serde(flatten)]
    pub info: RunInfo,
    pub status: RunStatus,
    pub finished_at: Option<String>,
    pub error: Option<String>,
    pub report: Option<RunReport>,
    /// Results table for completed runs.
    pub table: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionCreated {
        session: SessionHeader,
    },
    SnapshotCreated {
        snapshot: Snapshot,
    },
    TrialCreated {
        trial: Trial,
    },
    TrialAnnotated {
        trial_id: String,
        rating: Option<u8>,
        notes: Option<String>,
        at: String,
    },
    RunStarted {
        run: RunInfo,
    },
    RunFinished {
        run_id: String,
        status: RunStatus,
        finished_at: String,
        error: Option<String>,
        report: Option<Box<RunReport>>,
        table: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub header: SessionHeader,
    pub trials: Vec<Trial>,
    pub snapshots: Vec<Snapshot>,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    #[serde(flatten)]
    pub header: SessionHeader,
    pub trial_count: usize,
    pub snapshot_count: usize,
}

#[derive(Default)]
struct SessionState {
    trial_ids: Vec<String>,
    snapshots: Vec<Snapshot>,
    run_ids: Vec<String>,
}

pub struct Store {
    path: PathBuf,
    file: File,
    sessions: BTreeMap<String, (SessionHeader, SessionState)>,
    session_order: Vec<String>,
    trials: BTreeMap<String, Trial>,
    runs: BTreeMap<String, RunState>,
}

impl Store {
    /// Opens (creating if needed) the log in `dir` and replays it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let path = dir.join(EVENTS_FILE);
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(io)?;
        let mut store = Store {
            path: path.clone(),
            file,
            sessions: BTreeMap::new(),
            session_order: Vec::new(),
            trials: BTreeMap::new(),
            runs: BTreeMap::new(),
        };

        let mut text = String::new();
        BufReader::new(File::open(&path).map_err(io)?)
            .read_to_string(&mut text)
            .map_err(io)?;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        let mut offset = 0u64;
        for (i, line) in lines.iter().enumerate() {
            if !line.trim().is_empty() {
                match serde_json::from_str::<Event>(line) {
                    Ok(event) => store.apply(event),
                    // A crash mid-append can leave a torn final line; cut it
                    // off so the next append starts clean.
                    Err(e) if Some(i) == last => {
                        warn!(path = %path.display(), line = i + 1, error = %e, "dropping torn final event");
                        store.file.set_len(offset).map_err(io)?;
                        break;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path,
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            offset += line.len() as u64;
            if Some(i) == last && !line.ends_with('\n') {
                store.file.write_all(b"\n").map_err(io)?;
            }
        }
        for run in store.runs.values_mut() {
            if run.status == RunStatus::Running {
                run.status = RunStatus::Interrupted;
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&mut self, event: Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.apply(event);
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::SessionCreated { session } => {
                self.session_order.push(session.id.clone());
                self.sessions
                    .insert(session.id.clone(), (session, SessionState::default()));
            }
            Event::SnapshotCreated { snapshot } => {
                if let Some((_, s)) = self.sessions.get_mut(&snapshot.session_id) {
                    s.snapshots.push(snapshot);
                }
            }
            Event::TrialCreated { trial } => {
                if let Some((_, s)) = self.sessions.get_mut(&trial.session_id) {
                    s.trial_ids.push(trial.id.clone());
                }
                self.trials.insert(trial.id.clone(), trial);
            }
            Event::TrialAnnotated {
                trial_id,
                rating,
                notes,
                ..
            } => {
                if let Some(t) = self.trials.get_mut(&trial_id) {
                    if rating.is_some() {
                        t.rating = rating;
                    }
                    if notes.is_some() {
                        t.notes = notes;
                    }
                }
            }
            Event::RunStarted { run } => {
                if let Some((_, s)) = self.sessions.get_mut(&run.session_id) {
                    s.run_ids.push(run.id.clone());
                }
                self.runs.insert(
                    run.id.clone(),
                    RunState {
                        info: run,
                        status: RunStatus::Running,
                        finished_at: None,
                        error: None,
                        report: None,
                        table: None,
                    },
                );
            }
            Event::RunFinished {
                run_id,
                status,
                finished_at,
                error,
                report,
                table,
            } => {
                if let Some(r) = self.runs.get_mut(&run_id) {
                    r.status = status;
                    r.finished_at = Some(finished_at);
                    r.error = error;
                    r.report = report.map(|b| *b);
                    r.table = table;
                }
            }
        }
    }

    pub fn create_session(&mut self, header: SessionHeader) -> Result<SessionView, StoreError> {
        let id = header.id.clone();
        self.append(Event::SessionCreated { session: header })?;
        self.session(&id)
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        self.session_order
            .iter()
            .filter_map(|id| self.sessions.get(id))
            .map(|(h, s)| SessionSummary {
                header: h.clone(),
                trial_count: s.trial_ids.len(),
                snapshot_count: s.snapshots.len(),
            })
            .collect()
    }

    pub fn session(&self, id: &str) -> Result<SessionView, StoreError> {
        let (header, state) = self
            .sessions
            .get(id)
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        Ok(SessionView {
            header: header.clone(),
            trials: state
                .trial_ids
                .iter()
                .filter_map(|t| self.trials.get(t).cloned())
                .collect(),
            snapshots: state.snapshots.clone(),
            run_ids: state.run_ids.clone(),
        })
    }

    pub fn has_session(&self, id: &str) -> bool {
        self.sessions.contains_key(id)
    }

    /// Returns the version to record for a trial using `template` and
    /// `option_set`, appending a new snapshot unless the latest one already
    /// holds exactly these artifacts.
    pub fn snapshot_for(
        &mut self,
        session_id: &str,
        template: &PromptTemplate,
        option_set: &OptionSet,
        now: String,
    ) -> Result<u32, StoreError> {
        let (_, state) = self
            .sessions
            .get(session_id)
            .ok_or_else(|| StoreError::UnknownSession(session_id.to_string()))?;
        if let Some(latest) = state.snapshots.last() {
            if &latest.template == template && &latest.option_set == option_set {
                return Ok(latest.version);
            }
        }
        let version = state.snapshots.last().map_or(1, |s| s.version + 1);
        self.append(Event::SnapshotCreated {
            snapshot: Snapshot {
                session_id: session_id.to_string(),
                version,
                template: template.clone(),
                option_set: option_set.clone(),
                created_at: now,
            },
        })?;
        Ok(version)
    }

    pub fn add_trial(&mut self, trial: Trial) -> Result<Trial, StoreError> {
        if !self.has_session(&trial.session_id) {
            return Err(StoreError::UnknownSession(trial.session_id));
        }
        if let Some(r) = trial.rating {
            check_rating(r)?;
        }
        let id = trial.id.clone();
        self.append(Event::TrialCreated { trial })?;
        Ok(self.trials[&id].clone())
    }

    pub fn trial(&self, id: &str) -> Option<&Trial> {
        self.trials.get(id)
    }

    pub fn annotate(
        &mut self,
        trial_id: &str,
        rating: Option<u8>,
        notes: Option<String>,
        at: String,
    ) -> Result<Trial, StoreError> {
        if !self.trials.contains_key(trial_id) {
            return Err(StoreError::UnknownTrial(trial_id.to_string()));
        }
        if let Some(r) = rating {
            check_rating(r)?;
        }
        self.append(Event::TrialAnnotated {
            trial_id: trial_id.to_string(),
            rating,
            notes,
            at,
        })?;
        Ok(self.trials[trial_id].clone())
    }

    /// The session's run that has not finished yet, if any.
    pub fn active_run(&self, session_id: &str) -> Option<&RunState> {
        let (_, state) = self.sessions.get(session_id)?;
        state
            .run_ids
            .iter()
            .filter_map(|id| self.runs.get(id))
            .find(|r| r.status == RunStatus::Running)
    }

    pub fn start_run(&mut self, info: RunInfo) -> Result<(), StoreError> {
        if !self.has_session(&info.session_id) {
            return Err(StoreError::UnknownSession(info.session_id));
        }
        self.append(Event::RunStarted { run: info })
    }

    pub fn finish_run(
        &mut self,
        run_id: &str,
        outcome: Result<(RunReport, String), String>,
        finished_at: String,
    ) -> Result<(), StoreError> {
        let event = match outcome {
            Ok((report, table)) => Event::RunFinished {
                run_id: run_id.to_string(),
                status: RunStatus::Completed,
                finished_at,
                error: None,
                report: Some(Box::new(report)),
                table: Some(table),
            },
            Err(error) => Event::RunFinished {
                run_id: run_id.to_string(),
                status: RunStatus::Failed,
                finished_at,
                error: Some(error),
                report: None,
                table: None,
            },
        };
        self.append(event)
    }

    pub fn run(&self, id: &str) -> Option<&RunState> {
        self.runs.get(id)
    }
}

fn check_rating(r: u8) -> Result<(), StoreError> {
    if (1..=5).contains(&r) {
        Ok(())
    } else {
        Err(StoreError::BadRating(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use caf_core::templating::{AnswerOption, NumberingStyle, SelectionMode};

    fn header(id: &str) -> SessionHeader {
        SessionHeader {
            id: id.into(),
            author: "ana".into(),
            created_at: "t0".into(),
        }
    }

    fn trial(id: &str, session: &str) -> Trial {
        Trial {
            id: id.into(),
            session_id: session.into(),
            timestamp: "t1".into(),
            clause_id: "c1".into(),
            template_id: "P1".into(),
            option_set_id: "S1".into(),
            snapshot_version: None,
            conversation: RenderedConversation {
                messages: vec![caf_core::ChatMessage::user("q")],
                metadata: Default::default(),
            },
            raw_response: "x".into(),
            canonical: CanonicalAnswer::Escape,
            trace: MatchTrace {
                strategy: caf_core::MatchStrategy::Escape,
                needed_cleanup: false,
                segments_matched: 0,
            },
            rating: None,
            notes: None,
        }
    }

    #[test]
    fn annotations_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            s.create_session(header("s1")).unwrap();
            s.add_trial(trial("t1", "s1")).unwrap();
            s.annotate("t1", Some(4), None, "t2".into()).unwrap();
            s.annotate("t1", None, Some("good".into()), "t3".into())
                .unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        let view = s.session("s1").unwrap();
        assert_eq!(view.trials.len(), 1);
        assert_eq!(view.trials[0].rating, Some(4));
        assert_eq!(view.trials[0].notes.as_deref(), Some("good"));
    }

    #[test]
    fn bad_ratings_and_unknown_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.create_session(header("s1")).unwrap();
        s.add_trial(trial("t1", "s1")).unwrap();
        assert!(matches!(
            s.annotate("t1", Some(6), None, "t".into()),
            Err(StoreError::BadRating(6))
        ));
        assert!(matches!(
            s.annotate("t1", Some(0), None, "t".into()),
            Err(StoreError::BadRating(0))
        ));
        assert!(matches!(
            s.annotate("nope", Some(3), None, "t".into()),
            Err(StoreError::UnknownTrial(_))
        ));
        assert!(matches!(
            s.add_trial(trial("t2", "nope")),
            Err(StoreError::UnknownSession(_))
        ));
    }

    #[test]
    fn snapshots_version_only_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.create_session(header("s1")).unwrap();
        let template = PromptTemplate::new(
            "P1",
            "{{Options}}\n{{Clause}}",
            SelectionMode::Single,
            vec!["unclear".into()],
            NumberingStyle::Dot,
        )
        .unwrap();
        let set = |text: &str| {
            OptionSet::new(
                "S1",
                "q",
                vec![AnswerOption::new("a", text), AnswerOption::new("b", "B")],
            )
            .unwrap()
        };
        assert_eq!(
            s.snapshot_for("s1", &template, &set("A"), "t".into())
                .unwrap(),
            1
        );
        assert_eq!(
            s.snapshot_for("s1", &template, &set("A"), "t".into())
                .unwrap(),
            1
        );
        assert_eq!(
            s.snapshot_for("s1", &template, &set("A2"), "t".into())
                .unwrap(),
            2
        );
        assert_eq!(s.session("s1").unwrap().snapshots.len(), 2);
    }

    #[test]
    fn unfinished_runs_become_interrupted() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            s.create_session(header("s1")).unwrap();
            s.start_run(RunInfo {
                id: "r1".into(),
                session_id: "s1".into(),
                dataset_id: "d".into(),
                clause_ids: None,
                started_at: "t".into(),
            })
            .unwrap();
            assert!(s.active_run("s1").is_some());
        }
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.run("r1").unwrap().status, RunStatus::Interrupted);
        assert!(s.active_run("s1").is_none());
    }

    #[test]
    fn torn_final_line_is_ignored_but_earlier_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            s.create_session(header("s1")).unwrap();
        }
        let path = dir.path().join(EVENTS_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"event\":\"session_cr");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(Store::open(dir.path()).unwrap().sessions().len(), 1);

        text.push_str("\n{\"event\":\"session_created\",\"session\":{\"id\":\"s2\",\"author\":\"b\",\"created_at\":\"t\"}}\n");
        std::fs::write(&path, &text).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(StoreError::Corrupt { line: 2, .. })
        ));
    }
}
