//! Append-only alert journal and deterministic replay.
//!
//! One canonical-JSON alert per line. A journal written in time order
//! replays to the byte-identical sequence, which is what makes offline
//! evaluation reproducible.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::model::Alert;
use crate::time::DayWindow;

use super::IngestError;

/// Single-writer append-only journal. Each append flushes before returning,
/// so an alert is durable before the stream is acknowledged.
pub struct AlertJournal {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl AlertJournal {
    pub fn open_append(path: &Path) -> Result<Self, IngestError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| IngestError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| IngestError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(AlertJournal {
            writer: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, alert: &Alert) -> std::io::Result<()> {
        self.writer.write_all(alert.canonical_json().as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }

    pub fn path_display(&self) -> String {
        self.path.display().to_string()
    }
}

/// Reads a journal back as validated alerts in `observed_at` order.
/// Identical across invocations; any invalid line is a hard error carrying
/// its line number.
pub fn replay_fixture(path: &Path) -> Result<Vec<Alert>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut alerts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let alert: Alert =
            serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        alert.validate().map_err(|e| IngestError::MalformedRecord {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        alerts.push(alert);
    }
    alerts.sort_by_key(|a| a.observed_at);
    Ok(alerts)
}

/// [`replay_fixture`] restricted to one evaluation day window.
pub fn replay_window(path: &Path, window: &DayWindow) -> Result<Vec<Alert>, IngestError> {
    let mut alerts = replay_fixture(path)?;
    alerts.retain(|a| window.contains(a.observed_at));
    Ok(alerts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlertKind, OutcomeSide};
    use crate::time::UtcTimestamp;
    use tempfile::tempdir;

    fn alert(id: &str, at: &str) -> Alert {
        Alert {
            alert_id: id.into(),
            market_title: "Crude oil above $95 in April?".into(),
            outcome_side: OutcomeSide::Yes,
            alert_kind: AlertKind::PriceShock,
            price: 0.41,
            delta: 0.06,
            whale_usd: None,
            whale_profile: None,
            observed_at: UtcTimestamp::parse(at).unwrap(),
        }
    }

    #[test]
    fn replay_is_byte_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let alerts = vec![
            alert("a1", "2026-03-25T03:00:00Z"),
            alert("a2", "2026-03-25T07:30:00Z"),
        ];
        {
            let mut journal = AlertJournal::open_append(&path).unwrap();
            for a in &alerts {
                journal.append(a).unwrap();
            }
        }
        let replayed = replay_fixture(&path).unwrap();
        let rewritten: Vec<String> = replayed.iter().map(|a| a.canonical_json()).collect();
        let original = std::fs::read_to_string(&path).unwrap();
        assert_eq!(original.lines().collect::<Vec<_>>(), rewritten);
        // a second replay is identical
        assert_eq!(replay_fixture(&path).unwrap(), replayed);
    }

    #[test]
    fn replay_sorts_by_observed_at() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let mut journal = AlertJournal::open_append(&path).unwrap();
        journal
            .append(&alert("late", "2026-03-25T22:00:00Z"))
            .unwrap();
        journal
            .append(&alert("early", "2026-03-25T03:00:00Z"))
            .unwrap();
        drop(journal);
        let replayed = replay_fixture(&path).unwrap();
        assert_eq!(replayed[0].alert_id, "early");
    }

    #[test]
    fn one_alert_per_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("day.jsonl");
        let mut journal = AlertJournal::open_append(&path).unwrap();
        for i in 0..147 {
            let at = format!("2026-03-25T{:02}:{:02}:00Z", 2 + (i / 60) % 24, i % 60);
            journal.append(&alert(&format!("a{i}"), &at)).unwrap();
        }
        drop(journal);
        assert_eq!(replay_fixture(&path).unwrap().len(), 147);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(replay_fixture(&path).unwrap().is_empty());
    }

    #[test]
    fn invariant_violation_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = alert("ok", "2026-03-25T03:00:00Z").canonical_json();
        let bad = good.replace("0.41", "1.3");
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        let err = replay_fixture(&path).unwrap_err();
        match err {
            IngestError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn windowed_replay_excludes_out_of_window() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let mut journal = AlertJournal::open_append(&path).unwrap();
        journal
            .append(&alert("in", "2026-03-25T12:00:00Z"))
            .unwrap();
        journal
            .append(&alert("before", "2026-03-25T01:00:00Z"))
            .unwrap();
        journal
            .append(&alert("after", "2026-03-26T02:30:00Z"))
            .unwrap();
        drop(journal);
        let window = DayWindow::parse("2026-03-25").unwrap();
        let replayed = replay_window(&path, &window).unwrap();
        assert_eq!(replayed.len(), 1);
        assert_eq!(replayed[0].alert_id, "in");
    }
}
