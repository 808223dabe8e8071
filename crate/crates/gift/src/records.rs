//! Line-delimited record files.
//!
//! Every dataset this pipeline reads or writes (seed tasks, chain logs,
//! candidate pools, training records) is one JSON object per line, UTF-8,
//! `\n`-separated. Field names and required/optional status are documented
//! in `docs/schema.md` at the repository root. Records are validated
//! against their invariants before any byte is written and after every
//! parse, so a file produced by one run is always loadable by the next.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::model::{Candidate, ChainRecord, ModelError, SeedTask, SftRecord};

/// A type that can live in a line-delimited record file.
pub trait Record: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), ModelError>;
}

impl Record for SeedTask {
    fn validate(&self) -> Result<(), ModelError> {
        SeedTask::validate(self)
    }
}

impl Record for Candidate {
    fn validate(&self) -> Result<(), ModelError> {
        Candidate::validate(self)
    }
}

impl Record for ChainRecord {
    fn validate(&self) -> Result<(), ModelError> {
        ChainRecord::validate(self)
    }
}

impl Record for SftRecord {
    fn validate(&self) -> Result<(), ModelError> {
        SftRecord::validate(self)
    }
}

/// Parse one record line. Pure; never touches the filesystem.
pub fn parse_record_line<T: Record>(line: &str, line_number: usize) -> Result<T, ModelError> {
    let record: T = serde_json::from_str(line).map_err(|e| ModelError::MalformedLine {
        line: line_number,
        message: e.to_string(),
    })?;
    record.validate().map_err(|e| ModelError::MalformedLine {
        line: line_number,
        message: e.to_string(),
    })?;
    Ok(record)
}

/// Parse a whole seed dataset from in-memory text. Pure; used by
/// [`load_seed_dataset`] and directly by the fuzz targets.
pub fn parse_seed_dataset(text: &str) -> Result<Vec<SeedTask>, ModelError> {
    let mut tasks: Vec<SeedTask> = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_number = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let task: SeedTask = parse_record_line(line, line_number)?;
        if let Some(&first_line) = seen.get(&task.id) {
            return Err(ModelError::DuplicateId {
                id: task.id,
                first_line,
                second_line: line_number,
            });
        }
        seen.insert(task.id.clone(), line_number);
        tasks.push(task);
    }
    Ok(tasks)
}

/// Load a seed dataset, preserving file order and rejecting duplicate ids.
pub fn load_seed_dataset(path: &Path) -> Result<Vec<SeedTask>, ModelError> {
    let text = std::fs::read_to_string(path)?;
    parse_seed_dataset(&text)
}

/// Read every record from a line-delimited file.
pub fn read_records<T: Record>(path: &Path) -> Result<Vec<T>, ModelError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record_line(&line, idx + 1)?);
    }
    Ok(records)
}

/// Write records one per line, returning the count written. Every record is
/// validated up front; an invalid record rejects the whole batch before any
/// write happens.
pub fn write_records<T: Record>(path: &Path, records: &[T]) -> Result<usize, ModelError> {
    for record in records {
        record.validate()?;
    }
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| ModelError::MalformedLine {
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Comparison, Origin, PairingMode, TestCase};

    fn task(id: &str) -> SeedTask {
        SeedTask {
            id: id.into(),
            description: "Write a python function to add two numbers.".into(),
            entry_point: "add".into(),
            signature: "def add(a, b):".into(),
            tests: vec![TestCase {
                call_expression: "add(1, 2)".into(),
                expected: "3".into(),
                comparison: Comparison::Equality,
            }],
            examples_for_prompt: None,
        }
    }

    #[test]
    fn seed_dataset_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seeds.jsonl");
        let tasks = vec![task("b"), task("a")];
        write_records(&path, &tasks).unwrap();
        let loaded = load_seed_dataset(&path).unwrap();
        assert_eq!(loaded, tasks);
    }

    #[test]
    fn empty_tests_rejected_with_line_number() {
        let line_ok = serde_json::to_string(&task("a")).unwrap();
        let mut bad = task("b");
        bad.tests.clear();
        let line_bad = serde_json::to_string(&bad).unwrap();
        let text = format!("{line_ok}\n{line_bad}\n");
        let err = parse_seed_dataset(&text).unwrap_err();
        match err {
            ModelError::MalformedLine { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("tests must be nonempty"), "{message}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_ids_cite_both_lines() {
        let line = serde_json::to_string(&task("a")).unwrap();
        let text = format!("{line}\n{line}\n");
        let err = parse_seed_dataset(&text).unwrap_err();
        match err {
            ModelError::DuplicateId {
                id,
                first_line,
                second_line,
            } => {
                assert_eq!(id, "a");
                assert_eq!((first_line, second_line), (1, 2));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn write_empty_list_creates_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let count = write_records::<SftRecord>(&path, &[]).unwrap();
        assert_eq!(count, 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn invalid_record_rejected_before_any_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let good = SftRecord {
            description: "desc".into(),
            code: "code".into(),
            seed_id: "a".into(),
            pairing_mode: PairingMode::SeedOnly,
            candidate_origin: Origin::Gift,
            iteration: 1,
        };
        let bad = SftRecord {
            code: "  ".into(),
            ..good.clone()
        };
        assert!(write_records(&path, &[good, bad]).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn sft_record_count_matches_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        let record = SftRecord {
            description: "desc".into(),
            code: "code".into(),
            seed_id: "a".into(),
            pairing_mode: PairingMode::SeedOnly,
            candidate_origin: Origin::Gift,
            iteration: 1,
        };
        let records = vec![record; 8];
        assert_eq!(write_records(&path, &records).unwrap(), 8);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 8);
    }

    #[test]
    fn malformed_json_names_line() {
        let err = parse_record_line::<SftRecord>("{not json", 7).unwrap_err();
        assert!(err.to_string().starts_with("line 7:"));
    }
}
