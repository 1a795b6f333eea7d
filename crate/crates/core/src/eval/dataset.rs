//! Line-delimited JSON datasets.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::EvalItem;
use crate::io::write_atomic;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}, field `{field}`: {message}")]
    Line {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate item id `{id}` on line {line}")]
    DuplicateId { id: String, line: usize },
}

static FIELD_IN_MESSAGE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"field `(\w+)`").expect("valid regex"));

/// Parses JSONL text; blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalItem>, DatasetError> {
    let mut items: Vec<EvalItem> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let item: EvalItem = serde_json::from_str(raw).map_err(|e| {
            let message = e.to_string();
            let field = FIELD_IN_MESSAGE
                .captures(&message)
                .map_or_else(|| "record".to_string(), |c| c[1].to_string());
            DatasetError::Line { line, field, message }
        })?;
        item.validate().map_err(|(field, message)| DatasetError::Line {
            line,
            field: field.to_string(),
            message,
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId { id: item.id, line });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EvalItem>, DatasetError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn dataset_to_jsonl(items: &[EvalItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("items serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, items: &[EvalItem]) -> io::Result<()> {
    write_atomic(path, dataset_to_jsonl(items).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"a","video_ref":"v","total_frames":8,"task":"binary","question":"Is it raining?","reference":"yes","category":"entire"}"#;

    #[test]
    fn parses_and_round_trips() {
        let items = parse_dataset(&format!("{GOOD}\n\n")).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(parse_dataset(&dataset_to_jsonl(&items)).unwrap(), items);
    }

    #[test]
    fn options_on_binary_names_line_and_field() {
        let bad = GOOD.replace(r#""reference""#, r#""options":["x","y"],"reference""#);
        match parse_dataset(&format!("{GOOD}\n{bad}")).unwrap_err() {
            DatasetError::Line { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "options");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let bad = GOOD.replace(r#""question":"Is it raining?","#, "");
        match parse_dataset(&bad).unwrap_err() {
            DatasetError::Line { line: 1, field, .. } => assert_eq!(field, "question"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_dataset(&format!("{GOOD}\n{GOOD}")).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateId { line: 2, .. }));
    }
}
