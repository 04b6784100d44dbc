//! JSONL and CSV chat files.
//!
//! Both formats carry the same fields: `id`, `forum_type`, `parent_id`,
//! `author_id`, `subject_id`, `text`, `timestamp`, `sentiment`, `bloom`.
//! Optional fields are omitted (JSONL) or left empty (CSV) when absent.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{validate_chats, Chat, ForumType, GoldLabels, Record};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guess from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

const COLUMNS: [&str; 9] = [
    "id",
    "forum_type",
    "parent_id",
    "author_id",
    "subject_id",
    "text",
    "timestamp",
    "sentiment",
    "bloom",
];

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Vec<Record>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content, format, &path.display().to_string())
}

/// Parses dataset text; `source_name` is used in error messages.
pub fn parse_dataset(content: &str, format: DataFormat, source_name: &str) -> Result<Vec<Record>> {
    let records = match format {
        DataFormat::Jsonl => parse_jsonl(content, source_name)?,
        DataFormat::Csv => parse_csv(content, source_name)?,
    };
    validate_chats(records.iter().map(|r| &r.chat))?;
    Ok(records)
}

fn parse_jsonl(content: &str, source: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| Error::format(source, line_no, "<record>", e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(Error::format(source, line_no, "<record>", "expected a JSON object"));
        };
        let get = |field: &str| -> Result<Option<String>> {
            match map.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(other) => Err(Error::format(
                    source,
                    line_no,
                    field,
                    format!("expected a string, found {other}"),
                )),
            }
        };
        out.push(build_record(get, source, line_no)?);
    }
    Ok(out)
}

fn parse_csv(content: &str, source: &str) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::format(source, 1, "<header>", e.to_string()))?
        .clone();
    for required in ["id", "forum_type", "text"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::format(source, 1, required, "missing column in header"));
        }
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::format(source, line, "<record>", e.to_string())
        })?;
        let line_no = row.position().map_or(0, |p| p.line() as usize);
        let get = |field: &str| -> Result<Option<String>> {
            Ok(headers
                .iter()
                .position(|h| h == field)
                .and_then(|i| row.get(i))
                .map(str::to_string))
        };
        out.push(build_record(get, source, line_no)?);
    }
    Ok(out)
}

fn build_record(
    get: impl Fn(&str) -> Result<Option<String>>,
    source: &str,
    line: usize,
) -> Result<Record> {
    // Empty strings in optional slots mean "absent" in both formats.
    let opt = |field: &str| -> Result<Option<String>> {
        Ok(get(field)?.filter(|s| !s.is_empty()))
    };
    let required = |field: &str| -> Result<String> {
        opt(field)?.ok_or_else(|| Error::format(source, line, field, "missing required field"))
    };

    let id = required("id")?;
    let forum_type: ForumType = required("forum_type")?
        .parse()
        .map_err(|e: String| Error::format(source, line, "forum_type", e))?;
    let chat = Chat {
        id,
        forum_type,
        parent_id: opt("parent_id")?,
        author_id: opt("author_id")?,
        subject_id: opt("subject_id")?,
        text: get("text")?.unwrap_or_default(),
        timestamp: opt("timestamp")?,
    };
    chat.validate()
        .map_err(|(field, msg)| Error::format(source, line, field, msg))?;

    let gold = match (opt("sentiment")?, opt("bloom")?) {
        (None, None) => None,
        (Some(s), Some(b)) => Some(GoldLabels {
            sentiment: s
                .parse()
                .map_err(|e: String| Error::format(source, line, "sentiment", e))?,
            bloom: b
                .parse()
                .map_err(|e: String| Error::format(source, line, "bloom", e))?,
        }),
        (Some(_), None) => {
            return Err(Error::format(source, line, "bloom", "sentiment given without bloom"))
        }
        (None, Some(_)) => {
            return Err(Error::format(source, line, "sentiment", "bloom given without sentiment"))
        }
    };
    Ok(Record { chat, gold })
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    forum_type: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    author_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subject_id: Option<&'a str>,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sentiment: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bloom: Option<&'static str>,
}

impl<'a> From<&'a Record> for RecordOut<'a> {
    fn from(r: &'a Record) -> Self {
        RecordOut {
            id: &r.chat.id,
            forum_type: r.chat.forum_type.as_str(),
            parent_id: r.chat.parent_id.as_deref(),
            author_id: r.chat.author_id.as_deref(),
            subject_id: r.chat.subject_id.as_deref(),
            text: &r.chat.text,
            timestamp: r.chat.timestamp.as_deref(),
            sentiment: r.gold.map(|g| g.sentiment.name()),
            bloom: r.gold.map(|g| g.bloom.name()),
        }
    }
}

/// Serializes records into the given format.
pub fn write_dataset(records: &[Record], format: DataFormat) -> Result<String> {
    match format {
        DataFormat::Jsonl => {
            let mut out = String::new();
            for r in records {
                out.push_str(&serde_json::to_string(&RecordOut::from(r))?);
                out.push('\n');
            }
            Ok(out)
        }
        DataFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            let to_io = |e: csv::Error| Error::Data(format!("csv write: {e}"));
            writer.write_record(COLUMNS).map_err(to_io)?;
            for r in records {
                let o = RecordOut::from(r);
                writer
                    .write_record([
                        o.id,
                        o.forum_type,
                        o.parent_id.unwrap_or(""),
                        o.author_id.unwrap_or(""),
                        o.subject_id.unwrap_or(""),
                        o.text,
                        o.timestamp.unwrap_or(""),
                        o.sentiment.unwrap_or(""),
                        o.bloom.unwrap_or(""),
                    ])
                    .map_err(to_io)?;
            }
            let bytes = writer
                .into_inner()
                .map_err(|e| Error::Data(format!("csv write: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output of UTF-8 input is UTF-8"))
        }
    }
}

pub fn save_dataset(path: &Path, format: DataFormat, records: &[Record]) -> Result<()> {
    let text = write_dataset(records, format)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BloomLabel, SentimentLabel};

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_dataset("", DataFormat::Jsonl, "t").unwrap().is_empty());
        assert!(parse_dataset("\n\n", DataFormat::Jsonl, "t").unwrap().is_empty());
    }

    #[test]
    fn labeled_jsonl_line() {
        let line = r#"{"id":"c1","forum_type":"main","text":"Terima kasih tutornya","sentiment":"positive","bloom":"applying"}"#;
        let recs = parse_dataset(line, DataFormat::Jsonl, "t").unwrap();
        assert_eq!(recs.len(), 1);
        let lc = recs[0].labeled().unwrap();
        assert_eq!(lc.chat.id, "c1");
        assert_eq!(lc.chat.text, "Terima kasih tutornya");
        assert_eq!(lc.sentiment, SentimentLabel::Positive);
        assert_eq!(lc.bloom, BloomLabel::Applying);
    }

    #[test]
    fn reply_without_parent_names_line() {
        let text = "{\"id\":\"m\",\"forum_type\":\"main\",\"text\":\"a\"}\n{\"id\":\"r\",\"forum_type\":\"reply\",\"text\":\"b\"}\n";
        match parse_dataset(text, DataFormat::Jsonl, "t").unwrap_err() {
            Error::Format { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "parent_id");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_fields_are_reported() {
        let bad_label = r#"{"id":"c","forum_type":"main","text":"a","sentiment":"happy","bloom":"applying"}"#;
        assert!(matches!(
            parse_dataset(bad_label, DataFormat::Jsonl, "t"),
            Err(Error::Format { ref field, .. }) if field == "sentiment"
        ));
        let bad_type = r#"{"id":7,"forum_type":"main","text":"a"}"#;
        assert!(matches!(
            parse_dataset(bad_type, DataFormat::Jsonl, "t"),
            Err(Error::Format { ref field, line: 1, .. }) if field == "id"
        ));
        let half = r#"{"id":"c","forum_type":"main","text":"a","sentiment":"neutral"}"#;
        assert!(parse_dataset(half, DataFormat::Jsonl, "t").is_err());
        assert!(parse_dataset("not json", DataFormat::Jsonl, "t").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"m\",\"forum_type\":\"main\",\"text\":\"a\"}\n{\"id\":\"m\",\"forum_type\":\"main\",\"text\":\"b\"}\n";
        assert!(matches!(parse_dataset(text, DataFormat::Jsonl, "t"), Err(Error::Data(_))));
    }

    #[test]
    fn csv_reads_header_and_labels() {
        let text = "id,forum_type,parent_id,text,sentiment,bloom\nm1,main,,\"Baik, dicoba\",neutral,applying\nr1,reply,m1,ok,,\n";
        let recs = parse_dataset(text, DataFormat::Csv, "t").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].chat.text, "Baik, dicoba");
        assert!(recs[0].gold.is_some());
        assert_eq!(recs[1].chat.parent_id.as_deref(), Some("m1"));
        assert!(recs[1].gold.is_none());

        let bad = "id,forum_type,text\nr1,reply,x\n";
        assert!(matches!(
            parse_dataset(bad, DataFormat::Csv, "t"),
            Err(Error::Format { line: 2, .. })
        ));
    }
}
