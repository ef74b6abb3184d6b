//! Canonical JSON-lines record format.
//!
//! One object per line with keys `question_id`, `asker_id`, `answerer_id`,
//! `tags`, `score`, `is_best` and optionally `timestamp`. Unknown keys are
//! ignored on read, except `split`, which [`read_dataset`] uses to restore
//! a train/test assignment.

use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{Corpus, Dataset, InteractionRecord, Split};

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::MissingField(name.to_string()))
}

fn string_field(obj: &Map<String, Value>, name: &str, line: usize) -> Result<String> {
    match field(obj, name)? {
        Value::String(s) => Ok(s.clone()),
        // Numeric ids are common in exported dumps.
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::parse(line, format!("`{name}` must be a string, got {other}"))),
    }
}

struct Row {
    question: String,
    asker: String,
    answerer: String,
    tags: Vec<String>,
    score: i64,
    is_best: bool,
    timestamp: Option<i64>,
    split: Option<Split>,
}

fn parse_row(text: &str, line: usize) -> Result<Row> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::parse(line, e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| Error::parse(line, "expected a JSON object"))?;

    let tags = match field(obj, "tags")? {
        Value::Array(items) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::parse(line, "tags must be strings"))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(Error::parse(line, "`tags` must be an array")),
    };
    if tags.is_empty() {
        return Err(Error::parse(line, "`tags` is empty"));
    }
    let score = field(obj, "score")?
        .as_i64()
        .ok_or_else(|| Error::parse(line, "`score` must be an integer"))?;
    let is_best = field(obj, "is_best")?
        .as_bool()
        .ok_or_else(|| Error::parse(line, "`is_best` must be a boolean"))?;
    let timestamp = match obj.get("timestamp") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_i64().ok_or_else(|| Error::parse(line, "`timestamp` must be an integer"))?),
    };
    let split = match obj.get("split") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(Split::parse(s).ok_or_else(|| Error::parse(line, format!("unknown split `{s}`")))?),
        Some(_) => return Err(Error::parse(line, "`split` must be a string")),
    };
    Ok(Row {
        question: string_field(obj, "question_id", line)?,
        asker: string_field(obj, "asker_id", line)?,
        answerer: string_field(obj, "answerer_id", line)?,
        tags,
        score,
        is_best,
        timestamp,
        split,
    })
}

fn parse_rows<R: BufRead>(input: R) -> Result<(Corpus, Vec<Option<Split>>)> {
    let mut corpus = Corpus::default();
    let mut splits = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line, line_no)?;
        let tags: Vec<&str> = row.tags.iter().map(String::as_str).collect();
        let rec = corpus.push_named(&row.question, &row.asker, &row.answerer, &tags, row.score);
        rec.is_best = row.is_best;
        rec.timestamp = row.timestamp;
        splits.push(row.split);
    }
    corpus.validate()?;
    Ok((corpus, splits))
}

/// Parses canonical JSON lines into records, interning ids in first-seen order.
pub fn parse_canonical<R: BufRead>(input: R) -> Result<Corpus> {
    parse_rows(input).map(|(corpus, _)| corpus)
}

fn record_json(corpus: &Corpus, r: &InteractionRecord) -> Map<String, Value> {
    let ids = &corpus.ids;
    let mut obj = Map::new();
    obj.insert("question_id".into(), ids.name(r.question).into());
    obj.insert("asker_id".into(), ids.name(r.asker).into());
    obj.insert("answerer_id".into(), ids.name(r.answerer).into());
    obj.insert("tags".into(), Value::Array(r.tags.iter().map(|&t| ids.name(t).into()).collect()));
    obj.insert("score".into(), r.vote_score.into());
    obj.insert("is_best".into(), r.is_best.into());
    if let Some(ts) = r.timestamp {
        obj.insert("timestamp".into(), ts.into());
    }
    obj
}

/// Writes records as canonical JSON lines.
pub fn write_canonical<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for r in &corpus.records {
        serde_json::to_writer(&mut out, &record_json(corpus, r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes records with an extra `split` key per line.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let corpus = &dataset.corpus;
    for r in &corpus.records {
        let mut obj = record_json(corpus, r);
        obj.insert("split".into(), dataset.split_of(r.question).as_str().into());
        serde_json::to_writer(&mut out, &obj)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Lines without a `split` key
/// count as training data.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let (corpus, row_splits) = parse_rows(input)?;
    let mut splits = vec![None; corpus.counts().questions];
    for (r, s) in corpus.records.iter().zip(row_splits) {
        let s = s.unwrap_or(Split::Train);
        let slot = &mut splits[r.question.index()];
        match slot {
            Some(prev) if *prev != s => {
                return Err(Error::format(format!(
                    "question {} carries conflicting splits",
                    corpus.ids.name(r.question)
                )))
            }
            _ => *slot = Some(s),
        }
    }
    let splits = splits.into_iter().map(|s| s.unwrap_or(Split::Train)).collect();
    Dataset::with_splits(corpus, splits)
}
