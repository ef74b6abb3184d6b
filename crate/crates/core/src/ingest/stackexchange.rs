//! Stack Exchange `Posts.xml` adapter.
//!
//! Streams `<row .../>` elements in a single pass. Questions are indexed by
//! post id as they arrive; each answer whose parent question was already
//! seen becomes one [`InteractionRecord`](crate::model::InteractionRecord).

use std::collections::HashMap;
use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostType {
    Question,
    Answer,
}

/// The attributes of one post row this adapter cares about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub post_id: String,
    pub post_type: PostType,
    pub parent_id: Option<String>,
    pub owner_id: Option<String>,
    pub score: i64,
    pub tags_raw: Option<String>,
    pub accepted_answer_id: Option<String>,
    pub creation_date: Option<String>,
}

/// Rows that did not become records, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SeStats {
    pub questions: usize,
    pub answers: usize,
    pub records: usize,
    pub skipped_missing_owner: usize,
    pub orphan_answers: usize,
    pub untagged_questions: usize,
    pub other_post_types: usize,
}

/// Splits `<ios><mac>` (classic dumps) or `|ios|mac|` (newer dumps).
pub fn split_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    let parts: Vec<&str> = if raw.starts_with('<') {
        raw.split(['<', '>']).collect()
    } else {
        raw.split('|').collect()
    };
    parts
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_row(e: &BytesStart<'_>, line: usize) -> Result<Option<RawPost>> {
    let mut attrs: HashMap<String, String> = HashMap::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| Error::parse(line, err.to_string()))?;
        let key = attr.key.as_ref().to_string();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| Error::parse(line, err.to_string()))?;
        attrs.insert(key, value.into_owned());
    }
    let id = attrs.remove("Id").ok_or_else(|| Error::parse(line, "row without Id"))?;
    let post_type = match attrs.get("PostTypeId").map(String::as_str) {
        Some("1") => PostType::Question,
        Some("2") => PostType::Answer,
        Some(_) => return Ok(None),
        None => return Err(Error::parse(line, format!("post {id} has no PostTypeId"))),
    };
    let score = match attrs.get("Score") {
        Some(s) => s
            .parse::<i64>()
            .map_err(|_| Error::parse(line, format!("post {id} has non-integer Score `{s}`")))?,
        None => 0,
    };
    Ok(Some(RawPost {
        post_id: id,
        post_type,
        parent_id: attrs.remove("ParentId"),
        owner_id: attrs.remove("OwnerUserId"),
        score,
        tags_raw: attrs.remove("Tags"),
        accepted_answer_id: attrs.remove("AcceptedAnswerId"),
        creation_date: attrs.remove("CreationDate"),
    }))
}

struct QuestionInfo {
    owner: Option<String>,
    tags: Vec<String>,
    accepted: Option<String>,
}

/// Parses a `Posts.xml` stream into canonical records.
///
/// Answers are scored by their own `Score`; `is_best` marks the question's
/// accepted answer. Rows without an owner and answers whose question was
/// not seen earlier in the stream are counted and skipped.
pub fn parse_stackexchange<R: BufRead>(input: R) -> Result<(Corpus, SeStats)> {
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut questions: HashMap<String, QuestionInfo> = HashMap::new();
    let mut corpus = Corpus::default();
    let mut stats = SeStats::default();
    let mut row_no = 0usize;

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| Error::parse(row_no + 1, format!("{e} at byte {}", reader.error_position())))?;
        match event {
            Event::Eof => break,
            Event::Start(ref e) | Event::Empty(ref e) if e.name().as_ref() == "row" => {
                row_no += 1;
                let Some(post) = parse_row(e, row_no)? else {
                    stats.other_post_types += 1;
                    buf.clear();
                    continue;
                };
                match post.post_type {
                    PostType::Question => {
                        stats.questions += 1;
                        let tags = post.tags_raw.as_deref().map(split_tags).unwrap_or_default();
                        if tags.is_empty() {
                            stats.untagged_questions += 1;
                        }
                        if post.owner_id.is_none() {
                            stats.skipped_missing_owner += 1;
                        }
                        questions.insert(
                            post.post_id,
                            QuestionInfo {
                                owner: post.owner_id,
                                tags,
                                accepted: post.accepted_answer_id,
                            },
                        );
                    }
                    PostType::Answer => {
                        stats.answers += 1;
                        let Some(q) = post.parent_id.as_ref().and_then(|p| questions.get(p)) else {
                            stats.orphan_answers += 1;
                            buf.clear();
                            continue;
                        };
                        let (Some(asker), Some(answerer)) = (&q.owner, &post.owner_id) else {
                            if post.owner_id.is_none() {
                                stats.skipped_missing_owner += 1;
                            }
                            buf.clear();
                            continue;
                        };
                        if q.tags.is_empty() {
                            buf.clear();
                            continue;
                        }
                        let is_best = q.accepted.as_deref() == Some(post.post_id.as_str());
                        let tags: Vec<&str> = q.tags.iter().map(String::as_str).collect();
                        let parent = post.parent_id.as_deref().unwrap_or_default();
                        let rec = corpus.push_named(parent, asker, answerer, &tags, post.score);
                        rec.is_best = is_best;
                        stats.records += 1;
                    }
                }
            }
            _ => {}
        }
        buf.clear();
    }
    Ok((corpus, stats))
}
