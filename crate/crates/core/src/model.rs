//! Domain types shared by every stage of the pipeline.
//!
//! Questions, users and tags are interned into dense per-kind indices
//! ([`NodeId`]). Askers and answerers are both users: one person is one
//! user node whatever role they play in a thread.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Question,
    User,
    Tag,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [NodeKind::Question, NodeKind::User, NodeKind::Tag];

    /// Single-letter code used in text file formats.
    pub fn code(self) -> char {
        match self {
            NodeKind::Question => 'q',
            NodeKind::User => 'u',
            NodeKind::Tag => 't',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "q" => Some(NodeKind::Question),
            "u" => Some(NodeKind::User),
            "t" => Some(NodeKind::Tag),
            _ => None,
        }
    }
}

/// A node identifier: a kind plus a dense index within that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub local: u32,
}

impl NodeId {
    pub fn question(local: u32) -> Self {
        NodeId {
            kind: NodeKind::Question,
            local,
        }
    }

    pub fn user(local: u32) -> Self {
        NodeId {
            kind: NodeKind::User,
            local,
        }
    }

    pub fn tag(local: u32) -> Self {
        NodeId {
            kind: NodeKind::Tag,
            local,
        }
    }

    pub fn index(self) -> usize {
        self.local as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.code(), self.local)
    }
}

impl std::str::FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::format(format!("bad node id `{s}`"));
        let (kind, local) = s.split_once(':').ok_or_else(bad)?;
        Ok(NodeId {
            kind: NodeKind::from_code(kind).ok_or_else(bad)?,
            local: local.parse().map_err(|_| bad())?,
        })
    }
}

/// Number of nodes of each kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeCounts {
    pub questions: usize,
    pub users: usize,
    pub tags: usize,
}

impl NodeCounts {
    pub fn total(&self) -> usize {
        self.questions + self.users + self.tags
    }

    pub fn of(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Question => self.questions,
            NodeKind::User => self.users,
            NodeKind::Tag => self.tags,
        }
    }

    /// Kind-major global index: questions, then users, then tags.
    pub fn global(&self, id: NodeId) -> usize {
        match id.kind {
            NodeKind::Question => id.index(),
            NodeKind::User => self.questions + id.index(),
            NodeKind::Tag => self.questions + self.users + id.index(),
        }
    }

    pub fn node_at(&self, global: usize) -> NodeId {
        let g = global;
        if g < self.questions {
            NodeId::question(g as u32)
        } else if g < self.questions + self.users {
            NodeId::user((g - self.questions) as u32)
        } else {
            NodeId::tag((g - self.questions - self.users) as u32)
        }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.of(id.kind)
    }

    /// Widens the counts so that `id` is contained.
    pub fn include(&mut self, id: NodeId) {
        let n = id.index() + 1;
        match id.kind {
            NodeKind::Question => self.questions = self.questions.max(n),
            NodeKind::User => self.users = self.users.max(n),
            NodeKind::Tag => self.tags = self.tags.max(n),
        }
    }
}

/// Answer score: up-votes minus down-votes.
pub fn vote_score(upvotes: u64, downvotes: u64) -> i64 {
    upvotes as i64 - downvotes as i64
}

/// One answering thread: who asked, who answered, which tags, how it scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub question: NodeId,
    pub asker: NodeId,
    pub answerer: NodeId,
    /// Sorted and deduplicated; never empty.
    pub tags: Vec<NodeId>,
    pub vote_score: i64,
    pub is_best: bool,
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    pub fn is_self_answer(&self) -> bool {
        self.asker == self.answerer
    }

    pub fn training_case(&self) -> TrainingCase {
        TrainingCase {
            q: self.question,
            u: self.answerer,
            a: self.asker,
            t: self.tags.clone(),
            y: self.vote_score as f64,
        }
    }
}

/// A scoring request. `None` in the question or asker slot means the node
/// is unknown to the model (cold question, new asker) and its slot is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Quad {
    pub q: Option<NodeId>,
    pub u: NodeId,
    pub a: Option<NodeId>,
    pub t: Vec<NodeId>,
}

/// A quadruple (question, answerer, asker, tags) labelled with its vote score.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub q: NodeId,
    /// Answerer.
    pub u: NodeId,
    /// Asker.
    pub a: NodeId,
    pub t: Vec<NodeId>,
    pub y: f64,
}

impl TrainingCase {
    /// The same case as a scoring request with every slot known.
    pub fn quad(&self) -> Quad {
        Quad {
            q: Some(self.q),
            u: self.u,
            a: Some(self.a),
            t: self.t.clone(),
        }
    }
}

/// String-to-index interning, one table per node kind, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdTable {
    names: [Vec<String>; 3],
    index: [HashMap<String, u32>; 3],
}

fn slot(kind: NodeKind) -> usize {
    match kind {
        NodeKind::Question => 0,
        NodeKind::User => 1,
        NodeKind::Tag => 2,
    }
}

impl IdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, kind: NodeKind, name: &str) -> NodeId {
        let s = slot(kind);
        if let Some(&local) = self.index[s].get(name) {
            return NodeId { kind, local };
        }
        let local = self.names[s].len() as u32;
        self.names[s].push(name.to_string());
        self.index[s].insert(name.to_string(), local);
        NodeId { kind, local }
    }

    pub fn lookup(&self, kind: NodeKind, name: &str) -> Option<NodeId> {
        self.index[slot(kind)].get(name).map(|&local| NodeId { kind, local })
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[slot(id.kind)][id.index()]
    }

    pub fn counts(&self) -> NodeCounts {
        NodeCounts {
            questions: self.names[0].len(),
            users: self.names[1].len(),
            tags: self.names[2].len(),
        }
    }
}

/// Records together with the id table that names their nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<InteractionRecord>,
    pub ids: IdTable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub records: usize,
    pub questions: usize,
    pub users: usize,
    pub tags: usize,
    pub self_answers: usize,
    pub mean_tags_per_question: f64,
    pub mean_answers_per_question: f64,
    pub single_answer_fraction: f64,
}

impl Corpus {
    /// Appends a record given string ids, interning them as needed.
    pub fn push_named(&mut self, question: &str, asker: &str, answerer: &str, tags: &[&str], vote_score: i64) -> &mut InteractionRecord {
        let question = self.ids.intern(NodeKind::Question, question);
        let asker = self.ids.intern(NodeKind::User, asker);
        let answerer = self.ids.intern(NodeKind::User, answerer);
        let mut tags: Vec<_> = tags.iter().map(|t| self.ids.intern(NodeKind::Tag, t)).collect();
        tags.sort();
        tags.dedup();
        self.records.push(InteractionRecord {
            question,
            asker,
            answerer,
            tags,
            vote_score,
            is_best: false,
            timestamp: None,
        });
        self.records.last_mut().expect("just pushed")
    }

    pub fn counts(&self) -> NodeCounts {
        self.ids.counts()
    }

    /// Record indices grouped by question, in question order.
    pub fn by_question(&self) -> BTreeMap<NodeId, Vec<usize>> {
        let mut groups: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            groups.entry(r.question).or_default().push(i);
        }
        groups
    }

    /// Checks the per-record and per-question invariants.
    pub fn validate(&self) -> Result<()> {
        let counts = self.counts();
        let mut best_seen = BTreeSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.tags.is_empty() {
                return Err(Error::parse(i + 1, "record has no tags"));
            }
            for id in [r.question, r.asker, r.answerer].iter().chain(r.tags.iter()) {
                if !counts.contains(*id) {
                    return Err(Error::UnknownNode(id.to_string()));
                }
            }
            if r.is_best && !best_seen.insert(r.question) {
                return Err(Error::parse(
                    i + 1,
                    format!("question {} has more than one best answer", self.ids.name(r.question)),
                ));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> CorpusStats {
        let groups = self.by_question();
        let nq = groups.len().max(1) as f64;
        let mut tag_total = 0usize;
        let mut single = 0usize;
        for idx in groups.values() {
            tag_total += self.records[idx[0]].tags.len();
            let answerers: BTreeSet<_> = idx.iter().map(|&i| self.records[i].answerer).collect();
            if answerers.len() == 1 {
                single += 1;
            }
        }
        CorpusStats {
            records: self.records.len(),
            questions: groups.len(),
            users: self.counts().users,
            tags: self.counts().tags,
            self_answers: self.records.iter().filter(|r| r.is_self_answer()).count(),
            mean_tags_per_question: tag_total as f64 / nq,
            mean_answers_per_question: self.records.len() as f64 / nq,
            single_answer_fraction: single as f64 / nq,
        }
    }

    /// Best answerer per question: the flagged record if any, otherwise the
    /// highest vote score with ties going to the smallest user index.
    pub fn best_answerers(&self) -> BTreeMap<NodeId, NodeId> {
        let mut best: BTreeMap<NodeId, (bool, i64, NodeId)> = BTreeMap::new();
        for r in &self.records {
            let cand = (r.is_best, r.vote_score, r.answerer);
            best.entry(r.question)
                .and_modify(|cur| {
                    let better = (cand.0 && !cur.0) || (cand.0 == cur.0 && (cand.1 > cur.1 || (cand.1 == cur.1 && cand.2 < cur.2)));
                    if better {
                        *cur = cand;
                    }
                })
                .or_insert(cand);
        }
        best.into_iter().map(|(q, (_, _, u))| (q, u)).collect()
    }
}

/// Which evaluation pool a question belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    /// Cold question whose asker has training activity.
    TestExistingAsker,
    /// Cold question whose asker appears in no training record.
    TestNewAsker,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestExistingAsker => "test_existing",
            Split::TestNewAsker => "test_new",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test_existing" | "existing" => Some(Split::TestExistingAsker),
            "test_new" | "new" => Some(Split::TestNewAsker),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Fraction of all questions moved to the test pools.
    pub test_fraction: f64,
    pub seed: u64,
    /// Minimum distinct answerers for a test question; never below 2.
    pub min_answers: usize,
    /// Hold out the most recent questions instead of a random sample.
    pub temporal: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.15,
            seed: 0,
            min_answers: 2,
            temporal: false,
        }
    }
}

/// A corpus with every question assigned to exactly one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub corpus: Corpus,
    splits: Vec<Split>,
}

impl Dataset {
    /// Wraps a corpus with explicit split labels (one per question index).
    pub fn with_splits(corpus: Corpus, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != corpus.counts().questions {
            return Err(Error::InvalidConfig(format!(
                "{} split labels for {} questions",
                splits.len(),
                corpus.counts().questions
            )));
        }
        Ok(Dataset { corpus, splits })
    }

    /// Every question in training.
    pub fn all_train(corpus: Corpus) -> Self {
        let n = corpus.counts().questions;
        Dataset {
            corpus,
            splits: vec![Split::Train; n],
        }
    }

    pub fn counts(&self) -> NodeCounts {
        self.corpus.counts()
    }

    pub fn split_of(&self, q: NodeId) -> Split {
        self.splits[q.index()]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn questions_in(&self, split: Split) -> Vec<NodeId> {
        (0..self.splits.len())
            .filter(|&i| self.splits[i] == split)
            .map(|i| NodeId::question(i as u32))
            .collect()
    }

    pub fn train_records(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.corpus
            .records
            .iter()
            .filter(|r| self.splits[r.question.index()] == Split::Train)
    }

    pub fn training_cases(&self) -> Vec<TrainingCase> {
        self.train_records().map(|r| r.training_case()).collect()
    }

    /// Users that ask or answer in at least one training record.
    pub fn training_users(&self) -> BTreeSet<NodeId> {
        let mut users = BTreeSet::new();
        for r in self.train_records() {
            users.insert(r.asker);
            users.insert(r.answerer);
        }
        users
    }
}

/// Assigns questions to train / existing-asker test / new-asker test pools.
///
/// Only questions with at least `max(2, min_answers)` distinct answerers may
/// be held out. A held-out question lands in the new-asker pool when its
/// asker has no activity in any training record.
pub fn make_splits(corpus: Corpus, cfg: &SplitConfig) -> Result<Dataset> {
    if corpus.records.is_empty() {
        return Err(Error::EmptyInput("no records to split".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction {} not in (0, 1)", cfg.test_fraction)));
    }
    let min_answers = cfg.min_answers.max(2);
    let groups = corpus.by_question();

    let mut eligible: Vec<(i64, NodeId)> = groups
        .iter()
        .filter_map(|(&q, idx)| {
            let answerers: BTreeSet<_> = idx.iter().map(|&i| corpus.records[i].answerer).collect();
            (answerers.len() >= min_answers).then(|| {
                let ts = idx.iter().filter_map(|&i| corpus.records[i].timestamp).min().unwrap_or(i64::MIN);
                (ts, q)
            })
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no question has {min_answers} or more distinct answerers"
        )));
    }

    let wanted = ((cfg.test_fraction * groups.len() as f64).round() as usize).max(1);
    let n_test = wanted.min(eligible.len());
    if cfg.temporal {
        eligible.sort();
        eligible.drain(..eligible.len() - n_test);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        eligible.shuffle(&mut rng);
        eligible.truncate(n_test);
    }

    let n_questions = corpus.counts().questions;
    let mut splits = vec![Split::Train; n_questions];
    for &(_, q) in &eligible {
        splits[q.index()] = Split::TestExistingAsker;
    }
    let mut dataset = Dataset { corpus, splits };
    let train_users = dataset.training_users();
    for (&q, idx) in &groups {
        if dataset.splits[q.index()] != Split::Train {
            let asker = dataset.corpus.records[idx[0]].asker;
            if !train_users.contains(&asker) {
                dataset.splits[q.index()] = Split::TestNewAsker;
            }
        }
    }
    Ok(dataset)
}
