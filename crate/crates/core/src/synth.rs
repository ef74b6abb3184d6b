//! Synthetic communities with latent expertise, for checking routing
//! quality against a known answer.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Corpus, InteractionRecord, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_questions: usize,
    pub n_tags: usize,
    pub topic_dim: usize,
    pub tags_per_question_mean: f64,
    pub answers_per_question_mean: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Fraction of questions posted by a one-off asker who never answers.
    pub new_asker_fraction: f64,
    /// When set, exactly this fraction of questions get a single answer and
    /// the rest `2 + Poisson`, keeping the overall mean.
    pub single_answer_fraction: Option<f64>,
    pub max_tags: usize,
    pub vote_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            n_questions: 5000,
            n_tags: 50,
            topic_dim: 8,
            tags_per_question_mean: 2.8,
            answers_per_question_mean: 1.8,
            noise_sd: 0.5,
            seed: 0,
            new_asker_fraction: 0.3,
            single_answer_fraction: None,
            max_tags: 5,
            vote_scale: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users < 2 || self.n_questions == 0 || self.n_tags == 0 || self.topic_dim == 0 {
            return bad("synth needs at least 2 users and one question, tag and topic dimension".into());
        }
        if self.topic_dim > self.n_tags {
            return bad(format!("topic_dim {} exceeds n_tags {}", self.topic_dim, self.n_tags));
        }
        if [self.tags_per_question_mean, self.answers_per_question_mean]
            .iter()
            .any(|m| m.is_nan() || *m < 1.0)
        {
            return bad("per-question means must be at least 1".into());
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return bad(format!("noise_sd {} must be finite and non-negative", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.new_asker_fraction) {
            return bad(format!("new_asker_fraction {} not in [0, 1]", self.new_asker_fraction));
        }
        if self.max_tags == 0 {
            return bad("max_tags must be positive".into());
        }
        if let Some(s) = self.single_answer_fraction {
            if !(0.0..1.0).contains(&s) || self.extra_answer_rate() < 0.0 {
                return bad(format!(
                    "single-answer fraction {s} is incompatible with mean {}",
                    self.answers_per_question_mean
                ));
            }
        }
        Ok(())
    }

    /// Poisson rate of the answer-count tail.
    fn extra_answer_rate(&self) -> f64 {
        let m = self.answers_per_question_mean;
        match self.single_answer_fraction {
            None => m - 1.0,
            Some(s) => (m - s) / (1.0 - s) - 2.0,
        }
    }

    /// Expected share of questions with exactly one answer, ignoring the cap
    /// at the number of users.
    pub fn expected_single_answer_fraction(&self) -> f64 {
        match self.single_answer_fraction {
            Some(s) => s,
            None => (-self.extra_answer_rate()).exp(),
        }
    }
}

/// A generated corpus and its hidden ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Answerer with the highest noiseless affinity, per question.
    pub truth: BTreeMap<NodeId, NodeId>,
    /// Expertise of the answering population, indexed by user local index.
    pub expertise: Vec<Vec<f64>>,
    /// Topic of every tag, by tag local index.
    pub tag_topics: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as usize
}

/// Index drawn proportionally to `weights`; zero-weight entries are never
/// chosen.
fn draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if x < w {
                return i;
            }
            x -= w;
        }
    }
    last
}

impl SynthCorpus {
    /// Mean topic of a tag set.
    pub fn topic_of(&self, tags: &[NodeId]) -> Vec<f64> {
        let dim = self.tag_topics[0].len();
        let mut topic = vec![0.0; dim];
        let known: Vec<&Vec<f64>> = tags.iter().filter_map(|t| self.tag_topics.get(t.index())).collect();
        for v in &known {
            topic.iter_mut().zip(v.iter()).for_each(|(s, x)| *s += x);
        }
        let n = known.len().max(1) as f64;
        topic.iter_mut().for_each(|s| *s /= n);
        topic
    }

    /// Noiseless affinity of `user` for a question with `tags`; users outside
    /// the answering population get negative infinity.
    pub fn affinity(&self, user: NodeId, tags: &[NodeId]) -> f64 {
        match self.expertise.get(user.index()) {
            Some(e) if user.kind == NodeKind::User => dot(e, &self.topic_of(tags)),
            _ => f64::NEG_INFINITY,
        }
    }

    /// Up to `count` users drawn like answerers (softmax of affinity, without
    /// replacement) for a question with `tags`, skipping `exclude`. These are
    /// users who plausibly could have answered but did not.
    pub fn plausible_distractors(&self, tags: &[NodeId], exclude: &BTreeSet<NodeId>, count: usize, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
        let topic = self.topic_of(tags);
        let affinity: Vec<f64> = self.expertise.iter().map(|e| dot(e, &topic)).collect();
        let peak = affinity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = affinity
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if exclude.contains(&NodeId::user(i as u32)) {
                    0.0
                } else {
                    (a - peak).exp()
                }
            })
            .collect();
        let mut out = Vec::with_capacity(count);
        while out.len() < count && weights.iter().any(|&w| w > 0.0) {
            let i = draw(rng, &weights);
            weights[i] = 0.0;
            out.push(NodeId::user(i as u32));
        }
        out
    }

    /// The truth map keyed and valued by external names.
    pub fn named_truth(&self) -> BTreeMap<String, String> {
        self.truth
            .iter()
            .map(|(q, u)| (self.corpus.ids.name(*q).to_string(), self.corpus.ids.name(*u).to_string()))
            .collect()
    }
}

/// Generates a community. Regular users `u0..` come first in the user index
/// space, so their local index is their expertise row; one-off askers `n0..`
/// follow as they appear.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let expertise: Vec<Vec<f64>> = (0..cfg.n_users).map(|_| normal_vec(&mut rng, cfg.topic_dim)).collect();
    let tag_topics: Vec<Vec<f64>> = (0..cfg.n_tags).map(|_| normal_vec(&mut rng, cfg.topic_dim)).collect();
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut corpus = Corpus::default();
    let users: Vec<NodeId> = (0..cfg.n_users)
        .map(|i| corpus.ids.intern(NodeKind::User, &format!("u{i}")))
        .collect();
    let tags: Vec<NodeId> = (0..cfg.n_tags)
        .map(|i| corpus.ids.intern(NodeKind::Tag, &format!("t{i}")))
        .collect();
    let mut truth = BTreeMap::new();
    let mut one_off = 0usize;
    let tag_cap = cfg.max_tags.min(cfg.n_tags);
    let tail_rate = cfg.extra_answer_rate();

    for qi in 0..cfg.n_questions {
        let question = corpus.ids.intern(NodeKind::Question, &format!("q{qi}"));
        let k = (1 + poisson(&mut rng, cfg.tags_per_question_mean - 1.0)).min(tag_cap);
        let mut qtags: Vec<NodeId> = rand::seq::index::sample(&mut rng, cfg.n_tags, k)
            .into_iter()
            .map(|i| tags[i])
            .collect();
        qtags.sort();
        let mut topic = vec![0.0; cfg.topic_dim];
        for t in &qtags {
            topic.iter_mut().zip(&tag_topics[t.index()]).for_each(|(s, x)| *s += x);
        }
        topic.iter_mut().for_each(|s| *s /= k as f64);
        let affinity: Vec<f64> = expertise.iter().map(|e| dot(e, &topic)).collect();
        let peak = affinity.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = affinity.iter().map(|a| (a - peak).exp()).collect();

        let asker = if rng.random::<f64>() < cfg.new_asker_fraction {
            one_off += 1;
            corpus.ids.intern(NodeKind::User, &format!("n{}", one_off - 1))
        } else {
            let a = users[draw(&mut rng, &weights)];
            weights[a.index()] = 0.0;
            a
        };
        let pool = weights.iter().filter(|&&w| w > 0.0).count();
        let n_answers = match cfg.single_answer_fraction {
            Some(s) if rng.random::<f64>() < s => 1,
            Some(_) => 2 + poisson(&mut rng, tail_rate),
            None => 1 + poisson(&mut rng, tail_rate),
        }
        .min(pool);

        let mut answerers = Vec::with_capacity(n_answers);
        for _ in 0..n_answers {
            let i = draw(&mut rng, &weights);
            weights[i] = 0.0;
            answerers.push(i);
        }
        let best = *answerers
            .iter()
            .max_by(|&&a, &&b| affinity[a].total_cmp(&affinity[b]).then(b.cmp(&a)))
            .expect("at least one answer");
        truth.insert(question, users[best]);
        for &i in &answerers {
            let vote = (cfg.vote_scale * affinity[i] + noise.sample(&mut rng)).round() as i64;
            corpus.records.push(InteractionRecord {
                question,
                asker,
                answerer: users[i],
                tags: qtags.clone(),
                vote_score: vote,
                is_best: i == best,
                timestamp: Some(qi as i64),
            });
        }
    }
    Ok(SynthCorpus {
        corpus,
        truth,
        expertise,
        tag_topics,
    })
}
