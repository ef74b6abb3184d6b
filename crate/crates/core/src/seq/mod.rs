//! The two-stage pipeline's regression half: fixed node embeddings are
//! concatenated into case features and fed to a pointwise regressor or a
//! pairwise linear ranker.

mod regress;

pub use regress::{pair_hinge, train_pairwise, train_pointwise, RegressorKind, RegressorModel, SeqHyper};

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::model::{NodeId, Quad, TrainingCase};
use crate::walkembed::EmbeddingTable;

/// Which slots enter the feature vector. Slot order is always question,
/// answerer, asker, mean tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Un,
    T,
    A,
    TA,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Un, Variant::T, Variant::A, Variant::TA];

    pub fn uses_asker(self) -> bool {
        matches!(self, Variant::A | Variant::TA)
    }

    pub fn uses_tags(self) -> bool {
        matches!(self, Variant::T | Variant::TA)
    }

    pub fn slots(self) -> usize {
        2 + self.uses_asker() as usize + self.uses_tags() as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Un => "un",
            Variant::T => "t",
            Variant::A => "a",
            Variant::TA => "ta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "un" => Some(Variant::Un),
            "t" => Some(Variant::T),
            "a" => Some(Variant::A),
            "ta" | "at" => Some(Variant::TA),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub variant: Variant,
    pub dim: usize,
}

impl FeatureSpec {
    pub fn new(variant: Variant, dim: usize) -> Self {
        FeatureSpec { variant, dim }
    }

    pub fn len(&self) -> usize {
        self.dim * self.variant.slots()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column range of the answerer slot.
    pub fn answerer_slot(&self) -> std::ops::Range<usize> {
        self.dim..2 * self.dim
    }
}

/// Writes the feature vector of `quad` into `out`. Unknown or missing
/// question/asker nodes contribute zero slots; the tag slot is the mean of
/// the tag vectors.
pub fn assemble_into(table: &EmbeddingTable, quad: &Quad, spec: FeatureSpec, out: &mut [f64]) -> Result<()> {
    if spec.dim != table.dim() {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            left: (1, spec.dim),
            right: (1, table.dim()),
        });
    }
    if out.len() != spec.len() {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            left: (1, out.len()),
            right: (1, spec.len()),
        });
    }
    if spec.variant.uses_tags() && quad.t.is_empty() {
        return Err(Error::EmptyTagSet);
    }
    let d = spec.dim;
    let mut slots = out.chunks_mut(d);
    let fill = |id: Option<NodeId>, slot: &mut [f64]| match id {
        Some(n) => table.copy_into(n, slot),
        None => slot.fill(0.0),
    };
    fill(quad.q, slots.next().expect("q slot"));
    fill(Some(quad.u), slots.next().expect("u slot"));
    if spec.variant.uses_asker() {
        fill(quad.a, slots.next().expect("a slot"));
    }
    if spec.variant.uses_tags() {
        let slot = slots.next().expect("t slot");
        slot.fill(0.0);
        let mut buf = vec![0.0; d];
        for &t in &quad.t {
            table.copy_into(t, &mut buf);
            for (s, v) in slot.iter_mut().zip(&buf) {
                *s += v;
            }
        }
        let n = quad.t.len() as f64;
        slot.iter_mut().for_each(|s| *s /= n);
    }
    Ok(())
}

pub fn assemble(table: &EmbeddingTable, quad: &Quad, spec: FeatureSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.len()];
    assemble_into(table, quad, spec, &mut out)?;
    Ok(out)
}

/// One feature row per quad.
pub fn assemble_batch(table: &EmbeddingTable, quads: &[Quad], spec: FeatureSpec) -> Result<Tensor> {
    let mut x = Tensor::zeros(quads.len(), spec.len());
    for (i, q) in quads.iter().enumerate() {
        assemble_into(table, q, spec, x.row_mut(i))?;
    }
    Ok(x)
}

/// "`u_plus` answered `q` better than `u_minus`".
#[derive(Debug, Clone, PartialEq)]
pub struct PairConstraint {
    pub q: NodeId,
    pub a: NodeId,
    pub t: Vec<NodeId>,
    pub u_plus: NodeId,
    pub u_minus: NodeId,
}

impl PairConstraint {
    /// The case context with `u` in the answerer slot.
    pub fn quad(&self, u: NodeId) -> Quad {
        Quad {
            q: Some(self.q),
            u,
            a: Some(self.a),
            t: self.t.clone(),
        }
    }
}

/// One constraint per ordered pair of cases on the same question whose vote
/// scores differ strictly. Questions come out in id order, pairs in case
/// order.
pub fn derive_pairs(cases: &[TrainingCase]) -> Vec<PairConstraint> {
    let mut by_q: BTreeMap<NodeId, Vec<&TrainingCase>> = BTreeMap::new();
    for c in cases {
        by_q.entry(c.q).or_default().push(c);
    }
    let mut out = Vec::new();
    for group in by_q.values() {
        for hi in group {
            for lo in group {
                if hi.y > lo.y {
                    out.push(PairConstraint {
                        q: hi.q,
                        a: hi.a,
                        t: hi.t.clone(),
                        u_plus: hi.u,
                        u_minus: lo.u,
                    });
                }
            }
        }
    }
    out
}
