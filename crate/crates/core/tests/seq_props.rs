mod support;

use proptest::prelude::*;

use endcold_core::model::{NodeCounts, NodeId, Quad, TrainingCase};
use endcold_core::route::rank_candidates;
use endcold_core::seq::{
    assemble_batch, derive_pairs, pair_hinge, train_pairwise, train_pointwise, FeatureSpec, RegressorKind, SeqHyper, Variant,
};
use endcold_core::walkembed::EmbeddingTable;
use support::sparse_answer_pairs;

/// Multiples of 1/8 in [-8, 8]: sums and differences of these are exact.
fn dyadic() -> impl Strategy<Value = f64> {
    (-64i32..=64).prop_map(|k| k as f64 / 8.0)
}

proptest! {
    #[test]
    fn pair_loss_sees_only_the_difference(
        rows in (1usize..12).prop_flat_map(|n| (
            prop::collection::vec(dyadic(), n),
            prop::collection::vec(dyadic(), n),
            prop::collection::vec(dyadic(), n),
            prop::collection::vec(dyadic(), n),
        )),
        margin in dyadic(),
    ) {
        let (w, plus, minus, shift) = rows;
        let shifted = |x: &[f64]| x.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>();
        let before = pair_hinge(&w, &plus, &minus, margin.abs());
        let after = pair_hinge(&w, &shifted(&plus), &shifted(&minus), margin.abs());
        prop_assert_eq!(before.to_bits(), after.to_bits());
    }
}

#[test]
fn single_answer_questions_yield_no_pairs() {
    let rep = sparse_answer_pairs(5);
    eprintln!("{rep:?}");
    assert!((rep.stats.single_answer_fraction - 0.5803).abs() < 0.03);
    assert!((rep.stats.mean_answers_per_question - 1.8122).abs() < 0.1);
    assert!(rep.single_answer_questions * 2 > rep.questions);
    assert_eq!(rep.single_answer_pairs, 0);
    assert!(rep.pairs_per_question() < rep.cases_per_question());
    assert_eq!(rep.trained, Ok(()));
}

/// Users 0..5 with a one-dimensional embedding equal to their skill; every
/// other node embeds to zero. Votes follow skill exactly.
fn skill_world() -> (EmbeddingTable, Vec<TrainingCase>) {
    let counts = NodeCounts {
        questions: 6,
        users: 5,
        tags: 2,
    };
    let skill = [0.1, 0.9, 0.4, 0.6, 0.2];
    let mut data = vec![0.0; counts.total()];
    for (u, s) in skill.iter().enumerate() {
        data[counts.global(NodeId::user(u as u32))] = *s;
    }
    let table = EmbeddingTable::new(counts, 1, data).unwrap();
    let mut cases = Vec::new();
    for q in 0..6u32 {
        for u in [q % 5, (q + 1) % 5, (q + 3) % 5] {
            cases.push(TrainingCase {
                q: NodeId::question(q),
                u: NodeId::user(u),
                a: NodeId::user((q + 2) % 5),
                t: vec![NodeId::tag(q % 2)],
                y: 10.0 * skill[u as usize],
            });
        }
    }
    (table, cases)
}

#[test]
fn pointwise_and_pairwise_agree_on_a_dominant_candidate() {
    let (table, cases) = skill_world();
    let spec = FeatureSpec::new(Variant::Un, 1);
    let hyper = SeqHyper {
        eps_ins: 0.0,
        lambda: 0.0,
        step_size: 0.05,
        epochs: 300,
        batch_size: 8,
        ..SeqHyper::default()
    };

    let quads: Vec<Quad> = cases.iter().map(|c| c.quad()).collect();
    let x = assemble_batch(&table, &quads, spec).unwrap();
    let y: Vec<f64> = cases.iter().map(|c| c.y).collect();
    let (pointwise, _) = train_pointwise(&x, &y, spec, RegressorKind::LinearEps, &hyper).unwrap();
    let (pairwise, _) = train_pairwise(&derive_pairs(&cases), &table, spec, &hyper).unwrap();

    let pool: Vec<NodeId> = (0..5).map(NodeId::user).collect();
    let requests: Vec<Quad> = pool
        .iter()
        .map(|&u| Quad {
            q: None,
            u,
            a: None,
            t: vec![NodeId::tag(0)],
        })
        .collect();
    for model in [&pointwise, &pairwise] {
        let scores = model.predict_quads(&table, &requests).unwrap();
        assert_eq!(
            rank_candidates(&pool, &scores)[0].0,
            NodeId::user(1),
            "{:?} {scores:?}",
            model.kind()
        );
    }
}
