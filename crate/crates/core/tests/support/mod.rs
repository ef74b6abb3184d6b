//! Oracles shared by the integration tests and the acceptance target.
//! Every reference value here is computed from scratch in plain loops,
//! never by calling the code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use endcold_core::endcold::{score_cold, EndColdConfig, EndColdModel};
use endcold_core::eval::{accuracy, mean_reciprocal_rank, precision_at_k, rank_of_best};
use endcold_core::experiment::fit_seq_pairwise;
use endcold_core::grad::{Mlp, SparseMatrix, Tape, Tensor, Var};
use endcold_core::graph::{attach_cold_question, build_graph, normalize, CqaGraph, Edge, EdgeKind, UnknownTagPolicy};
use endcold_core::model::{Corpus, CorpusStats, Dataset, NodeCounts, NodeId, Quad};
use endcold_core::route::rank_candidates;
use endcold_core::seq::{derive_pairs, SeqHyper, Variant};
use endcold_core::synth::{generate, SynthConfig};
use endcold_core::walkembed::{embed_graph, sample_gradients, sample_loss, WalkConfig, Walker};

pub const GRAD_INSTANCES: usize = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;
const H: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Like [`random_tensor`] but every entry at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Central differences of `f` with respect to each input.
fn numeric(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut probe = inputs.to_vec();
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].data().len());
        for i in 0..inputs[k].data().len() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + H;
            let up = f(&probe);
            probe[k].data_mut()[i] = orig - H;
            let down = f(&probe);
            probe[k].data_mut()[i] = orig;
            g.push((up - down) / (2.0 * H));
        }
        out.push(g);
    }
    out
}

/// `max |a - n| / max(|a|, |n|)` over all entries of all inputs' gradients
/// taken together, with a floor for all-zero gradients.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / scale.max(1e-10)
}

/// Tape gradients of a scalarized output against central differences of a
/// plain re-implementation. Matrix outputs are reduced by
/// `sum((Y + C)^2)` with a fixed random offset `C`.
fn tape_case(
    inputs: Vec<Tensor>,
    offset: Option<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    plain: impl Fn(&[Tensor]) -> Vec<f64>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = build(&mut tape, &vars);
    let loss = match &offset {
        Some(c) => {
            let c = tape.constant(c.clone());
            let s = tape.add(y, c).unwrap();
            tape.sum_squares(s).unwrap()
        }
        None => y,
    };
    let grads = tape.backward(loss).unwrap();
    let f = |xs: &[Tensor]| -> f64 {
        let y = plain(xs);
        match &offset {
            Some(c) => y.iter().zip(c.data()).map(|(a, b)| (a + b) * (a + b)).sum(),
            None => y[0],
        }
    };
    let forward = f(&inputs);
    let reported = tape.value(loss).item();
    assert!(
        (forward - reported).abs() <= 1e-9 * forward.abs().max(1.0),
        "forward {reported} vs plain {forward}"
    );
    let num: Vec<f64> = numeric(&inputs, &f).concat();
    let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.wrt(v).into_data()).collect();
    rel_error(&analytic, &num)
}

fn plain_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a.get(i, t) * b.get(t, j)).sum();
        }
    }
    out
}

type Family = (&'static str, fn(u64) -> f64);

/// One named family per primitive and composite loss.
pub fn grad_families() -> Vec<Family> {
    vec![
        ("matmul", |s| {
            let mut r = rng(s);
            let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
            let inputs = vec![random_tensor(&mut r, m, k), random_tensor(&mut r, k, n)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                |t, v| t.matmul(v[0], v[1]).unwrap(),
                |x| plain_matmul(&x[0], &x[1]),
            )
        }),
        ("spmm", |s| {
            let mut r = rng(s);
            let (m, k, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..4));
            let rows: Vec<Vec<(usize, f64)>> = (0..m)
                .map(|_| {
                    let mut row = Vec::new();
                    for j in 0..k {
                        if r.random_bool(0.5) {
                            row.push((j, r.random_range(-1.0..1.0)));
                        }
                    }
                    row
                })
                .collect();
            let dense = {
                let mut d = Tensor::zeros(m, k);
                for (i, row) in rows.iter().enumerate() {
                    for &(j, v) in row {
                        d.set(i, j, v);
                    }
                }
                d
            };
            let a = Arc::new(SparseMatrix::from_rows(k, rows));
            let inputs = vec![random_tensor(&mut r, k, n)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                move |t, v| t.spmm(&a, v[0]).unwrap(),
                move |x| plain_matmul(&dense, &x[0]),
            )
        }),
        ("add_bias", |s| {
            let mut r = rng(s);
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            let inputs = vec![random_tensor(&mut r, m, n), random_tensor(&mut r, 1, n)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                |t, v| t.add_bias(v[0], v[1]).unwrap(),
                |x| {
                    (0..x[0].rows())
                        .flat_map(|i| (0..x[0].cols()).map(move |j| (i, j)))
                        .map(|(i, j)| x[0].get(i, j) + x[1].get(0, j))
                        .collect()
                },
            )
        }),
        ("add", |s| {
            let mut r = rng(s);
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            let inputs = vec![random_tensor(&mut r, m, n), random_tensor(&mut r, m, n)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                |t, v| t.add(v[0], v[1]).unwrap(),
                |x| x[0].data().iter().zip(x[1].data()).map(|(a, b)| a + b).collect(),
            )
        }),
        ("scale", |s| {
            let mut r = rng(s);
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            let k: f64 = r.random_range(-3.0..3.0);
            let inputs = vec![random_tensor(&mut r, m, n)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                move |t, v| t.scale(v[0], k).unwrap(),
                move |x| x[0].data().iter().map(|a| a * k).collect(),
            )
        }),
        ("relu", |s| {
            let mut r = rng(s);
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            let inputs = vec![away_from_zero(&mut r, m, n, 0.01)];
            let c = random_tensor(&mut r, m, n);
            tape_case(
                inputs,
                Some(c),
                |t, v| t.relu(v[0]).unwrap(),
                |x| x[0].data().iter().map(|a| a.max(0.0)).collect(),
            )
        }),
        ("concat_cols", |s| {
            let mut r = rng(s);
            let m = r.random_range(1..5);
            let widths: Vec<usize> = (0..3).map(|_| r.random_range(1..4)).collect();
            let inputs: Vec<Tensor> = widths.iter().map(|&w| random_tensor(&mut r, m, w)).collect();
            let c = random_tensor(&mut r, m, widths.iter().sum());
            tape_case(
                inputs,
                Some(c),
                |t, v| t.concat_cols(v).unwrap(),
                |x| {
                    (0..x[0].rows())
                        .flat_map(|i| x.iter().flat_map(move |p| p.row(i).to_vec()))
                        .collect()
                },
            )
        }),
        ("segment_mean", |s| {
            let mut r = rng(s);
            let (m, n, g) = (r.random_range(1..6), r.random_range(1..4), r.random_range(1..5));
            let groups: Vec<Vec<usize>> = (0..g)
                .map(|_| (0..r.random_range(0..4)).map(|_| r.random_range(0..m)).collect())
                .collect();
            let groups2 = groups.clone();
            let groups = Arc::new(groups);
            let inputs = vec![random_tensor(&mut r, m, n)];
            let c = random_tensor(&mut r, g, n);
            tape_case(
                inputs,
                Some(c),
                move |t, v| t.segment_mean(v[0], groups.clone()).unwrap(),
                move |x| {
                    let mut out = Vec::new();
                    for members in &groups2 {
                        for j in 0..x[0].cols() {
                            let s: f64 = members.iter().map(|&i| x[0].get(i, j)).sum();
                            out.push(if members.is_empty() { 0.0 } else { s / members.len() as f64 });
                        }
                    }
                    out
                },
            )
        }),
        ("sum_squares", |s| {
            let mut r = rng(s);
            let (m, n) = (r.random_range(1..5), r.random_range(1..5));
            let inputs = vec![random_tensor(&mut r, m, n)];
            tape_case(
                inputs,
                None,
                |t, v| t.sum_squares(v[0]).unwrap(),
                |x| vec![x[0].data().iter().map(|a| a * a).sum()],
            )
        }),
        ("mse", |s| {
            let mut r = rng(s);
            let m = r.random_range(1..8);
            let target = random_tensor(&mut r, m, 1);
            let t2 = target.clone();
            let target = Arc::new(target);
            let inputs = vec![random_tensor(&mut r, m, 1)];
            tape_case(
                inputs,
                None,
                move |t, v| t.mse(v[0], target.clone()).unwrap(),
                move |x| vec![x[0].data().iter().zip(t2.data()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / t2.data().len() as f64],
            )
        }),
        ("eps_insensitive", |s| {
            let mut r = rng(s);
            let m = r.random_range(1..8);
            let eps = 0.1;
            // residuals kept clear of the kinks at +-eps
            let resid = away_from_zero(&mut r, m, 1, 0.0);
            let resid: Vec<f64> = resid
                .data()
                .iter()
                .map(|v| if (v.abs() - eps).abs() < 0.02 { v + 0.05 } else { *v })
                .collect();
            let target = random_tensor(&mut r, m, 1);
            let pred: Vec<f64> = target.data().iter().zip(&resid).map(|(y, e)| y + e).collect();
            let t2 = target.clone();
            let target = Arc::new(target);
            let inputs = vec![Tensor::from_vec(m, 1, pred).unwrap()];
            tape_case(
                inputs,
                None,
                move |t, v| t.eps_insensitive(v[0], target.clone(), eps).unwrap(),
                move |x| {
                    vec![
                        x[0].data()
                            .iter()
                            .zip(t2.data())
                            .map(|(p, y)| ((p - y).abs() - eps).max(0.0))
                            .sum::<f64>()
                            / t2.data().len() as f64,
                    ]
                },
            )
        }),
        ("hinge", |s| {
            let mut r = rng(s);
            let m = r.random_range(1..8);
            let margin = 0.5;
            let pos = random_tensor(&mut r, m, 1);
            let neg: Vec<f64> = pos
                .data()
                .iter()
                .map(|p| {
                    let d: f64 = r.random_range(-1.0..1.0);
                    let d = if (margin + d).abs() < 0.02 { d + 0.05 } else { d };
                    p + d
                })
                .collect();
            let inputs = vec![pos, Tensor::from_vec(m, 1, neg).unwrap()];
            tape_case(
                inputs,
                None,
                move |t, v| t.hinge(v[0], v[1], margin).unwrap(),
                move |x| vec![x[0].data().iter().zip(x[1].data()).map(|(p, n)| (margin + n - p).max(0.0)).sum()],
            )
        }),
        ("linear_eps_loss", linear_eps_case),
        ("pair_hinge_loss", pair_hinge_case),
        ("skipgram_sample", skipgram_case),
        ("endcold_mse", endcold_case),
    ]
}

/// Linear regressor `Xw + b` under the insensitive loss.
fn linear_eps_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let eps = 0.1;
    loop {
        let (m, d) = (r.random_range(2..8), r.random_range(1..5));
        let x = random_tensor(&mut r, m, d);
        let y = random_tensor(&mut r, m, 1);
        let w = random_tensor(&mut r, d, 1);
        let b = random_tensor(&mut r, 1, 1);
        let pred: Vec<f64> = plain_matmul(&x, &w).iter().map(|v| v + b.item()).collect();
        if pred.iter().zip(y.data()).any(|(p, t)| ((p - t).abs() - eps).abs() < 0.01) {
            continue;
        }
        let (x2, y2) = (x.clone(), y.clone());
        let ya = Arc::new(y);
        return tape_case(
            vec![w, b],
            None,
            move |t, v| {
                let xv = t.constant(x.clone());
                let p = t.matmul(xv, v[0]).unwrap();
                let p = t.add_bias(p, v[1]).unwrap();
                t.eps_insensitive(p, ya.clone(), eps).unwrap()
            },
            move |p| {
                let pred = plain_matmul(&x2, &p[0]);
                let n = pred.len() as f64;
                vec![
                    pred.iter()
                        .zip(y2.data())
                        .map(|(q, t)| ((q + p[1].item() - t).abs() - eps).max(0.0))
                        .sum::<f64>()
                        / n,
                ]
            },
        );
    }
}

/// Mean pair hinge over `w . x+` and `w . x-` plus an L2 term.
fn pair_hinge_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (margin, lambda) = (1.0, 0.01);
    loop {
        let (m, d) = (r.random_range(1..8), r.random_range(1..5));
        let xp = random_tensor(&mut r, m, d);
        let xm = random_tensor(&mut r, m, d);
        let w = random_tensor(&mut r, d, 1);
        let sp = plain_matmul(&xp, &w);
        let sm = plain_matmul(&xm, &w);
        if sp.iter().zip(&sm).any(|(p, n)| (margin + n - p).abs() < 0.01) {
            continue;
        }
        let (xp2, xm2) = (xp.clone(), xm.clone());
        return tape_case(
            vec![w],
            None,
            move |t, v| {
                let a = t.constant(xp.clone());
                let b = t.constant(xm.clone());
                let pos = t.matmul(a, v[0]).unwrap();
                let neg = t.matmul(b, v[0]).unwrap();
                let h = t.hinge(pos, neg, margin).unwrap();
                let h = t.scale(h, 1.0 / m as f64).unwrap();
                let reg = t.sum_squares(v[0]).unwrap();
                let reg = t.scale(reg, lambda).unwrap();
                t.add(h, reg).unwrap()
            },
            move |p| {
                let sp = plain_matmul(&xp2, &p[0]);
                let sm = plain_matmul(&xm2, &p[0]);
                let h: f64 = sp.iter().zip(&sm).map(|(a, b)| (margin + b - a).max(0.0)).sum();
                vec![h / m as f64 + lambda * p[0].data().iter().map(|v| v * v).sum::<f64>()]
            },
        );
    }
}

fn skipgram_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d = r.random_range(2..9);
    let k = r.random_range(1..6);
    let vecs: Vec<Vec<f64>> = (0..k + 2).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let plain = |v: &[Vec<f64>]| -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let ln_sig = |z: f64| -(1.0 + (-z).exp()).ln();
        -ln_sig(dot(&v[0], &v[1])) - v[2..].iter().map(|n| ln_sig(-dot(&v[0], n))).sum::<f64>()
    };
    let negs: Vec<&[f64]> = vecs[2..].iter().map(Vec::as_slice).collect();
    let loss = sample_loss(&vecs[0], &vecs[1], &negs);
    assert!((loss - plain(&vecs)).abs() < 1e-12);
    let g = sample_gradients(&vecs[0], &vecs[1], &negs);
    let analytic: Vec<&Vec<f64>> = [&g.center, &g.context].into_iter().chain(g.negatives.iter()).collect();
    let mut num = Vec::new();
    let mut probe = vecs.clone();
    for which in 0..analytic.len() {
        for i in 0..d {
            let orig = probe[which][i];
            probe[which][i] = orig + H;
            let up = plain(&probe);
            probe[which][i] = orig - H;
            let down = plain(&probe);
            probe[which][i] = orig;
            num.push((up - down) / (2.0 * H));
        }
    }
    let analytic: Vec<f64> = analytic.into_iter().flatten().copied().collect();
    rel_error(&analytic, &num)
}

/// Small random community for model-level checks.
pub fn random_corpus(rng: &mut ChaCha8Rng, questions: usize, users: usize, tags: usize) -> Corpus {
    let mut c = Corpus::default();
    for q in 0..questions {
        let asker = format!("u{}", rng.random_range(0..users));
        let n_tags = rng.random_range(1..=tags.min(3));
        let mut pool: Vec<usize> = (0..tags).collect();
        pool.shuffle(rng);
        let tag_names: Vec<String> = pool[..n_tags].iter().map(|t| format!("t{t}")).collect();
        let tag_refs: Vec<&str> = tag_names.iter().map(String::as_str).collect();
        for _ in 0..rng.random_range(1..4) {
            let answerer = format!("u{}", rng.random_range(0..users));
            let score = rng.random_range(-3..8);
            c.push_named(&format!("q{q}"), &asker, &answerer, &tag_refs, score);
        }
    }
    c
}

fn endcold_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r, 6, 5, 4);
    let graph = build_graph(&corpus.records).unwrap();
    let cfg = EndColdConfig {
        d0: 3,
        d1: 3,
        d2: 2,
        hidden: [4, 3, 2],
        seed,
        ..EndColdConfig::default()
    };
    let mut model = EndColdModel::new(&graph, &cfg).unwrap();
    // move the biases off zero so every parameter matters
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let adj = normalize(&graph);
    let quads: Vec<Quad> = corpus
        .records
        .iter()
        .map(|rec| {
            let mut q = rec.training_case().quad();
            if r.random_bool(0.3) {
                q.a = None;
            }
            q
        })
        .collect();
    let targets: Vec<f64> = (0..quads.len()).map(|_| r.random_range(-2.0..5.0)).collect();
    let (loss, grads) = model.mse_gradients(&adj, &quads, &targets).unwrap();
    assert!((loss - model.mse_loss(&adj, &quads, &targets).unwrap()).abs() < 1e-9);
    let mut num = Vec::new();
    for k in 0..grads.len() {
        for i in 0..model.params()[k].data().len() {
            let orig = model.params()[k].data()[i];
            model.params_mut()[k].data_mut()[i] = orig + H;
            let up = model.mse_loss(&adj, &quads, &targets).unwrap();
            model.params_mut()[k].data_mut()[i] = orig - H;
            let down = model.mse_loss(&adj, &quads, &targets).unwrap();
            model.params_mut()[k].data_mut()[i] = orig;
            num.push((up - down) / (2.0 * H));
        }
    }
    let analytic: Vec<f64> = grads.into_iter().flat_map(Tensor::into_data).collect();
    rel_error(&analytic, &num)
}

/// Worst relative error of each family over its seeded instances.
pub fn grad_suite() -> Vec<(&'static str, usize, f64)> {
    grad_families()
        .into_iter()
        .map(|(name, case)| {
            let worst = (0..GRAD_INSTANCES as u64).map(|s| case(1000 + s)).fold(0.0, f64::max);
            (name, GRAD_INSTANCES, worst)
        })
        .collect()
}

/// A random community graph on at most 50 nodes plus its edge pairs in
/// global indices.
pub fn random_graph(rng: &mut ChaCha8Rng) -> (CqaGraph, Vec<(usize, usize)>) {
    let nq = rng.random_range(1..20);
    let nu = rng.random_range(1..20);
    let nt = rng.random_range(1..=(50 - nq - nu).min(10));
    let counts = NodeCounts {
        questions: nq,
        users: nu,
        tags: nt,
    };
    let density: f64 = rng.random_range(0.05..0.5);
    let mut edges = Vec::new();
    let mut pairs = BTreeSet::new();
    for q in 0..nq {
        for u in 0..nu {
            if rng.random_bool(density) {
                let kind = if rng.random_bool(0.3) {
                    EdgeKind::Asked
                } else {
                    EdgeKind::Answered
                };
                edges.push(Edge {
                    src: NodeId::user(u as u32),
                    dst: NodeId::question(q as u32),
                    kind,
                });
                pairs.insert((q, nq + u));
            }
        }
        for t in 0..nt {
            if rng.random_bool(density) {
                edges.push(Edge {
                    src: NodeId::question(q as u32),
                    dst: NodeId::tag(t as u32),
                    kind: EdgeKind::Tagged,
                });
                pairs.insert((q, nq + nu + t));
            }
        }
    }
    (CqaGraph::from_edges(counts, edges).unwrap(), pairs.into_iter().collect())
}

#[derive(Debug)]
pub struct AdjacencyReport {
    pub graphs: usize,
    pub max_abs_err: f64,
    pub symmetric: bool,
    pub max_spectral_radius: f64,
}

pub fn adjacency_oracle(graphs: usize) -> AdjacencyReport {
    let mut r = rng(77);
    let mut report = AdjacencyReport {
        graphs,
        max_abs_err: 0.0,
        symmetric: true,
        max_spectral_radius: 0.0,
    };
    for _ in 0..graphs {
        let (g, pairs) = random_graph(&mut r);
        let n = g.node_count();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j) in &pairs {
            a[i][j] = 1.0;
            a[j][i] = 1.0;
        }
        let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
        let adj = normalize(&g);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let want = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                let got = adj.get(i, j);
                dense[i][j] = got;
                report.max_abs_err = report.max_abs_err.max((want - got).abs());
                if got.to_bits() != adj.get(j, i).to_bits() {
                    report.symmetric = false;
                }
            }
        }
        report.max_spectral_radius = report.max_spectral_radius.max(power_iteration(&dense, &mut r));
    }
    report
}

/// Dominant |eigenvalue| of a symmetric matrix.
pub fn power_iteration(m: &[Vec<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let n = m.len();
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambda = norm / vnorm;
        if norm == 0.0 {
            break;
        }
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Five nodes: two questions sharing a tag, each asked by one user and
/// answered by the other.
pub fn walk_graph() -> CqaGraph {
    let (q0, q1, u0, u1, t0) = (
        NodeId::question(0),
        NodeId::question(1),
        NodeId::user(0),
        NodeId::user(1),
        NodeId::tag(0),
    );
    let e = |src, dst, kind| Edge { src, dst, kind };
    CqaGraph::from_edges(
        NodeCounts {
            questions: 2,
            users: 2,
            tags: 1,
        },
        [
            e(u0, q0, EdgeKind::Asked),
            e(u1, q0, EdgeKind::Answered),
            e(u1, q1, EdgeKind::Asked),
            e(u0, q1, EdgeKind::Answered),
            e(q0, t0, EdgeKind::Tagged),
            e(q1, t0, EdgeKind::Tagged),
        ],
    )
    .unwrap()
}

/// Largest gap between empirical second-order transition frequencies of a
/// `steps`-long walk and the biased-walk formula.
pub fn walk_deviation(p: f64, q: f64, steps: usize, seed: u64) -> f64 {
    let g = walk_graph();
    let n = g.node_count();
    // adjacency from the edge list, independent of the graph's own lists
    let mut adj = vec![BTreeSet::new(); n];
    for e in g.edges() {
        let (a, b) = (g.global(e.src), g.global(e.dst));
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let expected = |prev: usize, cur: usize| -> BTreeMap<usize, f64> {
        let w: Vec<(usize, f64)> = adj[cur]
            .iter()
            .map(|&x| {
                let w = if x == prev {
                    1.0 / p
                } else if adj[prev].contains(&x) {
                    1.0
                } else {
                    1.0 / q
                };
                (x, w)
            })
            .collect();
        let total: f64 = w.iter().map(|p| p.1).sum();
        w.into_iter().map(|(x, v)| (x, v / total)).collect()
    };
    let mut r = rng(seed);
    let mut walker = Walker::new(&g, p, q, 64);
    let mut counts: BTreeMap<(usize, usize), BTreeMap<usize, usize>> = BTreeMap::new();
    let (mut prev, mut cur) = (None, 0usize);
    for _ in 0..steps {
        let next = walker.step(prev, cur, &mut r).expect("connected graph");
        if let Some(pv) = prev {
            *counts.entry((pv, cur)).or_default().entry(next).or_default() += 1;
        }
        prev = Some(cur);
        cur = next;
    }
    let mut worst = 0.0f64;
    for ((pv, c), seen) in &counts {
        let total: usize = seen.values().sum();
        for (x, want) in expected(*pv, *c) {
            let got = *seen.get(&x).unwrap_or(&0) as f64 / total as f64;
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

/// Worst position of `truth` over every ordering consistent with the
/// scores (all tie permutations), by enumeration.
pub fn brute_force_rank(scores: &[f64], truth: usize) -> usize {
    fn permute(items: &mut Vec<usize>, k: usize, scores: &[f64], truth: usize, worst: &mut usize) {
        if k == items.len() {
            if items.windows(2).all(|w| scores[w[0]] >= scores[w[1]]) {
                let pos = items.iter().position(|&i| i == truth).unwrap() + 1;
                *worst = (*worst).max(pos);
            }
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, scores, truth, worst);
            items.swap(k, i);
        }
    }
    let mut items: Vec<usize> = (0..scores.len()).collect();
    let mut worst = 0;
    permute(&mut items, 0, scores, truth, &mut worst);
    worst
}

#[derive(Debug)]
pub struct MetricOracleReport {
    pub instances: usize,
    pub rank_mismatches: usize,
    pub metrics_exact: bool,
}

/// Random instances with tied integer scores; ranks and all four metrics
/// against enumeration and hand-written means.
pub fn metric_oracle(instances: usize) -> MetricOracleReport {
    let mut r = rng(4242);
    let mut ranks = Vec::new();
    let mut sizes = Vec::new();
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = r.random_range(2..=7);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        let truth = r.random_range(0..n);
        let cands: Vec<NodeId> = (0..n as u32).map(NodeId::user).collect();
        let res = endcold_core::route::RoutingResult {
            context: endcold_core::route::RouteContext {
                tags: vec![NodeId::tag(0)],
                asker: None,
            },
            ranked: rank_candidates(&cands, &scores),
            best: NodeId::user(0),
        };
        let got = rank_of_best(&res, NodeId::user(truth as u32)).unwrap();
        let want = brute_force_rank(&scores, truth);
        if got != want {
            mismatches += 1;
        }
        ranks.push(want);
        sizes.push(n);
    }
    let m = ranks.len() as f64;
    let p = |k: usize| ranks.iter().filter(|&&x| x <= k).count() as f64 / m;
    let acc = ranks
        .iter()
        .zip(&sizes)
        .map(|(&x, &c)| (c - x) as f64 / (c - 1) as f64)
        .sum::<f64>()
        / m;
    let mrr = ranks.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / m;
    let exact = precision_at_k(&ranks, 1) == p(1)
        && precision_at_k(&ranks, 3) == p(3)
        && accuracy(&ranks, &sizes).unwrap() == acc
        && mean_reciprocal_rank(&ranks) == mrr;
    MetricOracleReport {
        instances,
        rank_mismatches: mismatches,
        metrics_exact: exact,
    }
}

/// Precision@3 and accuracy of a scorer that ignores its input, on
/// `questions` pools of 10.
pub fn uniform_random_scorer(questions: usize) -> (f64, f64) {
    let mut r = rng(99);
    let mut ranks = Vec::with_capacity(questions);
    let cands: Vec<NodeId> = (0..10).map(NodeId::user).collect();
    for _ in 0..questions {
        let scores: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
        let truth = NodeId::user(r.random_range(0..10));
        let res = endcold_core::route::RoutingResult {
            context: endcold_core::route::RouteContext {
                tags: vec![NodeId::tag(0)],
                asker: None,
            },
            ranked: rank_candidates(&cands, &scores),
            best: NodeId::user(0),
        };
        ranks.push(rank_of_best(&res, truth).unwrap());
    }
    (precision_at_k(&ranks, 3), accuracy(&ranks, &vec![10; questions]).unwrap())
}

/// A small end-to-end model with random parameters: features of width 5,
/// output width 4, MLP 16-7-5-3-1.
pub fn random_endcold(counts: NodeCounts, seed: u64) -> EndColdModel {
    let mut r = rng(seed);
    let d = 5;
    let gcn = [
        random_tensor(&mut r, counts.total(), d),
        random_tensor(&mut r, d, d),
        random_tensor(&mut r, 1, d),
        random_tensor(&mut r, d, 4),
        random_tensor(&mut r, 1, 4),
    ];
    let mlp = Mlp::new(&[16, 7, 5, 3, 1], &mut r).unwrap();
    EndColdModel::from_parts(counts, gcn, mlp).unwrap()
}

#[derive(Debug, Default)]
pub struct ColdReport {
    pub instances: usize,
    /// Known-asker versus new-asker scores that differ.
    pub asker_violations: usize,
    /// Questions where never-seen candidates did not all tie.
    pub unseen_violations: usize,
    /// Base graphs whose hash or contents changed.
    pub mutations: usize,
}

/// Checks the cold-start contracts on `n` random graphs with random models.
pub fn cold_contracts(n: usize) -> ColdReport {
    let mut rep = ColdReport::default();
    let mut r = rng(777);
    while rep.instances < n {
        let (g, _) = random_graph(&mut r);
        let counts = g.counts();
        let tags: Vec<NodeId> = (0..counts.tags as u32)
            .map(NodeId::tag)
            .filter(|&t| g.is_connected_node(t))
            .collect();
        if tags.is_empty() {
            continue;
        }
        rep.instances += 1;
        let model = random_endcold(counts, r.random());
        let mut chosen = tags.clone();
        chosen.shuffle(&mut r);
        chosen.truncate(r.random_range(1..=tags.len().min(3)));
        let (hash, copy) = (g.structural_hash(), g.clone());
        let _ = attach_cold_question(&g, &chosen, Some(NodeId::user(0)), UnknownTagPolicy::Drop).unwrap();

        let beyond = counts.users as u32;
        let known: Vec<NodeId> = (0..counts.users as u32).map(NodeId::user).collect();
        let unseen: Vec<NodeId> = (beyond..beyond + 4).map(NodeId::user).collect();
        let pool: Vec<NodeId> = known.iter().chain(&unseen).copied().collect();
        let none = score_cold(&model, &g, &chosen, None, &pool, UnknownTagPolicy::Drop).unwrap();
        let isolated = known.iter().copied().find(|&u| !g.is_connected_node(u));
        for asker in [Some(NodeId::user(beyond + 10)), isolated].into_iter().flatten() {
            let s = score_cold(&model, &g, &chosen, Some(asker), &pool, UnknownTagPolicy::Drop).unwrap();
            if s.scores != none.scores {
                rep.asker_violations += 1;
            }
        }
        let tail = &none.scores[known.len()..];
        if tail.iter().any(|&s| s != tail[0]) {
            rep.unseen_violations += 1;
        }
        if g.structural_hash() != hash || g != copy {
            rep.mutations += 1;
        }
    }
    rep
}

#[derive(Debug)]
pub struct SparsityReport {
    pub stats: CorpusStats,
    pub questions: usize,
    pub cases: usize,
    pub pairs: usize,
    pub single_answer_questions: usize,
    /// Constraints derived from single-answer questions (should be none).
    pub single_answer_pairs: usize,
    pub trained: Result<(), String>,
}

impl SparsityReport {
    pub fn pairs_per_question(&self) -> f64 {
        self.pairs as f64 / self.questions as f64
    }

    pub fn cases_per_question(&self) -> f64 {
        self.cases as f64 / self.questions as f64
    }
}

/// Generates a corpus where most questions have a single answer, derives pairs and
/// trains the pairwise ranker on small walk embeddings.
pub fn sparse_answer_pairs(seed: u64) -> SparsityReport {
    let cfg = SynthConfig {
        n_users: 300,
        n_questions: 2000,
        n_tags: 30,
        answers_per_question_mean: 1.8122,
        single_answer_fraction: Some(0.5803),
        seed,
        ..SynthConfig::default()
    };
    let s = generate(&cfg).unwrap();
    let stats = s.corpus.stats();
    let mut answers: BTreeMap<NodeId, usize> = BTreeMap::new();
    for rec in &s.corpus.records {
        *answers.entry(rec.question).or_default() += 1;
    }
    let dataset = Dataset::all_train(s.corpus);
    let cases = dataset.training_cases();
    let pairs = derive_pairs(&cases);
    let single_answer_pairs = pairs.iter().filter(|p| answers[&p.q] == 1).count();
    let graph = build_graph(&dataset.corpus.records).unwrap();
    let walk = WalkConfig {
        dim: 16,
        walk_length: 20,
        walks_per_node: 2,
        window: 3,
        seed,
        ..WalkConfig::default()
    };
    let hyper = SeqHyper {
        epochs: 5,
        seed,
        ..SeqHyper::default()
    };
    let trained = embed_graph(&graph, &walk)
        .and_then(|table| fit_seq_pairwise(&dataset, &table, Variant::TA, &hyper))
        .map(|_| ())
        .map_err(|e| e.to_string());
    SparsityReport {
        stats,
        questions: answers.len(),
        cases: cases.len(),
        pairs: pairs.len(),
        single_answer_questions: answers.values().filter(|&&n| n == 1).count(),
        single_answer_pairs,
        trained,
    }
}
