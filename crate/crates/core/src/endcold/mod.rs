//! The end-to-end model: trainable node features, a two-layer GCN encoder
//! and an MLP regressor over (question, answerer, asker, mean tag) rows,
//! trained jointly.

mod cold;
mod train;

pub use cold::{predict_cold, score_cold, ColdScores};
pub use train::{fit, Objective};

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::{self, Mlp, MlpVars, SparseMatrix, Tape, Tensor, Var};
use crate::graph::{CqaGraph, NormalizedAdjacency};
use crate::model::{NodeCounts, NodeId, NodeKind, Quad};
use crate::textio::{write_tensor, LineReader};

#[derive(Debug, Clone, PartialEq)]
pub struct EndColdConfig {
    /// Input feature width.
    pub d0: usize,
    pub d1: usize,
    /// Output embedding width; the regressor sees `4 * d2` features.
    pub d2: usize,
    pub hidden: [usize; 3],
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Hide each minibatch's questions from their answerers (and zero their
    /// input rows) while training, so training questions look like cold ones.
    pub cold_start: bool,
}

impl Default for EndColdConfig {
    fn default() -> Self {
        EndColdConfig {
            d0: 128,
            d1: 128,
            d2: 128,
            hidden: [256, 128, 64],
            step_size: 1e-3,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            objective: Objective::Mse,
            cold_start: false,
        }
    }
}

impl EndColdConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d0, self.d1, self.d2, self.hidden[0], self.hidden[1], self.hidden[2]];
        if dims.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "endcold widths, epochs and batch size must be positive".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("endcold step size must be positive".into()));
        }
        if let Objective::Pairwise { margin } = self.objective {
            if !(margin >= 0.0 && margin.is_finite()) {
                return Err(Error::InvalidConfig("pairwise margin must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndColdModel {
    counts: NodeCounts,
    x0: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    mlp: Mlp,
}

/// Tape handles for one registration of the model's parameters.
struct Vars {
    x0: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    mlp: MlpVars,
}

impl Vars {
    fn all(&self) -> Vec<Var> {
        let mut v = vec![self.x0, self.w1, self.b1, self.w2, self.b2];
        v.extend(self.mlp.all());
        v
    }
}

/// Row groups selecting each feature slot out of the encoded node matrix.
struct SlotGroups([Arc<Vec<Vec<usize>>>; 4]);

fn slot_groups(counts: NodeCounts, quads: &[Quad]) -> Result<SlotGroups> {
    let idx = |id: NodeId, kind: NodeKind| -> Result<usize> {
        if id.kind != kind || !counts.contains(id) {
            return Err(Error::UnknownNode(id.to_string()));
        }
        Ok(counts.global(id))
    };
    let optional = |id: Option<NodeId>, kind| -> Result<Vec<usize>> { id.map(|n| idx(n, kind)).into_iter().collect() };
    let mut g: [Vec<Vec<usize>>; 4] = Default::default();
    for quad in quads {
        if quad.t.is_empty() {
            return Err(Error::EmptyTagSet);
        }
        g[0].push(optional(quad.q, NodeKind::Question)?);
        g[1].push(vec![idx(quad.u, NodeKind::User)?]);
        g[2].push(optional(quad.a, NodeKind::User)?);
        g[3].push(quad.t.iter().map(|&t| idx(t, NodeKind::Tag)).collect::<Result<_>>()?);
    }
    Ok(SlotGroups(g.map(Arc::new)))
}

impl EndColdModel {
    /// Fresh model over `graph`'s node space. Feature rows of isolated nodes
    /// start (and, receiving no gradient, stay) at zero.
    pub fn new(graph: &CqaGraph, cfg: &EndColdConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = graph.node_count();
        let mut x0 = Tensor::glorot(n, cfg.d0, &mut rng);
        for i in (0..n).filter(|&i| graph.degree(i) == 0) {
            x0.row_mut(i).fill(0.0);
        }
        let w1 = Tensor::glorot(cfg.d0, cfg.d1, &mut rng);
        let w2 = Tensor::glorot(cfg.d1, cfg.d2, &mut rng);
        let [h1, h2, h3] = cfg.hidden;
        let mlp = Mlp::new(&[4 * cfg.d2, h1, h2, h3, 1], &mut rng)?;
        Ok(EndColdModel {
            counts: graph.counts(),
            x0,
            w1,
            b1: Tensor::zeros(1, cfg.d1),
            w2,
            b2: Tensor::zeros(1, cfg.d2),
            mlp,
        })
    }

    pub fn from_parts(counts: NodeCounts, gcn: [Tensor; 5], mlp: Mlp) -> Result<Self> {
        let [x0, w1, b1, w2, b2] = gcn;
        let ok = x0.rows() == counts.total()
            && w1.rows() == x0.cols()
            && b1.shape() == (1, w1.cols())
            && w2.rows() == w1.cols()
            && b2.shape() == (1, w2.cols())
            && mlp.input_dim() == 4 * w2.cols()
            && mlp.dims().last() == Some(&1)
            && mlp.layers().count() == 4;
        if !ok {
            return Err(Error::format("endcold parameter shapes are inconsistent"));
        }
        Ok(EndColdModel {
            counts,
            x0,
            w1,
            b1,
            w2,
            b2,
            mlp,
        })
    }

    pub fn counts(&self) -> NodeCounts {
        self.counts
    }

    pub fn embedding_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Parameter tensors in a fixed order: features, GCN layers, then MLP
    /// weight/bias pairs.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.x0, &self.w1, &self.b1, &self.w2, &self.b2];
        v.extend(self.mlp.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.x0, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
        v.extend(self.mlp.params_mut());
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["x0", "w1", "b1", "w2", "b2"].map(String::from).to_vec();
        for i in 0..self.mlp.layers().count() {
            v.push(format!("mlp_w{i}"));
            v.push(format!("mlp_b{i}"));
        }
        v
    }

    /// Feature matrix over a (possibly larger) node space: rows are copied
    /// by node id and nodes unknown to the model get zero rows.
    pub fn features_for(&self, counts: NodeCounts) -> Tensor {
        let mut x = Tensor::zeros(counts.total(), self.x0.cols());
        for g in 0..self.counts.total() {
            let id = self.counts.node_at(g);
            if counts.contains(id) {
                x.row_mut(counts.global(id)).copy_from_slice(self.x0.row(g));
            }
        }
        x
    }

    fn check_adjacency(&self, rows: usize, adj: &NormalizedAdjacency) -> Result<()> {
        if adj.size() != rows {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: (adj.size(), adj.size()),
                right: (rows, self.x0.cols()),
            });
        }
        Ok(())
    }

    /// `H2 = A relu(A X0 W1 + b1) W2 + b2` for the training node space.
    pub fn encode(&self, adj: &NormalizedAdjacency) -> Result<Tensor> {
        self.encode_features(&self.x0, adj)
    }

    pub fn encode_features(&self, x0: &Tensor, adj: &NormalizedAdjacency) -> Result<Tensor> {
        self.check_adjacency(x0.rows(), adj)?;
        let a = adj.matrix();
        let h1 = grad::relu(&grad::add_bias(&a.spmm(&grad::matmul(x0, &self.w1)?)?, &self.b1)?);
        grad::add_bias(&a.spmm(&grad::matmul(&h1, &self.w2)?)?, &self.b2)
    }

    /// Scores quads against an encoded node matrix over `counts`.
    pub fn predict_encoded(&self, h2: &Tensor, counts: NodeCounts, quads: &[Quad]) -> Result<Vec<f64>> {
        let SlotGroups(g) = slot_groups(counts, quads)?;
        let parts = g.iter().map(|groups| grad::segment_mean(h2, groups)).collect::<Result<Vec<_>>>()?;
        let x = grad::concat_cols(&parts.iter().collect::<Vec<_>>())?;
        Ok(self.mlp.predict(&x)?.into_data())
    }

    /// Scores quads over the training node space.
    pub fn predict(&self, adj: &NormalizedAdjacency, quads: &[Quad]) -> Result<Vec<f64>> {
        let h2 = self.encode(adj)?;
        self.predict_encoded(&h2, self.counts, quads)
    }

    fn register(&self, tape: &mut Tape) -> Vars {
        Vars {
            x0: tape.param(self.x0.clone()),
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
            mlp: self.mlp.register(tape),
        }
    }

    /// Encoder on the tape; `hidden` rows of X0 are replaced by zeros.
    fn encode_on_tape(&self, tape: &mut Tape, v: &Vars, adj: &NormalizedAdjacency, hidden: &[usize]) -> Result<Var> {
        self.check_adjacency(self.x0.rows(), adj)?;
        let a = adj.matrix();
        let x0 = if hidden.is_empty() {
            v.x0
        } else {
            let n = self.x0.rows();
            let mut keep = vec![true; n];
            hidden.iter().for_each(|&i| keep[i] = false);
            let mask = SparseMatrix::from_rows(n, (0..n).map(|i| if keep[i] { vec![(i, 1.0)] } else { vec![] }).collect());
            tape.spmm(&Arc::new(mask), v.x0)?
        };
        let z = tape.matmul(x0, v.w1)?;
        let z = tape.spmm(a, z)?;
        let z = tape.add_bias(z, v.b1)?;
        let h1 = tape.relu(z)?;
        let z = tape.matmul(h1, v.w2)?;
        let z = tape.spmm(a, z)?;
        tape.add_bias(z, v.b2)
    }

    fn score_on_tape(&self, tape: &mut Tape, v: &Vars, h2: Var, quads: &[Quad]) -> Result<Var> {
        let SlotGroups(g) = slot_groups(self.counts, quads)?;
        let parts = g
            .into_iter()
            .map(|groups| tape.segment_mean(h2, groups))
            .collect::<Result<Vec<_>>>()?;
        let x = tape.concat_cols(&parts)?;
        self.mlp.forward(tape, &v.mlp, x)
    }

    /// Mean squared error of the predictions, without the tape.
    pub fn mse_loss(&self, adj: &NormalizedAdjacency, quads: &[Quad], targets: &[f64]) -> Result<f64> {
        let pred = self.predict(adj, quads)?;
        if pred.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                left: (pred.len(), 1),
                right: (targets.len(), 1),
            });
        }
        let n = pred.len().max(1) as f64;
        Ok(pred.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n)
    }

    /// Loss and gradient for every tensor of [`EndColdModel::params`].
    pub fn mse_gradients(&self, adj: &NormalizedAdjacency, quads: &[Quad], targets: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        self.mse_gradients_hiding(adj, quads, targets, &[])
    }

    pub(crate) fn mse_gradients_hiding(
        &self,
        adj: &NormalizedAdjacency,
        quads: &[Quad],
        targets: &[f64],
        hidden: &[usize],
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let h2 = self.encode_on_tape(&mut tape, &vars, adj, hidden)?;
        let pred = self.score_on_tape(&mut tape, &vars, h2, quads)?;
        let target = Arc::new(Tensor::from_vec(targets.len(), 1, targets.to_vec())?);
        let loss = tape.mse(pred, target)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), vars.all().into_iter().map(|v| grads.wrt(v)).collect()))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = self.counts;
        let dims = self.mlp.dims();
        writeln!(out, "endcold v1")?;
        writeln!(
            out,
            "dims {} {} {} {} {} {} {} {} {}",
            c.questions,
            c.users,
            c.tags,
            self.x0.cols(),
            self.w1.cols(),
            self.w2.cols(),
            dims[1],
            dims[2],
            dims[3]
        )?;
        for (name, t) in self.param_names().iter().zip(self.params()) {
            write_tensor(&mut out, name, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut r = LineReader::new(input);
        let header = r.next_line()?;
        if header.trim() != "endcold v1" {
            return Err(Error::format(format!("not an endcold checkpoint: `{header}`")));
        }
        let f = r.expect_fields("dims")?;
        if f.len() != 10 {
            return Err(Error::parse(r.line_number(), "dims line needs nine values"));
        }
        let v = f[1..].iter().map(|s| r.parse_field::<usize>(s)).collect::<Result<Vec<_>>>()?;
        let counts = NodeCounts {
            questions: v[0],
            users: v[1],
            tags: v[2],
        };
        let gcn = ["x0", "w1", "b1", "w2", "b2"]
            .map(|n| r.read_tensor(n))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..4 {
            weights.push(r.read_tensor(&format!("mlp_w{i}"))?);
            biases.push(r.read_tensor(&format!("mlp_b{i}"))?);
        }
        let mlp = Mlp::from_parts(weights, biases)?;
        let gcn: [Tensor; 5] = gcn.try_into().expect("five tensors");
        let model = EndColdModel::from_parts(counts, gcn, mlp)?;
        let d = model.mlp.dims();
        let declared = [model.x0.cols(), model.w1.cols(), model.w2.cols(), d[1], d[2], d[3]];
        if declared[..] != v[3..] {
            return Err(Error::format("dims line disagrees with tensor shapes"));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, Edge, EdgeKind};

    fn tiny_cfg() -> EndColdConfig {
        EndColdConfig {
            d0: 1,
            d1: 1,
            d2: 1,
            hidden: [2, 2, 2],
            ..Default::default()
        }
    }

    fn one_by_one(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    fn identity_mlp() -> Mlp {
        // 4 -> 1 -> 1 -> 1 -> 1 passing through the first feature (kept positive)
        let w0 = Tensor::from_rows(&[vec![1.0], vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let ws = vec![w0, one_by_one(1.0), one_by_one(1.0), one_by_one(1.0)];
        let bs = vec![Tensor::zeros(1, 1); 4];
        Mlp::from_parts(ws, bs).unwrap()
    }

    #[test]
    fn isolated_node_encode() {
        let g = CqaGraph::from_edges(
            NodeCounts {
                questions: 1,
                users: 0,
                tags: 0,
            },
            [],
        )
        .unwrap();
        let adj = normalize(&g);
        let m = EndColdModel::from_parts(
            g.counts(),
            [
                one_by_one(-2.0),
                one_by_one(-3.0),
                one_by_one(0.5),
                one_by_one(4.0),
                one_by_one(0.25),
            ],
            identity_mlp(),
        )
        .unwrap();
        // relu(-2 * -3 + 0.5) * 4 + 0.25
        assert_eq!(m.encode(&adj).unwrap().item(), 6.5 * 4.0 + 0.25);
    }

    #[test]
    fn zero_features_and_biases_encode_to_zero() {
        let g = CqaGraph::from_edges(
            NodeCounts {
                questions: 1,
                users: 1,
                tags: 1,
            },
            [Edge {
                src: NodeId::question(0),
                dst: NodeId::tag(0),
                kind: EdgeKind::Tagged,
            }],
        )
        .unwrap();
        let mut m = EndColdModel::new(
            &g,
            &EndColdConfig {
                d0: 3,
                d1: 4,
                d2: 2,
                ..tiny_cfg()
            },
        )
        .unwrap();
        m.x0 = Tensor::zeros(3, 3);
        let h2 = m.encode(&normalize(&g)).unwrap();
        assert!(h2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_node_hand_forward() {
        // q0 - u0, A = [[.5,.5],[.5,.5]], x0 = [1, 3], w1 = 2, b1 = -1, w2 = 0.5, b2 = 1
        let g = CqaGraph::from_edges(
            NodeCounts {
                questions: 1,
                users: 1,
                tags: 0,
            },
            [Edge {
                src: NodeId::user(0),
                dst: NodeId::question(0),
                kind: EdgeKind::Answered,
            }],
        )
        .unwrap();
        let m = EndColdModel::from_parts(
            g.counts(),
            [
                Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap(),
                one_by_one(2.0),
                one_by_one(-1.0),
                one_by_one(0.5),
                one_by_one(1.0),
            ],
            identity_mlp(),
        )
        .unwrap();
        // x0 w1 = [2, 6]; A -> [4, 4]; + b1 -> [3, 3]; relu; w2 -> [1.5, 1.5]; A -> [1.5, 1.5]; + b2
        let h2 = m.encode(&normalize(&g)).unwrap();
        assert_eq!(h2.data(), &[2.5, 2.5]);
    }

    #[test]
    fn slots_follow_the_feature_contract() {
        let counts = NodeCounts {
            questions: 1,
            users: 2,
            tags: 2,
        };
        let g = CqaGraph::from_edges(counts, []).unwrap();
        let m = EndColdModel::new(&g, &tiny_cfg()).unwrap();
        // h2 rows carry their own global index so gathered slots are readable
        let h2 = Tensor::from_vec(5, 1, vec![10.0, 20.0, 30.0, 40.0, 50.0]).unwrap();
        let quad = |a, t: Vec<NodeId>| Quad {
            q: Some(NodeId::question(0)),
            u: NodeId::user(1),
            a,
            t,
        };
        let SlotGroups(gr) = slot_groups(counts, &[quad(None, vec![NodeId::tag(0)])]).unwrap();
        let slots: Vec<Tensor> = gr.iter().map(|x| grad::segment_mean(&h2, x).unwrap()).collect();
        assert_eq!(slots.iter().map(Tensor::item).collect::<Vec<_>>(), vec![10.0, 30.0, 0.0, 40.0]);
        let SlotGroups(gr) = slot_groups(counts, &[quad(Some(NodeId::user(0)), vec![NodeId::tag(0), NodeId::tag(1)])]).unwrap();
        assert_eq!(grad::segment_mean(&h2, &gr[2]).unwrap().item(), 20.0);
        assert_eq!(grad::segment_mean(&h2, &gr[3]).unwrap().item(), 45.0);
        assert!(matches!(
            m.predict_encoded(&h2, counts, &[quad(None, vec![])]),
            Err(Error::EmptyTagSet)
        ));
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let counts = NodeCounts {
            questions: 2,
            users: 2,
            tags: 1,
        };
        let edges = [
            Edge {
                src: NodeId::user(0),
                dst: NodeId::question(0),
                kind: EdgeKind::Asked,
            },
            Edge {
                src: NodeId::user(1),
                dst: NodeId::question(0),
                kind: EdgeKind::Answered,
            },
            Edge {
                src: NodeId::question(0),
                dst: NodeId::tag(0),
                kind: EdgeKind::Tagged,
            },
            Edge {
                src: NodeId::question(1),
                dst: NodeId::tag(0),
                kind: EdgeKind::Tagged,
            },
        ];
        let g = CqaGraph::from_edges(counts, edges).unwrap();
        let adj = normalize(&g);
        let m = EndColdModel::new(
            &g,
            &EndColdConfig {
                d0: 3,
                d1: 3,
                d2: 2,
                hidden: [4, 3, 2],
                ..Default::default()
            },
        )
        .unwrap();
        let quads = vec![Quad {
            q: Some(NodeId::question(0)),
            u: NodeId::user(1),
            a: Some(NodeId::user(0)),
            t: vec![NodeId::tag(0)],
        }];
        let (loss, grads) = m.mse_gradients(&adj, &quads, &[1.5]).unwrap();
        assert_eq!(loss, m.mse_loss(&adj, &quads, &[1.5]).unwrap());
        assert_eq!(grads.len(), m.params().len());
    }

    #[test]
    fn isolated_rows_start_at_zero() {
        let g = CqaGraph::from_edges(
            NodeCounts {
                questions: 1,
                users: 2,
                tags: 0,
            },
            [Edge {
                src: NodeId::user(0),
                dst: NodeId::question(0),
                kind: EdgeKind::Asked,
            }],
        )
        .unwrap();
        let m = EndColdModel::new(&g, &EndColdConfig { d0: 4, ..tiny_cfg() }).unwrap();
        assert!(m.x0.row(2).iter().all(|&v| v == 0.0));
        assert!(m.x0.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = CqaGraph::from_edges(
            NodeCounts {
                questions: 1,
                users: 1,
                tags: 1,
            },
            [],
        )
        .unwrap();
        let m = EndColdModel::new(
            &g,
            &EndColdConfig {
                d0: 2,
                d1: 3,
                d2: 2,
                hidden: [3, 2, 2],
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = EndColdModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.counts(), m.counts());
        for (a, b) in back.params().iter().zip(m.params()) {
            assert!(a.max_abs_diff(b) < 1e-8);
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }
}
