use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::{self, adam_step, AdamConfig, AdamState, Mlp, Tape, Tensor};
use crate::model::Quad;
use crate::seq::{assemble_batch, assemble_into, FeatureSpec, PairConstraint, Variant};
use crate::textio::{write_tensor, LineReader};
use crate::walkembed::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    /// Linear model under the epsilon-insensitive loss.
    LinearEps,
    /// MLP under mean squared error.
    Mlp,
    /// Linear scorer trained on pair hinge constraints.
    Pairwise,
}

impl RegressorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegressorKind::LinearEps => "linear_eps",
            RegressorKind::Mlp => "mlp",
            RegressorKind::Pairwise => "pairwise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_eps" | "linear" => Some(RegressorKind::LinearEps),
            "mlp" => Some(RegressorKind::Mlp),
            "pairwise" => Some(RegressorKind::Pairwise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqHyper {
    /// Width of the insensitive tube of the linear regressor.
    pub eps_ins: f64,
    /// L2 weight on the linear weights (not the bias).
    pub lambda: f64,
    /// Pair hinge margin.
    pub margin: f64,
    pub hidden: [usize; 3],
    /// Initial Adam step; decays linearly to a hundredth over training.
    pub step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SeqHyper {
    fn default() -> Self {
        SeqHyper {
            eps_ins: 0.1,
            lambda: 1e-4,
            margin: 1.0,
            hidden: [256, 128, 64],
            step_size: 1e-3,
            epochs: 50,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl SeqHyper {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("epochs, batch size and widths must be positive".into()));
        }
        let finite_nonneg = [self.eps_ins, self.lambda, self.margin].iter().all(|v| *v >= 0.0 && v.is_finite());
        if !finite_nonneg || !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("seq hyper-parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Linear { w: Tensor, b: Tensor },
    Mlp(Mlp),
    Pairwise { w: Tensor },
}

/// A trained scorer together with the feature layout it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    spec: FeatureSpec,
    params: Params,
}

impl RegressorModel {
    pub fn spec(&self) -> FeatureSpec {
        self.spec
    }

    pub fn kind(&self) -> RegressorKind {
        match self.params {
            Params::Linear { .. } => RegressorKind::LinearEps,
            Params::Mlp(_) => RegressorKind::Mlp,
            Params::Pairwise { .. } => RegressorKind::Pairwise,
        }
    }

    /// Linear weights (`None` for the MLP).
    pub fn linear_weights(&self) -> Option<(&Tensor, f64)> {
        match &self.params {
            Params::Linear { w, b } => Some((w, b.item())),
            Params::Pairwise { w } => Some((w, 0.0)),
            Params::Mlp(_) => None,
        }
    }

    /// Builds a pairwise linear scorer from explicit weights.
    pub fn pairwise_from_weights(spec: FeatureSpec, w: Vec<f64>) -> Result<Self> {
        let w = Tensor::from_vec(spec.len(), 1, w)?;
        Ok(RegressorModel {
            spec,
            params: Params::Pairwise { w },
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.cols() != self.spec.len() {
            return Err(Error::ShapeMismatch {
                op: "regressor predict",
                left: x.shape(),
                right: (x.rows(), self.spec.len()),
            });
        }
        let out = match &self.params {
            Params::Linear { w, b } => grad::add_bias(&grad::matmul(x, w)?, b)?,
            Params::Mlp(m) => m.predict(x)?,
            Params::Pairwise { w } => grad::matmul(x, w)?,
        };
        Ok(out.into_data())
    }

    pub fn predict_quads(&self, table: &EmbeddingTable, quads: &[Quad]) -> Result<Vec<f64>> {
        self.predict(&assemble_batch(table, quads, self.spec)?)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seqmodel v1 {} {} {}", self.spec.variant, self.kind().as_str(), self.spec.dim)?;
        match &self.params {
            Params::Linear { w, b } => {
                write_tensor(&mut out, "w", w)?;
                write_tensor(&mut out, "b", b)?;
            }
            Params::Pairwise { w } => write_tensor(&mut out, "w", w)?,
            Params::Mlp(m) => {
                writeln!(out, "layers {}", m.layers().count())?;
                for (i, (w, b)) in m.layers().enumerate() {
                    write_tensor(&mut out, &format!("mlp_w{i}"), w)?;
                    write_tensor(&mut out, &format!("mlp_b{i}"), b)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut r = LineReader::new(input);
        let f = r.expect_fields("seqmodel")?;
        if f.len() != 5 || f[1] != "v1" {
            return Err(Error::format("bad seqmodel header"));
        }
        let variant = Variant::parse(&f[2]).ok_or_else(|| Error::format(format!("unknown variant `{}`", f[2])))?;
        let kind = RegressorKind::parse(&f[3]).ok_or_else(|| Error::format(format!("unknown kind `{}`", f[3])))?;
        let spec = FeatureSpec::new(variant, r.parse_field(&f[4])?);
        let params = match kind {
            RegressorKind::LinearEps => Params::Linear {
                w: r.read_tensor("w")?,
                b: r.read_tensor("b")?,
            },
            RegressorKind::Pairwise => Params::Pairwise { w: r.read_tensor("w")? },
            RegressorKind::Mlp => {
                let f = r.expect_fields("layers")?;
                let n: usize = r.parse_field(f.get(1).map(String::as_str).unwrap_or(""))?;
                let mut ws = Vec::with_capacity(n);
                let mut bs = Vec::with_capacity(n);
                for i in 0..n {
                    ws.push(r.read_tensor(&format!("mlp_w{i}"))?);
                    bs.push(r.read_tensor(&format!("mlp_b{i}"))?);
                }
                Params::Mlp(Mlp::from_parts(ws, bs)?)
            }
        };
        let model = RegressorModel { spec, params };
        let (rows, cols) = match &model.params {
            Params::Linear { w, .. } | Params::Pairwise { w } => w.shape(),
            Params::Mlp(m) => (m.input_dim(), *m.dims().last().expect("layers")),
        };
        if rows != spec.len() || cols != 1 {
            return Err(Error::format("seqmodel weights do not match the feature layout"));
        }
        Ok(model)
    }
}

/// Minibatch Adam with a linearly decaying step. `f` returns the batch loss
/// and one gradient per parameter tensor.
fn adam_loop<M>(
    model: &mut M,
    params_of: fn(&M) -> Vec<&Tensor>,
    params_mut_of: fn(&mut M) -> Vec<&mut Tensor>,
    items: usize,
    hyper: &SeqHyper,
    mut f: impl FnMut(&M, &[usize]) -> Result<(f64, Vec<Tensor>)>,
) -> Result<Vec<f64>> {
    let mut state = AdamState::new(params_of(model));
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..items).collect();
    let total_steps = hyper.epochs * items.div_ceil(hyper.batch_size);
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            let (loss, grads) = f(model, batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("seq loss is {loss} in epoch {epoch}")));
            }
            let cfg = AdamConfig {
                step_size: hyper.step_size * (1.0 - 0.99 * step as f64 / total_steps as f64),
                ..AdamConfig::default()
            };
            adam_step(&mut params_mut_of(model), &grads, &mut state, &cfg)?;
            step += 1;
            total += loss;
            batches += 1;
        }
        trace.push(total / batches as f64);
    }
    Ok(trace)
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

fn check_examples(x: &Tensor, y: &[f64], spec: FeatureSpec) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput("no training examples".into()));
    }
    if x.rows() != y.len() || x.cols() != spec.len() {
        return Err(Error::ShapeMismatch {
            op: "train_pointwise",
            left: x.shape(),
            right: (y.len(), spec.len()),
        });
    }
    Ok(())
}

/// Fits a pointwise regressor from feature rows to vote scores. Returns the
/// model and the per-epoch mean loss.
pub fn train_pointwise(
    x: &Tensor,
    y: &[f64],
    spec: FeatureSpec,
    kind: RegressorKind,
    hyper: &SeqHyper,
) -> Result<(RegressorModel, Vec<f64>)> {
    hyper.validate()?;
    check_examples(x, y, spec)?;
    let target = |idx: &[usize]| Arc::new(Tensor::from_vec(idx.len(), 1, idx.iter().map(|&i| y[i]).collect()).expect("column"));
    match kind {
        RegressorKind::LinearEps => {
            let mut p = vec![Tensor::zeros(spec.len(), 1), Tensor::zeros(1, 1)];
            let trace = adam_loop(
                &mut p,
                |p| p.iter().collect(),
                |p| p.iter_mut().collect(),
                x.rows(),
                hyper,
                |p, idx| {
                    let mut tape = Tape::new();
                    let (w, b) = (tape.param(p[0].clone()), tape.param(p[1].clone()));
                    let xb = tape.constant(rows(x, idx));
                    let z = tape.matmul(xb, w)?;
                    let pred = tape.add_bias(z, b)?;
                    let fit = tape.eps_insensitive(pred, target(idx), hyper.eps_ins)?;
                    let ww = tape.sum_squares(w)?;
                    let reg = tape.scale(ww, hyper.lambda)?;
                    let loss = tape.add(fit, reg)?;
                    let g = tape.backward(loss)?;
                    Ok((tape.value(loss).item(), vec![g.wrt(w), g.wrt(b)]))
                },
            )?;
            let b = p.pop().expect("bias");
            let w = p.pop().expect("weights");
            Ok((
                RegressorModel {
                    spec,
                    params: Params::Linear { w, b },
                },
                trace,
            ))
        }
        RegressorKind::Mlp => {
            let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
            let [h1, h2, h3] = hyper.hidden;
            let mut mlp = Mlp::new(&[spec.len(), h1, h2, h3, 1], &mut rng)?;
            let trace = adam_loop(&mut mlp, Mlp::params, Mlp::params_mut, x.rows(), hyper, |m, idx| {
                let mut tape = Tape::new();
                let vars = m.register(&mut tape);
                let xb = tape.constant(rows(x, idx));
                let pred = m.forward(&mut tape, &vars, xb)?;
                let loss = tape.mse(pred, target(idx))?;
                let g = tape.backward(loss)?;
                Ok((tape.value(loss).item(), vars.all().into_iter().map(|v| g.wrt(v)).collect()))
            })?;
            Ok((
                RegressorModel {
                    spec,
                    params: Params::Mlp(mlp),
                },
                trace,
            ))
        }
        RegressorKind::Pairwise => Err(Error::InvalidConfig("pairwise models train on pair constraints".into())),
    }
}

/// `max(0, margin + f(x-) - f(x+))` for a linear scorer, evaluated through
/// the difference `x+ - x-`.
pub fn pair_hinge(w: &[f64], x_plus: &[f64], x_minus: &[f64], margin: f64) -> f64 {
    let s: f64 = w.iter().zip(x_plus.iter().zip(x_minus)).map(|(wi, (p, m))| wi * (p - m)).sum();
    (margin - s).max(0.0)
}

/// Fits the linear ranker on difference rows `x+ - x-`. Loss is the mean
/// pair hinge plus `lambda * |w|^2`.
pub fn train_pairwise(
    constraints: &[PairConstraint],
    table: &EmbeddingTable,
    spec: FeatureSpec,
    hyper: &SeqHyper,
) -> Result<(RegressorModel, Vec<f64>)> {
    hyper.validate()?;
    if constraints.is_empty() {
        return Err(Error::EmptyInput("no pair constraints".into()));
    }
    let mut diffs = Tensor::zeros(constraints.len(), spec.len());
    let mut minus = vec![0.0; spec.len()];
    for (i, c) in constraints.iter().enumerate() {
        let row = diffs.row_mut(i);
        assemble_into(table, &c.quad(c.u_plus), spec, row)?;
        assemble_into(table, &c.quad(c.u_minus), spec, &mut minus)?;
        row.iter_mut().zip(&minus).for_each(|(p, m)| *p -= m);
    }
    train_pairwise_diffs(&diffs, spec, hyper)
}

/// [`train_pairwise`] on precomputed difference rows.
pub(crate) fn train_pairwise_diffs(diffs: &Tensor, spec: FeatureSpec, hyper: &SeqHyper) -> Result<(RegressorModel, Vec<f64>)> {
    if diffs.data().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("every pair has identical features".into()));
    }
    let mut p = vec![Tensor::zeros(spec.len(), 1)];
    let trace = adam_loop(
        &mut p,
        |p| p.iter().collect(),
        |p| p.iter_mut().collect(),
        diffs.rows(),
        hyper,
        |p, idx| {
            let mut tape = Tape::new();
            let w = tape.param(p[0].clone());
            let d = tape.constant(rows(diffs, idx));
            let s = tape.matmul(d, w)?;
            let zero = tape.constant(Tensor::zeros(idx.len(), 1));
            let sum = tape.hinge(s, zero, hyper.margin)?;
            let fit = tape.scale(sum, 1.0 / idx.len() as f64)?;
            let ww = tape.sum_squares(w)?;
            let reg = tape.scale(ww, hyper.lambda)?;
            let loss = tape.add(fit, reg)?;
            let g = tape.backward(loss)?;
            Ok((tape.value(loss).item(), vec![g.wrt(w)]))
        },
    )?;
    let w = p.pop().expect("weights");
    Ok((
        RegressorModel {
            spec,
            params: Params::Pairwise { w },
        },
        trace,
    ))
}
