//! Multiple-shooting prediction losses. Every section starts from the
//! encoder estimate at its first sample and runs the innovation predictor
//! over `horizon` samples; sections of a batch are the rows of one graph.

use std::collections::BTreeSet;

use crate::autodiff::{Gradients, Graph, Parameters, Tensor, Var};
use crate::data::Series;
use crate::encoder::{legal_starts, Encoder};
use crate::error::{Error, Result};
use crate::model::KoopmanModel;

pub const MODEL_PREFIX: &str = "model.";
pub const ENCODER_PREFIX: &str = "encoder.";

fn check_starts(series: &Series, lag: usize, horizon: usize, ks: &[usize]) -> Result<()> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if ks.is_empty() {
        return Err(Error::Data("empty set of section starts".into()));
    }
    let legal = legal_starts(series.len(), lag, horizon);
    if let Some(k) = ks.iter().find(|k| !legal.contains(k)) {
        return Err(Error::Data(format!(
            "section start {k} outside legal range {}..{} (lag {lag}, horizon {horizon}, {} samples)",
            legal.start,
            legal.end,
            series.len()
        )));
    }
    Ok(())
}

fn check_dims(model: &KoopmanModel, encoder: &Encoder, series: &Series) -> Result<()> {
    if encoder.n_z() != model.n_z()
        || encoder.n_u() != model.n_u()
        || encoder.n_y() != model.n_y()
        || series.n_u() != model.n_u()
        || series.n_y() != model.n_y()
    {
        return Err(Error::Dimension(format!(
            "model (n_z={}, n_u={}, n_y={}), encoder (n_z={}, n_u={}, n_y={}) and data (n_u={}, n_y={}) disagree",
            model.n_z(),
            model.n_u(),
            model.n_y(),
            encoder.n_z(),
            encoder.n_u(),
            encoder.n_y(),
            series.n_u(),
            series.n_y()
        )));
    }
    Ok(())
}

fn rows_at(series: &Series, ks: &[usize], offset: usize, output: bool) -> Result<Tensor> {
    let width = if output { series.n_y() } else { series.n_u() };
    let mut data = Vec::with_capacity(ks.len() * width);
    for &k in ks {
        let r = if output {
            series.y_at(k + offset)
        } else {
            series.u_at(k + offset)
        };
        data.extend_from_slice(r);
    }
    Tensor::matrix(ks.len(), width, data)
}

/// Graph of the mean section loss over `ks`. Returns the graph, the loss
/// node and the per-step prediction nodes (`ks.len() × n_y` each).
pub(crate) fn sections_graph(
    model: &KoopmanModel,
    encoder: &Encoder,
    series: &Series,
    ks: &[usize],
    horizon: usize,
    trainable: bool,
) -> Result<(Graph, Var, Vec<Var>)> {
    check_dims(model, encoder, series)?;
    check_starts(series, encoder.lag(), horizon, ks)?;
    let mut g = Graph::new();
    let bm = model.bind(&mut g, MODEL_PREFIX, trainable)?;
    let be = encoder.bind(&mut g, ENCODER_PREFIX, trainable)?;
    let windows = g.constant(encoder.batch_input(series, ks)?);
    let mut z = be.encode(&mut g, windows)?;
    let mut total: Option<Var> = None;
    let mut preds = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let y = g.constant(rows_at(series, ks, tau, true)?);
        let (y_hat, e) = if tau + 1 < horizon {
            let u = g.constant(rows_at(series, ks, tau, false)?);
            let (next, y_hat, e) = bm.innovation_step(&mut g, z, u, y)?;
            z = next;
            (y_hat, e)
        } else {
            let y_hat = bm.output(&mut g, z)?;
            (y_hat, g.sub(y, y_hat)?)
        };
        preds.push(y_hat);
        let sq = g.square(e)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.expect("horizon ≥ 1");
    let loss = g.scale(total, 1.0 / (ks.len() * horizon) as f64)?;
    Ok((g, loss, preds))
}

/// Loss of one section and its predictions `ŷ_{k+τ|k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SectionLoss {
    pub loss: f64,
    pub predictions: Vec<Vec<f64>>,
}

/// `(1/T) Σ_τ ‖y_{k+τ} − ŷ_{k+τ|k}‖²` for the section starting at `k`.
pub fn section_loss(
    model: &KoopmanModel,
    encoder: &Encoder,
    series: &Series,
    k: usize,
    horizon: usize,
) -> Result<SectionLoss> {
    let (g, loss, preds) = sections_graph(model, encoder, series, &[k], horizon, false)?;
    Ok(SectionLoss {
        loss: g.value(loss).data()[0],
        predictions: preds.iter().map(|&p| g.value(p).data().to_vec()).collect(),
    })
}

fn check_distinct(ks: &[usize]) -> Result<()> {
    let set: BTreeSet<_> = ks.iter().collect();
    if set.len() != ks.len() {
        return Err(Error::Data("section starts within a batch must be distinct".into()));
    }
    Ok(())
}

/// Sum of squares over every model and encoder parameter.
pub fn parameter_norm_sq(model: &KoopmanModel, encoder: &Encoder) -> f64 {
    model.sum_squares() + encoder.sum_squares()
}

/// Mean section loss over `ks` plus `l2 · ‖θ, η‖²`.
pub fn batch_loss(
    model: &KoopmanModel,
    encoder: &Encoder,
    series: &Series,
    ks: &[usize],
    horizon: usize,
    l2: f64,
) -> Result<f64> {
    check_distinct(ks)?;
    let (g, loss, _) = sections_graph(model, encoder, series, ks, horizon, false)?;
    let mut v = g.value(loss).data()[0];
    if l2 > 0.0 {
        v += l2 * parameter_norm_sq(model, encoder);
    }
    Ok(v)
}

/// [`batch_loss`] and its gradient, keyed `model.*` / `encoder.*`.
pub fn batch_loss_grad(
    model: &KoopmanModel,
    encoder: &Encoder,
    series: &Series,
    ks: &[usize],
    horizon: usize,
    l2: f64,
) -> Result<(f64, Gradients)> {
    check_distinct(ks)?;
    let (g, loss, _) = sections_graph(model, encoder, series, ks, horizon, true)?;
    let mut v = g.value(loss).data()[0];
    let mut grads = g.backward(loss)?;
    if l2 > 0.0 {
        v += l2 * parameter_norm_sq(model, encoder);
        let mut add = |prefix: &str, p: &dyn Parameters| {
            p.visit_params(prefix, &mut |name, t| {
                if let Some(gr) = grads.get_mut(name) {
                    for (gi, pi) in gr.data_mut().iter_mut().zip(t.data()) {
                        *gi += 2.0 * l2 * pi;
                    }
                }
            })
        };
        add(MODEL_PREFIX, model);
        add(ENCODER_PREFIX, encoder);
    }
    Ok((v, grads))
}

/// Mean section loss over every legal start of `series`, i.e. the sum of
/// squared prediction errors normalized by `(number of sections)·horizon`.
/// Evaluated in chunks of `chunk` sections, without gradients.
pub fn encoder_loss(
    model: &KoopmanModel,
    encoder: &Encoder,
    series: &Series,
    horizon: usize,
    chunk: usize,
) -> Result<f64> {
    let ks: Vec<usize> = legal_starts(series.len(), encoder.lag(), horizon).collect();
    if ks.is_empty() {
        return Err(Error::Data(format!(
            "series of {} samples has no section of horizon {horizon} with lag {}",
            series.len(),
            encoder.lag()
        )));
    }
    let mut sse = 0.0;
    for part in ks.chunks(chunk.max(1)) {
        let (g, loss, _) = sections_graph(model, encoder, series, part, horizon, false)?;
        sse += g.value(loss).data()[0] * part.len() as f64;
    }
    Ok(sse / ks.len() as f64)
}
