//! Minibatch training of the projection model through query execution.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::executor::{execute_on_tape, EntitySet};
use crate::fuzzy::FuzzySet;
use crate::kg::EdgeStructure;
use crate::projection::{PreparedEdges, ProjectionModel};
use crate::query::QuerySample;
use crate::rng::{self, Stream};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

fn check_answers(n: usize, answers: &EntitySet) -> Result<()> {
    if answers.is_empty() {
        return Err(Error::Degenerate("empty answer set".into()));
    }
    if answers.len() >= n {
        return Err(Error::Degenerate("every entity is an answer".into()));
    }
    if let Some(bad) = answers.iter().find(|e| e.index() >= n) {
        return Err(Error::Bounds {
            kind: "entity",
            id: bad.index(),
            limit: n,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the answers plus that of the
/// non-answers' complements.
pub fn bce_loss(pred: &FuzzySet, answers: &EntitySet) -> Result<f64> {
    let n = pred.len();
    check_answers(n, answers)?;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (v, &p) in pred.as_slice().iter().enumerate() {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        if answers.contains(&crate::kg::EntityId(v as u32)) {
            pos -= p.ln();
        } else {
            neg -= (1.0 - p).ln();
        }
    }
    Ok(pos / answers.len() as f64 + neg / (n - answers.len()) as f64)
}

/// [`bce_loss`] recorded on the tape for an `n×1` prediction column.
pub fn bce_loss_on_tape(tape: &mut Tape, pred: Var, answers: &EntitySet) -> Result<Var> {
    let n = tape.value(pred).rows();
    check_answers(n, answers)?;
    let (wp, wn) = (-1.0 / answers.len() as f64, -1.0 / (n - answers.len()) as f64);
    let mut pos_w = Matrix::zeros(n, 1);
    let mut neg_w = Matrix::filled(n, 1, wn);
    for a in answers {
        pos_w.set(a.index(), 0, wp);
        neg_w.set(a.index(), 0, 0.0);
    }
    let p = tape.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)?;
    let log_p = tape.log(p)?;
    let q = tape.one_minus(p)?;
    let log_q = tape.log(q)?;
    let pos_w = tape.constant(pos_w)?;
    let neg_w = tape.constant(neg_w)?;
    let a = tape.mul(log_p, pos_w)?;
    let b = tape.mul(log_q, neg_w)?;
    let s = tape.add(a, b)?;
    tape.sum(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stops after this many optimizer steps when set.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
    pub epoch_means: Vec<f64>,
}

/// Mean loss of `batch` recorded on `tape`; numeric failures name the query.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    model: &ProjectionModel,
    edges: &PreparedEdges,
    batch: &[(usize, &QuerySample)],
) -> Result<Var> {
    let bound = model.bind(tape)?;
    let projector = bound.projector(edges);
    let mut total: Option<Var> = None;
    for &(idx, s) in batch {
        let tagged = |e: Error| match e {
            Error::Numeric { op } => Error::Numeric {
                op: format!("query {idx}: {op}"),
            },
            other => other,
        };
        let vars = execute_on_tape(tape, &s.query, &projector).map_err(tagged)?;
        let l = bce_loss_on_tape(tape, vars[s.query.root()], &s.answers()).map_err(tagged)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Usage("empty batch".into()))?;
    tape.scale(total, 1.0 / batch.len() as f64)
}

/// Mean loss over `samples` without touching the parameters.
pub fn mean_loss(model: &ProjectionModel, edges: &PreparedEdges, samples: &[QuerySample]) -> Result<f64> {
    let mut sum = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut tape = Tape::new();
        let l = batch_loss_on_tape(&mut tape, model, edges, &[(i, s)])?;
        sum += tape.value(l).item();
    }
    Ok(sum / samples.len().max(1) as f64)
}

fn validate(samples: &[QuerySample], cfg: &TrainConfig, n: usize) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Usage(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if samples.is_empty() {
        return Err(Error::Usage("no training samples".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if !s.structure.is_training() {
            return Err(Error::Usage(format!(
                "query {i} has structure {}, which is not a training type",
                s.structure
            )));
        }
        check_answers(n, &s.answers()).map_err(|e| Error::Degenerate(format!("query {i}: {e}")))?;
    }
    Ok(())
}

/// Runs Adam over shuffled minibatches. `on_epoch` receives the epoch
/// number (from 1), the model and the epoch's mean loss.
pub fn train(
    model: &mut ProjectionModel,
    edges: &EdgeStructure,
    samples: &[QuerySample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ProjectionModel, f64) -> Result<()>,
) -> Result<TrainReport> {
    validate(samples, cfg, edges.num_entities)?;
    let prepared = PreparedEdges::new(edges)?;
    let adam = Adam::with_lr(cfg.lr);
    let mut rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0usize;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let batch: Vec<(usize, &QuerySample)> = chunk.iter().map(|&i| (i, &samples[i])).collect();
            let mut tape = Tape::new();
            let loss = batch_loss_on_tape(&mut tape, model, &prepared, &batch).map_err(|e| match e {
                Error::Numeric { op } => Error::Numeric {
                    op: format!("epoch {epoch}, batch {b}, {op}"),
                },
                other => other,
            })?;
            let value = tape.value(loss).item();
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut());
            step += 1;
            epoch_sum += value;
            epoch_batches += 1;
            report.losses.push(LossRecord {
                epoch,
                step,
                loss: value,
            });
        }
        if epoch_batches == 0 {
            break 'epochs;
        }
        let mean = epoch_sum / epoch_batches as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        report.epoch_means.push(mean);
        on_epoch(epoch, model, mean)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityId;

    fn answers(ids: &[u32]) -> EntitySet {
        ids.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn bce_examples() {
        let perfect = FuzzySet::new(vec![1.0, 0.0, 0.0]).unwrap();
        let l = bce_loss(&perfect, &answers(&[0])).unwrap();
        assert!((l - (-2.0 * (1.0f64 - 1e-7).ln())).abs() < 1e-15);

        let half = FuzzySet::new(vec![0.5; 6]).unwrap();
        assert!((bce_loss(&half, &answers(&[1, 4])).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);

        let p = FuzzySet::new(vec![0.9, 0.1, 0.2, 0.3]).unwrap();
        let expected = -(0.9f64.ln()) - (0.9f64.ln() + 0.8f64.ln() + 0.7f64.ln()) / 3.0;
        assert!((bce_loss(&p, &answers(&[0])).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.333_753_519_294_749).abs() < 1e-14);
    }

    #[test]
    fn bce_degenerate() {
        let p = FuzzySet::new(vec![0.5; 3]).unwrap();
        assert!(matches!(bce_loss(&p, &answers(&[])), Err(Error::Degenerate(_))));
        assert!(matches!(bce_loss(&p, &answers(&[0, 1, 2])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn tape_loss_matches_scalar() {
        let vals = vec![0.9, 0.1, 0.2, 0.3, 1.0, 0.0];
        let a = answers(&[0, 4]);
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::column(vals.clone())).unwrap();
        let l = bce_loss_on_tape(&mut tape, p, &a).unwrap();
        let scalar = bce_loss(&FuzzySet::new(vals).unwrap(), &a).unwrap();
        assert!((tape.value(l).item() - scalar).abs() < 1e-14);
    }
}
