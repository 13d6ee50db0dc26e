//! Mini-batch training loop shared by the detector and the translator.
//!
//! Batches are filled up to a token budget from a seeded shuffle. Each batch
//! is cut into fixed-size chunks; chunks are differentiated in parallel and
//! their gradients summed in chunk order, so the trajectory is the same for
//! any thread count.

use std::time::Instant;

use homonmt_nnet::{
    adam_step, AdamState, Gradients, Graph, NnetError, ParamStore, Var, WarmupSchedule,
};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Examples per gradient chunk.
const GRAIN: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Source plus target tokens per batch.
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    /// Stop after this many epochs without a held-out improvement.
    pub patience: Option<usize>,
    #[serde(skip)]
    pub verbose: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_tokens: 1024,
            learning_rate: 3e-4,
            warmup_steps: 200,
            seed: 1,
            patience: None,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub steps: u64,
}

/// Sizes of one training example.
pub trait Example {
    /// Tokens counted against the batch budget.
    fn tokens(&self) -> usize;
    /// Positions contributing to the loss.
    fn targets(&self) -> usize;
}

/// Loss of one example as a graph node, divided by `denom`.
pub trait LossFn<E>: Fn(&mut Graph, &E, f64) -> homonmt_nnet::Result<Var> + Sync {}
impl<E, F: Fn(&mut Graph, &E, f64) -> homonmt_nnet::Result<Var> + Sync> LossFn<E> for F {}

fn batches<E: Example>(examples: &[E], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for &i in order {
        let n = examples[i].tokens();
        if !current.is_empty() && used + n > budget {
            out.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += n;
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Mean per-position loss over `examples` in evaluation mode.
pub fn evaluate_loss<E: Example + Sync, F: LossFn<E>>(
    params: &ParamStore,
    examples: &[E],
    loss: &F,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let parts: Vec<homonmt_nnet::Result<f64>> = examples
        .par_iter()
        .map(|e| {
            let mut g = Graph::new(params);
            let l = loss(&mut g, e, 1.0)?;
            Ok(g.value(l).item())
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    let positions: usize = examples.iter().map(Example::targets).sum();
    Ok(total / positions.max(1) as f64)
}

/// Trains `params` in place and leaves the parameters of the epoch with the
/// lowest held-out loss (the last epoch when `valid` is empty).
pub fn fit<E, F>(
    params: &mut ParamStore,
    train: &[E],
    valid: &[E],
    dropout: f64,
    opts: &TrainOptions,
    loss: F,
) -> Result<TrainReport>
where
    E: Example + Sync,
    F: LossFn<E>,
{
    if train.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    let schedule = WarmupSchedule {
        base: opts.learning_rate,
        warmup: opts.warmup_steps,
    };
    let mut state = AdamState::new(params, opts.learning_rate);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut seed::stream(opts.seed, seed::SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in batches(train, &order, opts.batch_tokens) {
            let denom = batch
                .iter()
                .map(|&i| train[i].targets())
                .sum::<usize>()
                .max(1) as f64;
            let snapshot: &ParamStore = params;
            let chunks: Vec<homonmt_nnet::Result<(Gradients, f64)>> = batch
                .par_chunks(GRAIN)
                .map(|chunk| {
                    let mut grads = Gradients::new(snapshot.len());
                    let mut total = 0.0;
                    for &i in chunk {
                        let key = (epoch as u64) << 32 | i as u64;
                        let rng = seed::stream(opts.seed, seed::DROPOUT, key);
                        let mut g = Graph::training(snapshot, dropout, rng);
                        let l = loss(&mut g, &train[i], denom)?;
                        total += g.value(l).item();
                        grads.merge(g.backward(l));
                    }
                    Ok((grads, total))
                })
                .collect();
            let mut grads = Gradients::new(params.len());
            let mut batch_loss = 0.0;
            for c in chunks {
                let (g, l) = c?;
                grads.merge(g);
                batch_loss += l;
            }
            if !batch_loss.is_finite() {
                return Err(
                    NnetError::Training(format!("non-finite loss in epoch {}", epoch + 1)).into(),
                );
            }
            epoch_loss += batch_loss * denom;
            state.lr = schedule.rate(state.step + 1);
            adam_step(params, &grads, &mut state)?;
        }
        let positions: usize = train.iter().map(Example::targets).sum();
        let train_loss = epoch_loss / positions.max(1) as f64;
        let valid_loss = evaluate_loss(params, valid, &loss)?;
        if opts.verbose {
            eprintln!(
                "epoch {:>3}  train {:.4}  valid {:.4}  {:.1}s",
                epoch + 1,
                train_loss,
                valid_loss,
                started.elapsed().as_secs_f64()
            );
        }
        epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            valid_loss,
        });
        let improved = valid.is_empty() || best.as_ref().is_none_or(|(_, b, _)| valid_loss < *b);
        if improved {
            best = Some((epoch + 1, valid_loss, params.clone()));
        } else if let (Some(p), Some((b, _, _))) = (opts.patience, &best) {
            if epoch + 1 - b >= p {
                break;
            }
        }
    }
    let (best_epoch, best_valid_loss) = match best {
        Some((epoch, loss, best_params)) => {
            *params = best_params;
            (epoch, loss)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_valid_loss,
        steps: state.step,
    })
}
