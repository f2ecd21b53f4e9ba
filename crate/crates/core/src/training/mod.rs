//! Optimization loop with per-epoch validation and model selection.

mod optim;

pub use optim::{clip_global_norm, init_param, lr_schedule, xavier_bound, Adam};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Gradients, Graph, ParamStore};
use crate::config::TrainConfig;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::metrics::{intent_accuracy, ConllEval, F1Score};
use crate::model::{CmNet, Mode, Prediction};

/// Scores of a model on a labeled corpus whose tags use the model's scheme.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub conll: ConllEval,
    pub slot: F1Score,
    pub intent_accuracy: f64,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(model: &CmNet, corpus: &[Utterance]) -> Result<Evaluation> {
    let predictions = corpus
        .iter()
        .map(|u| model.predict(&u.tokens))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<&[String]> = corpus.iter().map(|u| u.slots.as_slice()).collect();
    let pred: Vec<&[String]> = predictions.iter().map(|p| p.slots.as_slice()).collect();
    let conll = ConllEval::evaluate(&gold, &pred, model.config.scheme)?;
    let slot = F1Score {
        precision: conll.total.precision(),
        recall: conll.total.recall(),
        f1: conll.total.f1(),
    };
    let intents: Vec<&[String]> = corpus.iter().map(|u| u.intents.as_slice()).collect();
    let predicted: Vec<String> = predictions.iter().map(|p| p.intent.clone()).collect();
    let accuracy = intent_accuracy(&intents, &predicted)?;
    Ok(Evaluation {
        conll,
        slot,
        intent_accuracy: accuracy,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochRecord {
    /// Counted from 1.
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub valid_slot_f1: Option<f64>,
    pub valid_intent_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every training utterance in visiting order.
    pub step_losses: Vec<f64>,
    /// Epoch (from 1) whose parameters are in `best_params`.
    pub best_epoch: usize,
    pub best_params: ParamStore,
}

impl TrainOutcome {
    /// Copy of `model` carrying the selected parameters.
    pub fn best_model(&self, model: &CmNet) -> CmNet {
        CmNet {
            params: self.best_params.clone(),
            ..model.clone()
        }
    }
}

/// Trains `model` in place. With a validation split the parameters with the
/// highest slot F1 + intent accuracy are kept as best; otherwise the last
/// epoch is. `on_epoch` sees every record as it is produced.
pub fn train<R: Rng>(
    model: &mut CmNet,
    train_set: &[Utterance],
    valid: Option<&[Utterance]>,
    cfg: &TrainConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    let examples = train_set.iter().map(|u| model.example(u)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut adam = Adam::new(&model.params);
    let mut outcome = TrainOutcome {
        epochs: Vec::new(),
        step_losses: Vec::new(),
        best_epoch: 0,
        best_params: model.params.clone(),
    };
    let mut best_score = f64::NEG_INFINITY;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg.lr, cfg.decay_factor, epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let (loss, grads) = {
                    let mut g = Graph::new(&model.params);
                    let mut mode = Mode::Train {
                        dropout: cfg.dropout,
                        rng: &mut *rng,
                    };
                    let l = model.loss(&mut g, &examples[i], cfg.lambda, &mut mode)?;
                    let value = g.value(l).item();
                    let grads = if value.is_finite() { Some(g.backward(l)?) } else { None };
                    (value, grads)
                };
                let grads = match grads {
                    Some(gr) if gr.global_norm().is_finite() => gr,
                    _ => {
                        return Err(Error::Divergence {
                            epoch: epoch + 1,
                            utterance: i + 1,
                            loss,
                        })
                    }
                };
                outcome.step_losses.push(loss);
                total += loss;
                match acc.as_mut() {
                    Some(a) => a.accumulate(&grads),
                    None => acc = Some(grads),
                }
            }
            let mut grads = acc.expect("non-empty batch");
            if batch.len() > 1 {
                grads.scale(1.0 / batch.len() as f64);
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads, lr)?;
        }

        let mut record = EpochRecord {
            epoch: epoch + 1,
            lr,
            mean_loss: total / examples.len() as f64,
            valid_slot_f1: None,
            valid_intent_accuracy: None,
        };
        let mut perfect = false;
        match valid {
            Some(v) => {
                let eval = evaluate(model, v)?;
                record.valid_slot_f1 = Some(eval.slot.f1);
                record.valid_intent_accuracy = Some(eval.intent_accuracy);
                let score = eval.slot.f1 + eval.intent_accuracy;
                perfect = eval.slot.f1 == 1.0 && eval.intent_accuracy == 1.0;
                if score > best_score {
                    best_score = score;
                    outcome.best_epoch = epoch + 1;
                    outcome.best_params = model.params.clone();
                }
            }
            None => {
                outcome.best_epoch = epoch + 1;
                outcome.best_params = model.params.clone();
            }
        }
        on_epoch(&record);
        outcome.epochs.push(record);
        if cfg.stop_on_perfect && perfect {
            break;
        }
        if cfg.patience > 0 && valid.is_some() && epoch + 1 - outcome.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(outcome)
}
