use serde::{Deserialize, Serialize};

use super::{cross_entropy, Adam, GsiConfig, GsiInputs, GsiModel};
use crate::datamodel::StanceLabel;
use crate::error::{Error, Result};
use crate::evaluation::compute_metrics;
use crate::tfi::FeatureRouting;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_f_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn labeled(labels: &[Option<StanceLabel>], nodes: &[usize], what: &str) -> Result<Vec<(usize, StanceLabel)>> {
    nodes
        .iter()
        .map(|&u| {
            labels
                .get(u)
                .copied()
                .flatten()
                .map(|l| (u, l))
                .ok_or_else(|| Error::Config(format!("{what} user node {u} has no label")))
        })
        .collect()
}

/// Full-graph training with early stopping on validation F_avg.
///
/// `labels` is indexed by user node. The loss only sees `train` rows. The
/// returned model carries the parameters of the best validation epoch, or
/// the final parameters when `val` is empty.
pub fn train(
    config: &GsiConfig,
    inputs: &GsiInputs,
    routing: &FeatureRouting,
    labels: &[Option<StanceLabel>],
    train: &[usize],
    val: &[usize],
) -> Result<(GsiModel, TrainingLog)> {
    if train.is_empty() {
        return Err(Error::TooFewTrainingUsers(0));
    }
    let train_set = labeled(labels, train, "training")?;
    let val_set = labeled(labels, val, "validation")?;
    let val_gold: Vec<StanceLabel> = val_set.iter().map(|&(_, l)| l).collect();

    let mut model = GsiModel::init(config.clone(), routing.clone())?;
    let weights = model.sample_weights(&train_set);
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, super::GsiParams)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        let fwd = model.forward(inputs);
        let (loss, dlogits) = cross_entropy(&fwd.logits, &train_set, &weights);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let val_f_avg = if val_set.is_empty() {
            None
        } else {
            let pred: Vec<StanceLabel> = val_set
                .iter()
                .map(|&(u, _)| super::argmax_label(fwd.logits.row(u).as_slice().unwrap()))
                .collect();
            Some(compute_metrics(&val_gold, &pred)?.f_avg)
        };
        log::debug!("epoch {epoch}: loss {loss:.6} val f_avg {val_f_avg:?}");
        log.epochs.push(EpochLog { epoch, loss, val_f_avg });

        if let Some(f) = val_f_avg {
            if best.as_ref().is_none_or(|(b, _)| f > *b) {
                best = Some((f, model.params.clone()));
                log.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        } else {
            log.best_epoch = epoch;
        }

        let grads = super::backward(&model.params, config.final_activation, inputs, &fwd, &dlogits);
        adam.step(&mut model.params, &grads);
        if !model.params.all_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, log))
}
