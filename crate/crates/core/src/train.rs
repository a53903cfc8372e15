//! Mini-batch training loop shared by both stages.

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, AdamConfig, Mat, ParamSet};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Model-selection score on held-out data, higher is better.
    pub dev_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub instances_per_epoch: usize,
}

/// Runs `schedule.epochs` passes over `n` instances in a seeded shuffled
/// order. `instance_loss(params, i, grads)` returns instance `i`'s loss and
/// adds its gradient into `grads`. After every epoch `evaluate` may return a
/// selection score; the parameters of the best-scoring epoch (earliest on
/// ties) are restored at the end. Without scores the last epoch is kept.
pub fn fit<L, E>(
    params: &mut ParamSet,
    n: usize,
    schedule: &Schedule,
    mut instance_loss: L,
    mut evaluate: E,
) -> FitReport
where
    L: FnMut(&ParamSet, usize, &mut [Mat]) -> f64,
    E: FnMut(&ParamSet, usize) -> Option<f64>,
{
    let batch = schedule.batch_size.max(1);
    let steps_per_epoch = n.div_ceil(batch);
    let mut opt = Adam::new(
        AdamConfig::new(schedule.learning_rate, schedule.warmup_steps),
        params,
        steps_per_epoch * schedule.epochs,
    );
    let mut grads = params.zero_grads();
    let mut logs = Vec::with_capacity(schedule.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;

    for epoch in 1..=schedule.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive_seed(schedule.seed, &["epoch", &epoch.to_string()])));
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            for &i in chunk {
                total += instance_loss(params, i, &mut grads);
            }
            opt.step(params, &mut grads, 1.0 / chunk.len() as f64);
        }
        let train_loss = if n == 0 { 0.0 } else { total / n as f64 };
        let dev_score = evaluate(params, epoch);
        info!(
            "epoch {epoch}/{}: train loss {train_loss:.5}{}",
            schedule.epochs,
            dev_score.map(|s| format!(", dev score {s:.4}")).unwrap_or_default()
        );
        if let Some(score) = dev_score {
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch, params.clone()));
            }
        }
        logs.push(EpochLog {
            epoch,
            train_loss,
            dev_score,
        });
    }

    let best_epoch = match best {
        Some((_, epoch, kept)) => {
            *params = kept;
            epoch
        }
        None => schedule.epochs,
    };
    FitReport {
        epochs: logs,
        best_epoch,
        instances_per_epoch: n,
    }
}
