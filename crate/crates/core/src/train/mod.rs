//! SDR metric and loss, Adam, the training loop and synthetic data.

mod metric;
mod optim;
mod synth;

pub use metric::{batch_sdr_loss, sdr, sdr_loss, SDR_CAP_DB};
pub use optim::{adam_step, OptimizerState, TrainConfig};
pub use synth::{synth_dataset, Example, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;

/// Loss and mean SDR of one optimizer step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub sdr_db: f64,
}

/// Draws batches by walking seeded permutations of the dataset.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn check_data(model: &Model, data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    for ex in data {
        if ex.noisy.channels() != model.config().mics {
            return Err(Error::ChannelMismatch {
                expected: model.config().mics,
                actual: ex.noisy.channels(),
            });
        }
    }
    Ok(())
}

/// Trains `model` in place; `on_step` sees every record as it is produced.
pub fn train_with<F>(model: &Model, data: &[Example], cfg: &TrainConfig, mut on_step: F) -> Result<Vec<StepRecord>>
where
    F: FnMut(&StepRecord),
{
    cfg.validate()?;
    check_data(model, data)?;
    let mut state = OptimizerState::new(model.parameters());
    let mut order = BatchOrder::new(data.len(), cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = order.next_batch(cfg.batch);
        let estimates = batch
            .iter()
            .map(|&i| model.forward(&data[i].noisy))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(&[f64], _)> = batch
            .iter()
            .zip(estimates)
            .map(|(&i, est)| (data[i].clean.as_slice(), est))
            .collect();
        let loss = batch_sdr_loss(&pairs)?;
        let sdr_db = pairs
            .iter()
            .map(|(s, est)| sdr(s, &est.data()))
            .sum::<Result<f64>>()?
            / pairs.len() as f64;
        model.zero_grad();
        loss.backward()?;
        adam_step(model.parameters(), &mut state, cfg)?;
        model.zero_grad();
        let record = StepRecord {
            step,
            loss: loss.item(),
            sdr_db,
        };
        on_step(&record);
        history.push(record);
    }
    Ok(history)
}

pub fn train(model: &Model, data: &[Example], cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    train_with(model, data, cfg, |_| {})
}

/// Mean SDR of the model's enhancement over `data`.
pub fn evaluate(model: &Model, data: &[Example]) -> Result<f64> {
    check_data(model, data)?;
    let mut total = 0.0;
    for ex in data {
        total += sdr(&ex.clean, &model.enhance(&ex.noisy)?)?;
    }
    Ok(total / data.len() as f64)
}
