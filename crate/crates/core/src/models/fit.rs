//! Plain supervised cross-entropy training, shared by pretraining and
//! linear probing.

use crate::batching::epoch_batches;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::numeric::{FreezeMask, Graph, Param, Sgd, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 40,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Minimizes mean cross-entropy of `forward(x)` against the labels,
/// updating only `trainable`. Returns the mean loss of every epoch.
pub fn fit_classifier<F>(
    trainable: &[Param],
    data: &LabeledSet,
    classes: usize,
    cfg: &FitConfig,
    tag: &str,
    forward: F,
) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if data.is_empty() {
        return Err(Error::EmptyData(format!("{tag}: no labeled samples")));
    }
    if let Some(&y) = data.y.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label: y, classes });
    }
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(data.len(), cfg.batch_size, cfg.seed, &format!("{tag}/{epoch}"));
        let mut total = 0.0;
        for idx in &batches {
            let (x, y) = data.batch(idx);
            total += step(trainable, &mut opt, &x, &y, &forward)?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

fn step<F>(trainable: &[Param], opt: &mut Sgd, x: &Tensor, y: &[usize], forward: &F) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new(FreezeMask::only(trainable));
    let xv = g.constant(x.clone());
    let logits = forward(&mut g, xv)?;
    let loss = cross_entropy(&mut g, logits, y)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("supervised loss".into()));
    }
    g.backward(loss)?;
    opt.step(trainable)?;
    Ok(value)
}
