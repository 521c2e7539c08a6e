//! Per-value reward scorers, Bradley–Terry fitting and score statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreferenceDataset, PreferencePair, Universe};
use crate::scalar::{dot, log_sigmoid, sigmoid};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    #[serde(rename = "linear-analytic")]
    LinearAnalytic,
    #[serde(rename = "trained-bt")]
    TrainedBt,
}

/// A linear scorer over response features: `score(x, y) = weight · φ(x, y) + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct RewardModel<T = f64> {
    pub kind: RewardKind,
    pub weight: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> RewardModel<T> {
    pub fn new(kind: RewardKind, weight: Vec<T>, bias: T) -> Self {
        Self { kind, weight, bias }
    }

    pub fn zero(feature_dim: usize) -> Self {
        Self::new(RewardKind::LinearAnalytic, vec![T::zero(); feature_dim], T::zero())
    }

    pub fn score(&self, universe: &Universe<T>, prompt_id: usize, response_id: usize) -> Result<T> {
        let f = universe.response(prompt_id, response_id)?;
        if f.len() != self.weight.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![f.len()],
                got: vec![self.weight.len()],
            });
        }
        Ok(dot(&self.weight, f) + self.bias)
    }

    /// Raw reward gap `r(x, y_w) − r(x, y_l)`.
    pub fn gap(&self, universe: &Universe<T>, pair: &PreferencePair) -> Result<T> {
        Ok(self.score(universe, pair.prompt_id, pair.chosen_id)?
            - self.score(universe, pair.prompt_id, pair.rejected_id)?)
    }

    /// Scores of every response, indexed `[prompt][response]`.
    pub fn score_table(&self, universe: &Universe<T>) -> Result<Vec<Vec<T>>> {
        (0..universe.num_prompts)
            .map(|x| {
                (0..universe.responses_per_prompt)
                    .map(|y| self.score(universe, x, y))
                    .collect()
            })
            .collect()
    }

    /// `a · score + b`, preserving kind.
    pub fn affine(&self, a: T, b: T) -> Self {
        Self::new(
            self.kind,
            self.weight.iter().map(|&w| a * w).collect(),
            a * self.bias + b,
        )
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Population mean and standard deviation of a reward model's scores over
/// every chosen and rejected response occurrence of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RewardStats<T = f64> {
    pub mean: T,
    pub stddev: T,
    pub count: usize,
}

impl<T: Scalar> RewardStats<T> {
    /// Replaces a zero standard deviation by 1. Only used when the caller
    /// opts in explicitly.
    pub fn with_unit_scale_fallback(self) -> Self {
        if self.stddev == T::zero() {
            Self {
                stddev: T::one(),
                ..self
            }
        } else {
            self
        }
    }

    pub fn normalize(&self, score: T) -> T {
        (score - self.mean) / self.stddev
    }
}

pub fn compute_stats<T: Scalar>(
    model: &RewardModel<T>,
    dataset: &PreferenceDataset,
    universe: &Universe<T>,
) -> Result<RewardStats<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut scores = Vec::with_capacity(2 * dataset.len());
    for (i, p) in dataset.pairs.iter().enumerate() {
        let s = |y| model.score(universe, p.prompt_id, y).map_err(|e| e.at_pair(i));
        scores.push(s(p.chosen_id)?);
        scores.push(s(p.rejected_id)?);
    }
    let n = T::from_count(scores.len());
    let mean = scores.iter().copied().sum::<T>() / n;
    let var = scores.iter().map(|&s| (s - mean) * (s - mean)).sum::<T>() / n;
    Ok(RewardStats {
        mean,
        stddev: var.sqrt(),
        count: scores.len(),
    })
}

/// Fraction of pairs the model orders correctly; exact ties count one half.
pub fn pairwise_accuracy<T: Scalar>(
    model: &RewardModel<T>,
    dataset: &PreferenceDataset,
    universe: &Universe<T>,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0.0;
    for (i, p) in dataset.pairs.iter().enumerate() {
        let g = model.gap(universe, p).map_err(|e| e.at_pair(i))?;
        if g > T::zero() {
            hits += 1.0;
        } else if g == T::zero() {
            hits += 0.5;
        }
    }
    Ok(hits / dataset.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BtTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for BtTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

impl BtTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Feature differences `φ(x, y_w) − φ(x, y_l)`, one row per pair.
pub fn pair_feature_diffs<T: Scalar>(dataset: &PreferenceDataset, universe: &Universe<T>) -> Result<Vec<Vec<T>>> {
    dataset
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let w = universe.response(p.prompt_id, p.chosen_id).map_err(|e| e.at_pair(i))?;
            let l = universe
                .response(p.prompt_id, p.rejected_id)
                .map_err(|e| e.at_pair(i))?;
            Ok(w.iter().zip(l).map(|(&a, &b)| a - b).collect())
        })
        .collect()
}

/// Negative mean Bradley–Terry log-likelihood plus `l2 · ‖w‖²`.
pub fn bt_loss<T: Scalar>(weight: &[T], diffs: &[Vec<T>], l2: T) -> T {
    let n = T::from_count(diffs.len());
    let nll = -diffs.iter().map(|d| log_sigmoid(dot(weight, d))).sum::<T>() / n;
    nll + l2 * dot(weight, weight)
}

pub fn bt_gradient<T: Scalar>(weight: &[T], diffs: &[Vec<T>], l2: T) -> Vec<T> {
    let n = T::from_count(diffs.len());
    let two = T::lit(2.0);
    let mut g: Vec<T> = weight.iter().map(|&w| two * l2 * w).collect();
    for d in diffs {
        let c = sigmoid(-dot(weight, d)) / n;
        for (gk, &dk) in g.iter_mut().zip(d) {
            *gk = *gk - c * dk;
        }
    }
    g
}

/// Result of a Bradley–Terry fit with its per-epoch loss (entry 0 is the initial loss).
#[derive(Clone, Debug)]
pub struct BtFit<T = f64> {
    pub model: RewardModel<T>,
    pub losses: Vec<T>,
}

/// Full-batch gradient descent on [`bt_loss`] from zero weights.
pub fn fit_bradley_terry<T: Scalar>(
    dataset: &PreferenceDataset,
    universe: &Universe<T>,
    config: &BtTrainConfig,
) -> Result<BtFit<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let diffs = pair_feature_diffs(dataset, universe)?;
    let lr = T::lit(config.learning_rate);
    let l2 = T::lit(config.l2);
    let mut weight = vec![T::zero(); universe.feature_dim];
    let mut losses = Vec::with_capacity(config.epochs + 1);
    losses.push(bt_loss(&weight, &diffs, l2));
    for _ in 0..config.epochs {
        let g = bt_gradient(&weight, &diffs, l2);
        for (w, gk) in weight.iter_mut().zip(g) {
            *w = *w - lr * gk;
        }
        losses.push(bt_loss(&weight, &diffs, l2));
    }
    if weight.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("Bradley-Terry weights".into()));
    }
    Ok(BtFit {
        model: RewardModel::new(RewardKind::TrainedBt, weight, T::zero()),
        losses,
    })
}

pub fn train_bradley_terry<T: Scalar>(
    dataset: &PreferenceDataset,
    universe: &Universe<T>,
    config: &BtTrainConfig,
) -> Result<RewardModel<T>> {
    fit_bradley_terry(dataset, universe, config).map(|f| f.model)
}
