//! Tabular softmax policies, the DPO objective and exact expected rewards.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PreferenceDataset, PreferencePair, Universe};
use crate::reward::RewardModel;
use crate::rng::{seeded, DetRng};
use crate::scalar::{log_sigmoid, logsumexp, sigmoid};
use crate::{Error, Result, Scalar};

/// One logit per `(prompt, response)`, stored row-major; `π(·|x)` is the
/// softmax of row `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy<T = f64> {
    num_prompts: usize,
    num_responses: usize,
    logits: Vec<T>,
}

impl<T: Scalar> TabularPolicy<T> {
    /// All-zero logits: the uniform policy.
    pub fn uniform(num_prompts: usize, num_responses: usize) -> Self {
        Self {
            num_prompts,
            num_responses,
            logits: vec![T::zero(); num_prompts * num_responses],
        }
    }

    pub fn for_universe(universe: &Universe<T>) -> Self {
        Self::uniform(universe.num_prompts, universe.responses_per_prompt)
    }

    pub fn from_logits(num_prompts: usize, num_responses: usize, logits: Vec<T>) -> Result<Self> {
        if logits.len() != num_prompts * num_responses || num_responses == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![num_prompts, num_responses],
                got: vec![logits.len()],
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        Ok(Self {
            num_prompts,
            num_responses,
            logits,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.num_prompts, self.num_responses]
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [T] {
        &mut self.logits
    }

    pub fn row(&self, prompt_id: usize) -> &[T] {
        &self.logits[prompt_id * self.num_responses..(prompt_id + 1) * self.num_responses]
    }

    pub fn index(&self, prompt_id: usize, response_id: usize) -> usize {
        prompt_id * self.num_responses + response_id
    }

    fn check(&self, prompt_id: usize, response_id: usize) -> Result<()> {
        if prompt_id >= self.num_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt_id,
                limit: self.num_prompts,
            });
        }
        if response_id >= self.num_responses {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: response_id,
                limit: self.num_responses,
            });
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_vec(),
                got: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn check_universe(&self, universe: &Universe<T>) -> Result<()> {
        let want = [universe.num_prompts, universe.responses_per_prompt];
        if self.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want.to_vec(),
                got: self.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `ln π(y|x)`.
    pub fn log_prob(&self, prompt_id: usize, response_id: usize) -> Result<T> {
        self.check(prompt_id, response_id)?;
        let row = self.row(prompt_id);
        Ok(row[response_id] - logsumexp(row))
    }

    pub fn probs(&self, prompt_id: usize) -> Vec<T> {
        let row = self.row(prompt_id);
        let lse = logsumexp(row);
        row.iter().map(|&z| (z - lse).exp()).collect()
    }

    /// `self + scale · theta`, elementwise in logit space.
    pub fn shifted(&self, theta: &ValueVector<T>, scale: T) -> Result<Self> {
        theta.check_shape(self.shape())?;
        let logits = self
            .logits
            .iter()
            .zip(&theta.delta)
            .map(|(&z, &d)| z + scale * d)
            .collect();
        Ok(Self { logits, ..self.clone() })
    }

    /// The value vector `self − reference`.
    pub fn delta_from(&self, reference: &Self) -> Result<ValueVector<T>> {
        self.check_same_shape(reference)?;
        Ok(ValueVector {
            shape: self.shape(),
            delta: self
                .logits
                .iter()
                .zip(&reference.logits)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let f: TableFile<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_logits(f.shape[0], f.shape[1], f.values)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = TableFile {
            shape: self.shape(),
            values: self.logits.clone(),
        };
        write_json(&f, path)
    }
}

/// A parameter delta `θ = π − π_ref` with the logit table's shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueVector<T = f64> {
    pub shape: [usize; 2],
    pub delta: Vec<T>,
}

impl<T: Scalar> ValueVector<T> {
    pub fn zeros(shape: [usize; 2]) -> Self {
        Self {
            shape,
            delta: vec![T::zero(); shape[0] * shape[1]],
        }
    }

    pub fn new(shape: [usize; 2], delta: Vec<T>) -> Result<Self> {
        let v = Self { shape, delta };
        v.check_shape(shape)?;
        Ok(v)
    }

    pub fn check_shape(&self, shape: [usize; 2]) -> Result<()> {
        if self.shape != shape || self.delta.len() != shape[0] * shape[1] {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                got: self.shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn row(&self, prompt_id: usize) -> &[T] {
        let r = self.shape[1];
        &self.delta[prompt_id * r..(prompt_id + 1) * r]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct TableFile<T> {
    shape: [usize; 2],
    values: Vec<T>,
}

/// On-disk value vector with its training provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct ValueVectorFile<T = f64> {
    pub shape: [usize; 2],
    pub values: Vec<T>,
    pub value_name: String,
    pub tau: f64,
    pub train_config: DpoTrainConfig,
}

impl<T: Scalar> ValueVectorFile<T> {
    pub fn new(theta: &ValueVector<T>, value_name: &str, tau: f64, train_config: DpoTrainConfig) -> Self {
        Self {
            shape: theta.shape,
            values: theta.delta.clone(),
            value_name: value_name.to_string(),
            tau,
            train_config,
        }
    }

    pub fn vector(&self) -> Result<ValueVector<T>> {
        ValueVector::new(self.shape, self.values.clone())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

fn write_json<S: Serialize>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoTrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DpoTrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.05,
            epochs: 300,
            seed: 0,
        }
    }
}

impl DpoTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

fn check_pair_inputs<T: Scalar>(
    policy: &TabularPolicy<T>,
    reference: &TabularPolicy<T>,
    dataset: &PreferenceDataset,
) -> Result<()> {
    policy.check_same_shape(reference)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, p) in dataset.pairs.iter().enumerate() {
        policy.check(p.prompt_id, p.chosen_id).map_err(|e| e.at_pair(i))?;
        policy.check(p.prompt_id, p.rejected_id).map_err(|e| e.at_pair(i))?;
    }
    Ok(())
}

/// The DPO margin `β·[(ln π(y_w) − ln π_ref(y_w)) − (ln π(y_l) − ln π_ref(y_l))]`
/// of every pair.
fn margins<T: Scalar>(
    policy: &TabularPolicy<T>,
    reference: &TabularPolicy<T>,
    dataset: &PreferenceDataset,
    beta: T,
) -> Result<Vec<T>> {
    dataset
        .pairs
        .iter()
        .map(|p| {
            let x = p.prompt_id;
            let w = policy.log_prob(x, p.chosen_id)? - reference.log_prob(x, p.chosen_id)?;
            let l = policy.log_prob(x, p.rejected_id)? - reference.log_prob(x, p.rejected_id)?;
            Ok(beta * (w - l))
        })
        .collect()
}

/// Mean of `−ln σ(margin)` over the dataset.
pub fn dpo_loss<T: Scalar>(
    policy: &TabularPolicy<T>,
    reference: &TabularPolicy<T>,
    dataset: &PreferenceDataset,
    beta: T,
) -> Result<T> {
    check_pair_inputs(policy, reference, dataset)?;
    let m = margins(policy, reference, dataset, beta)?;
    let n = T::from_count(m.len());
    Ok(-m.into_iter().map(log_sigmoid).sum::<T>() / n)
}

/// Gradient of [`dpo_loss`] with respect to every logit, row-major.
///
/// The log-partition terms of `ln π(y_w|x)` and `ln π(y_l|x)` share a row and
/// cancel, so each pair touches exactly two logits: `−β σ(−m)/N` on `y_w`
/// and `+β σ(−m)/N` on `y_l`.
pub fn dpo_gradient<T: Scalar>(
    policy: &TabularPolicy<T>,
    reference: &TabularPolicy<T>,
    dataset: &PreferenceDataset,
    beta: T,
) -> Result<Vec<T>> {
    check_pair_inputs(policy, reference, dataset)?;
    let m = margins(policy, reference, dataset, beta)?;
    let n = T::from_count(m.len());
    let mut grad = vec![T::zero(); policy.logits.len()];
    for (p, &mi) in dataset.pairs.iter().zip(&m) {
        let c = beta * sigmoid(-mi) / n;
        let w = policy.index(p.prompt_id, p.chosen_id);
        let l = policy.index(p.prompt_id, p.rejected_id);
        grad[w] = grad[w] - c;
        grad[l] = grad[l] + c;
    }
    Ok(grad)
}

/// Gradient of one pair's unaveraged loss `−ln σ(margin)`, as its two
/// nonzero `(logit index, value)` entries: chosen first, then rejected.
pub fn pair_gradient<T: Scalar>(
    policy: &TabularPolicy<T>,
    reference: &TabularPolicy<T>,
    pair: &PreferencePair,
    beta: T,
) -> Result<[(usize, T); 2]> {
    let d = PreferenceDataset::new(String::new(), vec![*pair]);
    check_pair_inputs(policy, reference, &d)?;
    let m = margins(policy, reference, &d, beta)?[0];
    let c = beta * sigmoid(-m);
    Ok([
        (policy.index(pair.prompt_id, pair.chosen_id), -c),
        (policy.index(pair.prompt_id, pair.rejected_id), c),
    ])
}

/// Output of [`train_dpo`]: the value vector and the loss after each epoch
/// (entry 0 is the loss at the reference policy).
#[derive(Clone, Debug)]
pub struct DpoFit<T = f64> {
    pub theta: ValueVector<T>,
    pub losses: Vec<T>,
}

/// Full-batch gradient descent on the DPO loss, starting at `reference`.
pub fn train_dpo<T: Scalar>(
    reference: &TabularPolicy<T>,
    dataset: &PreferenceDataset,
    config: &DpoTrainConfig,
) -> Result<DpoFit<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyTrainingSubset);
    }
    let beta = T::lit(config.beta);
    let lr = T::lit(config.learning_rate);
    let mut policy = reference.clone();
    let mut losses = Vec::with_capacity(config.epochs + 1);
    losses.push(dpo_loss(&policy, reference, dataset, beta)?);
    for _ in 0..config.epochs {
        let g = dpo_gradient(&policy, reference, dataset, beta)?;
        for (z, gk) in policy.logits.iter_mut().zip(g) {
            *z = *z - lr * gk;
        }
        losses.push(dpo_loss(&policy, reference, dataset, beta)?);
    }
    let (initial, last) = (losses[0], losses[losses.len() - 1]);
    if !last.is_finite() || last > initial {
        return Err(Error::LossIncreased {
            initial: initial.to_f64_lossy(),
            last: last.to_f64_lossy(),
        });
    }
    Ok(DpoFit {
        theta: policy.delta_from(reference)?,
        losses,
    })
}

/// `Σ_x w(x) Σ_y π(y|x) r(x, y)` from a precomputed `[prompt][response]` score table.
pub fn expected_reward_from_table<T: Scalar>(policy: &TabularPolicy<T>, scores: &[Vec<T>], prompt_weights: &[T]) -> T {
    let mut total = T::zero();
    for (x, (&w, row)) in prompt_weights.iter().zip(scores).enumerate() {
        if w == T::zero() {
            continue;
        }
        let p = policy.probs(x);
        total = total + w * p.iter().zip(row).map(|(&pi, &r)| pi * r).sum::<T>();
    }
    total
}

/// Exact expected reward of `policy` under `model` and the universe's prompt distribution.
pub fn expected_reward<T: Scalar>(
    policy: &TabularPolicy<T>,
    model: &RewardModel<T>,
    universe: &Universe<T>,
) -> Result<T> {
    policy.check_universe(universe)?;
    let table = model.score_table(universe)?;
    Ok(expected_reward_from_table(policy, &table, &universe.prompt_weights))
}

/// Inverse-CDF draw from `π(·|x)`.
pub fn sample_response_with<T: Scalar>(policy: &TabularPolicy<T>, prompt_id: usize, rng: &mut DetRng) -> Result<usize> {
    policy.check(prompt_id, 0)?;
    let probs = policy.probs(prompt_id);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, p) in probs.iter().enumerate() {
        acc += p.to_f64_lossy();
        if u < acc {
            return Ok(y);
        }
    }
    // rounding left the cumulative sum just below 1
    Ok(probs.iter().rposition(|p| *p > T::zero()).unwrap_or(probs.len() - 1))
}

pub fn sample_response<T: Scalar>(policy: &TabularPolicy<T>, prompt_id: usize, seed: u64) -> Result<usize> {
    sample_response_with(policy, prompt_id, &mut seeded(seed))
}

/// Writes the `epoch,loss` trajectory.
pub fn write_loss_csv<T: Scalar>(losses: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in losses.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
