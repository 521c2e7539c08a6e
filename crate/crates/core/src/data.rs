//! Toy preference universes, preference pairs and their on-disk formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::reward::RewardModel;
use crate::rng::seeded;
use crate::{Error, Result, Scalar};

/// A finite set of prompts, each with a fixed table of featurized responses.
///
/// `prompt_weights` is the prompt distribution used by every expectation
/// over prompts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Universe<T = f64> {
    pub num_prompts: usize,
    pub responses_per_prompt: usize,
    pub feature_dim: usize,
    pub prompt_features: Vec<Vec<T>>,
    pub response_features: Vec<Vec<Vec<T>>>,
    pub prompt_weights: Vec<T>,
}

impl<T: Scalar> Universe<T> {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts == 0 || self.responses_per_prompt == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("universe counts must be positive"));
        }
        if self.prompt_features.len() != self.num_prompts
            || self.response_features.len() != self.num_prompts
            || self.prompt_weights.len() != self.num_prompts
        {
            return Err(Error::invalid("universe tables disagree with num_prompts"));
        }
        for (x, row) in self.prompt_features.iter().enumerate() {
            if row.len() != self.feature_dim {
                return Err(Error::invalid(format!("prompt {x}: wrong feature length")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("prompt {x} features")));
            }
        }
        for (x, table) in self.response_features.iter().enumerate() {
            if table.len() != self.responses_per_prompt {
                return Err(Error::invalid(format!("prompt {x}: wrong response count")));
            }
            for (y, f) in table.iter().enumerate() {
                if f.len() != self.feature_dim {
                    return Err(Error::invalid(format!("response ({x},{y}): wrong feature length")));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("response ({x},{y}) features")));
                }
            }
        }
        if self.prompt_weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::invalid("prompt weights must be finite and non-negative"));
        }
        let total: f64 = self.prompt_weights.iter().map(|w| w.to_f64_lossy()).sum();
        let tol = if std::mem::size_of::<T>() < 8 { 1e-5 } else { 1e-9 };
        if (total - 1.0).abs() > tol {
            return Err(Error::invalid(format!("prompt weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn check_prompt(&self, prompt_id: usize) -> Result<()> {
        if prompt_id >= self.num_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt_id,
                limit: self.num_prompts,
            });
        }
        Ok(())
    }

    pub fn check_response(&self, prompt_id: usize, response_id: usize) -> Result<()> {
        self.check_prompt(prompt_id)?;
        if response_id >= self.responses_per_prompt {
            return Err(Error::IndexOutOfRange {
                what: "response",
                index: response_id,
                limit: self.responses_per_prompt,
            });
        }
        Ok(())
    }

    pub fn response(&self, prompt_id: usize, response_id: usize) -> Result<&[T]> {
        self.check_response(prompt_id, response_id)?;
        Ok(&self.response_features[prompt_id][response_id])
    }

    /// The same universe with the prompt distribution made uniform over
    /// `prompt_ids` and zero elsewhere. Used for validation/test splits that
    /// share the policy's logit table.
    pub fn with_prompt_subset(&self, prompt_ids: &[usize]) -> Result<Self> {
        if prompt_ids.is_empty() {
            return Err(Error::invalid("prompt subset is empty"));
        }
        let mut weights = vec![T::zero(); self.num_prompts];
        for &x in prompt_ids {
            self.check_prompt(x)?;
            if weights[x] != T::zero() {
                return Err(Error::invalid(format!("prompt {x} listed twice in subset")));
            }
            weights[x] = T::one();
        }
        let w = T::one() / T::from_count(prompt_ids.len());
        for v in weights.iter_mut() {
            *v = *v * w;
        }
        Ok(Self {
            prompt_weights: weights,
            ..self.clone()
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let u: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        u.validate()?;
        Ok(u)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// One preference judgement `(x, y_w, y_l)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt_id: usize,
    pub chosen_id: usize,
    pub rejected_id: usize,
}

impl PreferencePair {
    pub fn new(prompt_id: usize, chosen_id: usize, rejected_id: usize) -> Self {
        Self {
            prompt_id,
            chosen_id,
            rejected_id,
        }
    }

    pub fn swapped(self) -> Self {
        Self::new(self.prompt_id, self.rejected_id, self.chosen_id)
    }

    pub fn validate<T: Scalar>(&self, universe: &Universe<T>) -> Result<()> {
        universe.check_response(self.prompt_id, self.chosen_id)?;
        universe.check_response(self.prompt_id, self.rejected_id)?;
        if self.chosen_id == self.rejected_id {
            return Err(Error::invalid("chosen equals rejected"));
        }
        Ok(())
    }
}

/// An ordered list of preference pairs labelled under a single value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub universe_ref: String,
    pub value_name: String,
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn new(value_name: impl Into<String>, pairs: Vec<PreferencePair>) -> Self {
        Self {
            universe_ref: String::new(),
            value_name: value_name.into(),
            pairs,
        }
    }

    pub fn with_value_name(mut self, name: impl Into<String>) -> Self {
        self.value_name = name.into();
        self
    }

    pub fn with_universe_ref(mut self, universe_ref: impl Into<String>) -> Self {
        self.universe_ref = universe_ref.into();
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate<T: Scalar>(&self, universe: &Universe<T>) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            p.validate(universe).map_err(|e| e.at_pair(i))?;
        }
        Ok(())
    }
}

/// Sidecar header for a pairs JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub value_name: String,
    pub universe: String,
}

impl DatasetManifest {
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

/// Draws a universe with i.i.d. standard-normal features and uniform prompt weights.
pub fn generate_universe<T: Scalar>(
    num_prompts: usize,
    responses_per_prompt: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Universe<T>> {
    if num_prompts == 0 || responses_per_prompt == 0 || feature_dim == 0 {
        return Err(Error::invalid("universe counts must be at least 1"));
    }
    let mut rng = seeded(seed);
    let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect() };
    let prompt_features = (0..num_prompts).map(|_| draw(feature_dim)).collect();
    let response_features = (0..num_prompts)
        .map(|_| (0..responses_per_prompt).map(|_| draw(feature_dim)).collect())
        .collect();
    let w = T::one() / T::from_count(num_prompts);
    Ok(Universe {
        num_prompts,
        responses_per_prompt,
        feature_dim,
        prompt_features,
        response_features,
        prompt_weights: vec![w; num_prompts],
    })
}

/// Samples `num_pairs` pairs (with replacement) and orients each by `labeler`.
///
/// The prompt is drawn from the universe's prompt distribution and two
/// distinct responses uniformly. Exact score ties go to the lower index.
pub fn generate_pairs<T: Scalar>(
    universe: &Universe<T>,
    labeler: &RewardModel<T>,
    num_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    let r = universe.responses_per_prompt;
    if r < 2 {
        return Err(Error::InsufficientResponses(r));
    }
    let weights: Vec<f64> = universe.prompt_weights.iter().map(|w| w.to_f64_lossy()).collect();
    let prompt_dist = WeightedIndex::new(&weights).map_err(|e| Error::invalid(format!("prompt weights: {e}")))?;
    let mut rng = seeded(seed);
    let mut pairs = Vec::with_capacity(num_pairs);
    for _ in 0..num_pairs {
        let x = prompt_dist.sample(&mut rng);
        let a = rng.random_range(0..r);
        let mut b = rng.random_range(0..r - 1);
        if b >= a {
            b += 1;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let s_lo = labeler.score(universe, x, lo)?;
        let s_hi = labeler.score(universe, x, hi)?;
        let pair = if s_hi > s_lo {
            PreferencePair::new(x, hi, lo)
        } else {
            PreferencePair::new(x, lo, hi)
        };
        pairs.push(pair);
    }
    Ok(PreferenceDataset::new(String::new(), pairs))
}

/// Fraction of pairs whose raw gap vector has both a strictly positive and a
/// strictly negative component.
pub fn conflict_fraction<T: Scalar>(
    dataset: &PreferenceDataset,
    models: &[RewardModel<T>],
    universe: &Universe<T>,
) -> Result<f64> {
    if models.len() < 2 {
        return Err(Error::invalid("conflict_fraction needs at least 2 reward models"));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut mixed = 0usize;
    for (i, pair) in dataset.pairs.iter().enumerate() {
        let mut pos = false;
        let mut neg = false;
        for m in models {
            let gap = m.gap(universe, pair).map_err(|e| e.at_pair(i))?;
            pos |= gap > T::zero();
            neg |= gap < T::zero();
        }
        if pos && neg {
            mixed += 1;
        }
    }
    Ok(mixed as f64 / dataset.len() as f64)
}

/// Parses pairs JSONL. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_pairs_jsonl(reader: impl Read) -> Result<Vec<PreferencePair>> {
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("malformed pair ({e})"),
        })?;
        if pair.chosen_id == pair.rejected_id {
            return Err(Error::Parse {
                line: line_no,
                message: "chosen equals rejected".into(),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<PreferenceDataset> {
    let pairs = parse_pairs_jsonl(File::open(path)?)?;
    Ok(PreferenceDataset::new(String::new(), pairs))
}

pub fn write_pairs_to(dataset: &PreferenceDataset, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for p in &dataset.pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs_jsonl(dataset: &PreferenceDataset, path: impl AsRef<Path>) -> Result<()> {
    write_pairs_to(dataset, File::create(path)?)
}
