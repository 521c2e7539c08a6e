//! Normalized reward gaps, the value-consistency (VC) score and threshold filtering.
//!
//! For a pair `(x, y_w, y_l)` and `n` reward models, component `j` of the
//! normalized gap vector is `(r_j(x, y_w) − r_j(x, y_l)) / σ_j`, where `σ_j`
//! is the population standard deviation of `r_j` over its own dataset. The
//! mean terms of the z-scores cancel and are never formed. The VC score is
//! the cosine between that vector and the all-ones direction.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreferenceDataset, PreferencePair, Universe};
use crate::reward::{RewardModel, RewardStats};
use crate::{Error, Result, Scalar};

/// `r(x, y_w) − r(x, y_l)` under one reward model.
pub fn raw_gap<T: Scalar>(model: &RewardModel<T>, universe: &Universe<T>, pair: &PreferencePair) -> Result<T> {
    model.gap(universe, pair)
}

fn check_lengths<T>(models: &[RewardModel<T>], stats: &[RewardStats<T>]) -> Result<()> {
    if models.len() != stats.len() {
        return Err(Error::invalid(format!(
            "{} reward models but {} stats",
            models.len(),
            stats.len()
        )));
    }
    if models.len() < 2 {
        return Err(Error::invalid("value consistency needs at least 2 values"));
    }
    Ok(())
}

/// Raw gaps and their scale-normalized counterparts.
fn gaps<T: Scalar>(
    models: &[RewardModel<T>],
    stats: &[RewardStats<T>],
    universe: &Universe<T>,
    pair: &PreferencePair,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut raw = Vec::with_capacity(models.len());
    let mut norm = Vec::with_capacity(models.len());
    for (j, (m, s)) in models.iter().zip(stats).enumerate() {
        if !(s.stddev > T::zero()) {
            return Err(Error::DegenerateScale(j));
        }
        let g = raw_gap(m, universe, pair)?;
        raw.push(g);
        norm.push(g / s.stddev);
    }
    Ok((raw, norm))
}

pub fn normalized_gap_vector<T: Scalar>(
    models: &[RewardModel<T>],
    stats: &[RewardStats<T>],
    universe: &Universe<T>,
    pair: &PreferencePair,
) -> Result<Vec<T>> {
    check_lengths(models, stats)?;
    gaps(models, stats, universe, pair).map(|(_, n)| n)
}

/// Cosine between `g` and the all-ones vector; 0 when `g` is the zero vector.
///
/// Evaluated as `(Σ g / ‖g‖) · √(1/n)`, so a vector with a single nonzero
/// positive component lands exactly on `√(1/n)`.
pub fn vc_score<T: Scalar>(g: &[T]) -> Result<T> {
    if g.len() < 2 {
        return Err(Error::invalid("vc_score needs at least 2 components"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gap vector component".into()));
    }
    let norm = g.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm == T::zero() {
        return Ok(T::zero());
    }
    let sum: T = g.iter().copied().sum();
    let n = T::from_count(g.len());
    let vc = (sum / norm) * (T::one() / n).sqrt();
    Ok(vc.max(-T::one()).min(T::one()))
}

/// Per-pair consistency diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRecord<T = f64> {
    pub pair: PreferencePair,
    pub raw_gaps: Vec<T>,
    pub norm_gaps: Vec<T>,
    pub vc: T,
    /// Set when the normalized gap vector is zero and `vc` is undefined.
    pub degenerate: bool,
}

impl<T: Scalar> ConsistencyRecord<T> {
    pub fn compute(
        models: &[RewardModel<T>],
        stats: &[RewardStats<T>],
        universe: &Universe<T>,
        pair: &PreferencePair,
    ) -> Result<Self> {
        check_lengths(models, stats)?;
        let (raw_gaps, norm_gaps) = gaps(models, stats, universe, pair)?;
        let vc = vc_score(&norm_gaps)?;
        let degenerate = norm_gaps.iter().all(|&v| v == T::zero());
        Ok(Self {
            pair: *pair,
            raw_gaps,
            norm_gaps,
            vc,
            degenerate,
        })
    }
}

/// One record per pair, in dataset order.
pub fn score_dataset<T: Scalar>(
    dataset: &PreferenceDataset,
    models: &[RewardModel<T>],
    stats: &[RewardStats<T>],
    universe: &Universe<T>,
) -> Result<Vec<ConsistencyRecord<T>>> {
    check_lengths(models, stats)?;
    dataset
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| ConsistencyRecord::compute(models, stats, universe, p).map_err(|e| e.at_pair(i)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZeroNormPolicy {
    #[default]
    #[serde(rename = "drop")]
    Drop,
    #[serde(rename = "keep-as-zero")]
    KeepAsZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub tau: f64,
    #[serde(default)]
    pub zero_norm_policy: ZeroNormPolicy,
}

impl FilterConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let c = Self {
            tau,
            zero_norm_policy: ZeroNormPolicy::Drop,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau {} outside [-1, 1]", self.tau)));
        }
        Ok(())
    }

    pub fn retains<T: Scalar>(&self, record: &ConsistencyRecord<T>) -> bool {
        if record.degenerate {
            return match self.zero_norm_policy {
                ZeroNormPolicy::Drop => false,
                ZeroNormPolicy::KeepAsZero => 0.0 >= self.tau,
            };
        }
        record.vc >= T::lit(self.tau)
    }
}

/// Keeps exactly the pairs with `vc ≥ tau`, in order.
pub fn filter_dataset<T: Scalar>(records: &[ConsistencyRecord<T>], config: &FilterConfig) -> PreferenceDataset {
    let pairs = records.iter().filter(|r| config.retains(r)).map(|r| r.pair).collect();
    PreferenceDataset::new(String::new(), pairs)
}

/// Sign class of a two-value gap vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrant {
    PP,
    NN,
    Mixed,
    Axis,
}

impl Quadrant {
    pub fn of<T: Scalar>(a: T, b: T) -> Self {
        let z = T::zero();
        if a == z || b == z {
            Quadrant::Axis
        } else if a > z && b > z {
            Quadrant::PP
        } else if a < z && b < z {
            Quadrant::NN
        } else {
            Quadrant::Mixed
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Quadrant::PP => "PP",
            Quadrant::NN => "NN",
            Quadrant::Mixed => "MIXED",
            Quadrant::Axis => "AXIS",
        }
    }
}

/// Writes the raw gaps of the first two values with their sign class.
pub fn write_gap_csv<T: Scalar>(records: &[ConsistencyRecord<T>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gap_value_1", "gap_value_2", "quadrant"])?;
    for r in records {
        if r.raw_gaps.len() < 2 {
            return Err(Error::invalid("gap export needs two values"));
        }
        let (a, b) = (r.raw_gaps[0], r.raw_gaps[1]);
        w.write_record([a.to_string(), b.to_string(), Quadrant::of(a, b).label().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct RecordLine<T> {
    prompt_id: usize,
    chosen_id: usize,
    rejected_id: usize,
    raw_gaps: Vec<T>,
    norm_gaps: Vec<T>,
    vc: T,
    degenerate: bool,
}

pub fn write_scores_jsonl<T: Scalar>(records: &[ConsistencyRecord<T>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = RecordLine {
            prompt_id: r.pair.prompt_id,
            chosen_id: r.pair.chosen_id,
            rejected_id: r.pair.rejected_id,
            raw_gaps: r.raw_gaps.clone(),
            norm_gaps: r.norm_gaps.clone(),
            vc: r.vc,
            degenerate: r.degenerate,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_jsonl<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<ConsistencyRecord<T>>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordLine<T> = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("malformed score record ({e})"),
        })?;
        out.push(ConsistencyRecord {
            pair: PreferencePair::new(r.prompt_id, r.chosen_id, r.rejected_id),
            raw_gaps: r.raw_gaps,
            norm_gaps: r.norm_gaps,
            vc: r.vc,
            degenerate: r.degenerate,
        });
    }
    Ok(out)
}
