//! Convex composition of value vectors: `π_λ = π_ref + Σ_i λ_i θ_i`.

use std::path::Path;

use crate::data::Universe;
use crate::policy::{expected_reward_from_table, TabularPolicy, ValueVector};
use crate::reward::RewardModel;
use crate::{Error, Result, Scalar};

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<T = f64> {
    lambdas: Vec<T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn new(lambdas: Vec<T>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidWeights("no components".into()));
        }
        if lambdas.iter().any(|&l| !(l >= T::zero()) || !l.is_finite()) {
            return Err(Error::InvalidWeights(format!(
                "negative or non-finite component in {lambdas:?}"
            )));
        }
        let sum: f64 = lambdas.iter().map(|l| l.to_f64_lossy()).sum();
        let tol = if std::mem::size_of::<T>() < 8 { 1e-6 } else { 1e-9 };
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidWeights(format!("components sum to {sum}")));
        }
        Ok(Self { lambdas })
    }

    /// The `i`-th vertex `e_i` of the `n`-simplex.
    pub fn vertex(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::IndexOutOfRange {
                what: "vertex",
                index: i,
                limit: n,
            });
        }
        let mut l = vec![T::zero(); n];
        l[i] = T::one();
        Self::new(l)
    }

    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Logits `ref + Σ_i λ_i θ_i`, accumulated in value order.
pub fn merge<T: Scalar>(
    reference: &TabularPolicy<T>,
    thetas: &[ValueVector<T>],
    weights: &WeightVector<T>,
) -> Result<TabularPolicy<T>> {
    if thetas.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} value vectors",
            weights.len(),
            thetas.len()
        )));
    }
    for t in thetas {
        t.check_shape(reference.shape())?;
    }
    let mut logits = reference.logits().to_vec();
    for (theta, &lambda) in thetas.iter().zip(weights.lambdas()) {
        for (z, &d) in logits.iter_mut().zip(&theta.delta) {
            *z = *z + lambda * d;
        }
    }
    let [p, r] = reference.shape();
    TabularPolicy::from_logits(p, r, logits)
}

/// Every weight vector with components in `{0, step, …, 1}`, in lexicographic order.
///
/// `1/step` must be an integer `m`; the result has `C(m + n − 1, n − 1)` entries.
pub fn simplex_grid<T: Scalar>(n: usize, step: f64) -> Result<Vec<WeightVector<T>>> {
    if n == 0 {
        return Err(Error::invalid("simplex dimension must be positive"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step {step} outside (0, 1]")));
    }
    let m_f = (1.0 / step).round();
    if (m_f * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("1/step is not an integer for step {step}")));
    }
    let m = m_f as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; n];
    compositions(m, 0, &mut parts, &mut |k| {
        let denom = T::from_count(m);
        let lambdas = k.iter().map(|&ki| T::from_count(ki) / denom).collect();
        out.push(WeightVector::new(lambdas));
    });
    out.into_iter().collect()
}

fn compositions(remaining: usize, idx: usize, parts: &mut [usize], emit: &mut impl FnMut(&[usize])) {
    if idx + 1 == parts.len() {
        parts[idx] = remaining;
        emit(parts);
        return;
    }
    for k in 0..=remaining {
        parts[idx] = k;
        compositions(remaining - k, idx + 1, parts, emit);
    }
}

/// A merged policy identified by its weights, with its per-value scores.
/// The logits are rebuilt on demand by [`CandidateModel::policy`].
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateModel<T = f64> {
    pub weights: WeightVector<T>,
    pub scores: Vec<T>,
}

impl<T: Scalar> CandidateModel<T> {
    pub fn policy(&self, reference: &TabularPolicy<T>, thetas: &[ValueVector<T>]) -> Result<TabularPolicy<T>> {
        merge(reference, thetas, &self.weights)
    }
}

/// Merges and scores one candidate per grid entry, in grid order.
pub fn build_candidates<T: Scalar>(
    reference: &TabularPolicy<T>,
    thetas: &[ValueVector<T>],
    grid: &[WeightVector<T>],
    models: &[RewardModel<T>],
    validation: &Universe<T>,
) -> Result<Vec<CandidateModel<T>>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty weight grid"));
    }
    reference.check_universe(validation)?;
    let tables = models
        .iter()
        .map(|m| m.score_table(validation))
        .collect::<Result<Vec<_>>>()?;
    grid.iter()
        .map(|w| {
            let pi = merge(reference, thetas, w)?;
            let scores = tables
                .iter()
                .map(|t| expected_reward_from_table(&pi, t, &validation.prompt_weights))
                .collect();
            Ok(CandidateModel {
                weights: w.clone(),
                scores,
            })
        })
        .collect()
}

fn header(n_lambda: usize, n_score: usize) -> Vec<String> {
    (1..=n_lambda)
        .map(|i| format!("lambda_{i}"))
        .chain((1..=n_score).map(|i| format!("score_{i}")))
        .collect()
}

/// `lambda_1..lambda_n, score_1..score_n`, plus an optional `pareto` flag column.
pub fn write_candidates_csv<T: Scalar>(
    candidates: &[CandidateModel<T>],
    pareto: Option<&[bool]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let (nl, ns) = candidates
        .first()
        .map(|c| (c.weights.len(), c.scores.len()))
        .unwrap_or((0, 0));
    let mut head = header(nl, ns);
    if pareto.is_some() {
        head.push("pareto".into());
    }
    w.write_record(&head)?;
    for (i, c) in candidates.iter().enumerate() {
        let mut row: Vec<String> = c
            .weights
            .lambdas()
            .iter()
            .chain(&c.scores)
            .map(|v| v.to_string())
            .collect();
        if let Some(flags) = pareto {
            row.push(if flags[i] { "1" } else { "0" }.into());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Candidates and, when the file has a `pareto` column, their frontier flags.
pub type CandidateTable<T> = (Vec<CandidateModel<T>>, Option<Vec<bool>>);

/// Reads a candidates (or frontier) CSV.
pub fn read_candidates_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<CandidateTable<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.clone();
    let nl = head.iter().filter(|h| h.starts_with("lambda_")).count();
    let ns = head.iter().filter(|h| h.starts_with("score_")).count();
    let has_flag = head.iter().any(|h| h == "pareto");
    if head.len() != nl + ns + usize::from(has_flag)
        || head.iter().take(nl + ns).ne(header(nl, ns).iter().map(String::as_str))
    {
        return Err(Error::invalid("unexpected candidates CSV header"));
    }
    let mut cands = Vec::new();
    let mut flags = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| -> Result<T> {
            s.parse::<f64>().map(T::lit).map_err(|e| Error::Parse {
                line: i + 2,
                message: format!("bad number {s:?} ({e})"),
            })
        };
        let lambdas = rec.iter().take(nl).map(parse).collect::<Result<Vec<_>>>()?;
        let scores = rec.iter().skip(nl).take(ns).map(parse).collect::<Result<Vec<_>>>()?;
        if has_flag {
            flags.push(&rec[nl + ns] == "1");
        }
        cands.push(CandidateModel {
            weights: WeightVector::new(lambdas)?,
            scores,
        });
    }
    Ok((cands, has_flag.then_some(flags)))
}
