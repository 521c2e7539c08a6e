//! In-memory stages. The file-based subcommands in `stages` wrap these.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vcsoup_core::consistency::{filter_dataset, score_dataset, ConsistencyRecord, FilterConfig};
use vcsoup_core::data::{
    conflict_fraction, generate_pairs, generate_universe, read_pairs_jsonl, PreferenceDataset, Universe,
};
use vcsoup_core::pareto::{default_reference_point, hypervolume, pareto_filter, ParetoFrontier};
use vcsoup_core::policy::{train_dpo, DpoFit, TabularPolicy, ValueVector};
use vcsoup_core::reward::{compute_stats, fit_bradley_terry, BtFit, RewardKind, RewardModel, RewardStats};
use vcsoup_core::rng::{derive_seed, substream};
use vcsoup_core::soup::{build_candidates, simplex_grid, CandidateModel};
use vcsoup_core::theory::{
    estimate_lh, gradient_conflict, merging_gap_scan, vector_geometry, ConflictReport, DpoObjective, GeometryReport,
    LhConfig, MergeGapReport,
};

use crate::config::{EvalModels, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint sorted validation and test prompt sets drawn by a seeded shuffle.
pub fn make_splits(num_prompts: usize, validation: usize, test: usize, seed: u64) -> CliResult<Splits> {
    if validation + test > num_prompts {
        return Err(CliError::Config(format!(
            "validation ({validation}) + test ({test}) prompts exceed the universe ({num_prompts})"
        )));
    }
    let mut ids: Vec<usize> = (0..num_prompts).collect();
    ids.shuffle(&mut substream(seed, "splits"));
    let mut v = ids[..validation].to_vec();
    let mut t = ids[validation..validation + test].to_vec();
    v.sort_unstable();
    t.sort_unstable();
    Ok(Splits { validation: v, test: t })
}

/// Unit-norm labelers `√c·u + √(1−c)·v_k` over orthonormal `u, v_1..v_n`,
/// so every pair of labelers has cosine `c`.
pub fn generate_labelers(cosine: f64, n: usize, feature_dim: usize, seed: u64) -> CliResult<Vec<RewardModel>> {
    if feature_dim < n + 1 {
        return Err(CliError::Config(format!(
            "feature_dim {feature_dim} too small for {n} generated labelers"
        )));
    }
    let mut rng = substream(seed, "labelers");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    while basis.len() < n + 1 {
        let mut v: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let (a, b) = (cosine.sqrt(), (1.0 - cosine).sqrt());
    Ok((1..=n)
        .map(|k| {
            let w = basis[0].iter().zip(&basis[k]).map(|(u, v)| a * u + b * v).collect();
            RewardModel::new(RewardKind::LinearAnalytic, w, 0.0)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct DataBundle {
    pub universe: Universe,
    /// Ground-truth labeler per value; `None` for ingested datasets without one.
    pub labelers: Vec<Option<RewardModel>>,
    pub datasets: Vec<PreferenceDataset>,
    pub splits: Splits,
    /// Over the union of all datasets, when every labeler is known.
    pub conflict_fraction: Option<f64>,
}

pub fn generate_data(cfg: &PipelineConfig) -> CliResult<DataBundle> {
    let stage = "gen-data";
    let universe: Universe = match &cfg.universe.path {
        Some(p) => Universe::read_json(p).map_err(|e| CliError::stage(stage, format!("{}: {e}", p.display())))?,
        None => generate_universe(
            cfg.universe.num_prompts,
            cfg.universe.responses_per_prompt,
            cfg.universe.feature_dim,
            derive_seed(cfg.seed, "universe"),
        )
        .map_err(|e| CliError::stage(stage, e))?,
    };
    let n = cfg.values.len();
    let needs_generated = cfg.values.iter().any(|v| v.labeler.is_none() && v.dataset.is_none());
    let generated = if needs_generated {
        generate_labelers(cfg.conflict.labeler_cosine(), n, universe.feature_dim, cfg.seed)?
    } else {
        Vec::new()
    };
    let mut labelers = Vec::with_capacity(n);
    let mut datasets = Vec::with_capacity(n);
    for (k, v) in cfg.values.iter().enumerate() {
        let labeler = match (&v.labeler, &v.dataset) {
            (Some(l), _) => Some(l.clone()),
            (None, None) => Some(generated[k].clone()),
            (None, Some(_)) => None,
        };
        if let Some(l) = &labeler {
            if l.weight.len() != universe.feature_dim {
                return Err(CliError::Config(format!(
                    "labeler for {} has {} weights, universe has {} features",
                    v.name,
                    l.weight.len(),
                    universe.feature_dim
                )));
            }
        }
        let ds = match &v.dataset {
            Some(p) => read_pairs_jsonl(p)
                .and_then(|d| d.validate(&universe).map(|_| d))
                .map_err(|e| CliError::stage(stage, format!("{}: {e}", p.display())))?,
            None => generate_pairs(
                &universe,
                labeler.as_ref().expect("generated values have labelers"),
                cfg.pairs_per_value,
                derive_seed(cfg.seed, &format!("pairs-{}", v.name)),
            )
            .map_err(|e| CliError::stage(stage, format!("value {}: {e}", v.name)))?,
        };
        labelers.push(labeler);
        datasets.push(ds.with_value_name(v.name.clone()).with_universe_ref("universe.json"));
    }
    if cfg.eval_with == EvalModels::Labeler && labelers.iter().any(Option::is_none) {
        return Err(CliError::Config(
            "eval_with = labeler needs a labeler for every value".into(),
        ));
    }
    let splits = make_splits(universe.num_prompts, cfg.validation_prompts, cfg.test_prompts, cfg.seed)?;
    let conflict = if labelers.iter().all(Option::is_some) {
        let models: Vec<RewardModel> = labelers.iter().flatten().cloned().collect();
        let union = PreferenceDataset::new("union", datasets.iter().flat_map(|d| d.pairs.iter().copied()).collect());
        Some(conflict_fraction(&union, &models, &universe).map_err(|e| CliError::stage(stage, e))?)
    } else {
        None
    };
    Ok(DataBundle {
        universe,
        labelers,
        datasets,
        splits,
        conflict_fraction: conflict,
    })
}

pub fn train_rewards(
    cfg: &PipelineConfig,
    universe: &Universe,
    datasets: &[PreferenceDataset],
) -> CliResult<Vec<BtFit>> {
    datasets
        .iter()
        .map(|d| {
            fit_bradley_terry(d, universe, &cfg.reward)
                .map_err(|e| CliError::stage("train-reward", format!("value {}: {e}", d.value_name)))
        })
        .collect()
}

/// Per-value stats over each value's own dataset, then one record per pair of every dataset.
pub fn score_values(
    cfg: &PipelineConfig,
    universe: &Universe,
    datasets: &[PreferenceDataset],
    models: &[RewardModel],
) -> CliResult<(Vec<RewardStats>, Vec<Vec<ConsistencyRecord>>)> {
    let stage = "score";
    let stats = models
        .iter()
        .zip(datasets)
        .map(|(m, d)| {
            let s = compute_stats(m, d, universe)
                .map_err(|e| CliError::stage(stage, format!("value {}: {e}", d.value_name)))?;
            Ok(if cfg.unit_scale_fallback {
                s.with_unit_scale_fallback()
            } else {
                s
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let records = datasets
        .iter()
        .map(|d| {
            score_dataset(d, models, &stats, universe)
                .map_err(|e| CliError::stage(stage, format!("value {}: {e}", d.value_name)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((stats, records))
}

pub fn filter_values(cfg: &PipelineConfig, records: &[Vec<ConsistencyRecord>]) -> CliResult<Vec<PreferenceDataset>> {
    cfg.values
        .iter()
        .zip(records)
        .map(|(v, r)| {
            let fc = FilterConfig {
                tau: cfg.tau_for(v),
                zero_norm_policy: cfg.zero_norm_policy,
            };
            fc.validate().map_err(|e| CliError::Config(e.to_string()))?;
            Ok(filter_dataset(r, &fc)
                .with_value_name(v.name.clone())
                .with_universe_ref("universe.json"))
        })
        .collect()
}

pub fn train_vectors(
    cfg: &PipelineConfig,
    reference: &TabularPolicy,
    filtered: &[PreferenceDataset],
) -> CliResult<Vec<DpoFit>> {
    filtered
        .iter()
        .map(|d| {
            train_dpo(reference, d, &cfg.dpo)
                .map_err(|e| CliError::stage("train-dpo", format!("value {}: {e}", d.value_name)))
        })
        .collect()
}

/// The models that score candidates, per `eval_with`.
pub fn evaluation_models(
    cfg: &PipelineConfig,
    labelers: &[Option<RewardModel>],
    trained: &[RewardModel],
) -> CliResult<Vec<RewardModel>> {
    match cfg.eval_with {
        EvalModels::Trained => Ok(trained.to_vec()),
        EvalModels::Labeler => labelers
            .iter()
            .map(|l| {
                l.clone()
                    .ok_or_else(|| CliError::Config("eval_with = labeler needs a labeler for every value".into()))
            })
            .collect(),
    }
}

/// Candidates for every grid weight, scored on the validation and the test prompts.
pub fn build_soup(
    cfg: &PipelineConfig,
    reference: &TabularPolicy,
    thetas: &[ValueVector],
    eval_models: &[RewardModel],
    universe: &Universe,
    splits: &Splits,
) -> CliResult<(Vec<CandidateModel>, Vec<CandidateModel>)> {
    let stage = "merge";
    let err = |e: vcsoup_core::Error| CliError::stage(stage, e);
    let grid = simplex_grid(thetas.len(), cfg.grid_step()).map_err(err)?;
    let val = universe.with_prompt_subset(&splits.validation).map_err(err)?;
    let test = universe.with_prompt_subset(&splits.test).map_err(err)?;
    let v = build_candidates(reference, thetas, &grid, eval_models, &val).map_err(err)?;
    let t = build_candidates(reference, thetas, &grid, eval_models, &test).map_err(err)?;
    Ok((v, t))
}

#[derive(Clone, Debug)]
pub struct ParetoOutcome {
    pub frontier: ParetoFrontier,
    /// Test-set scores of the validation-selected members, in member order.
    pub test_members: Vec<CandidateModel>,
    pub validation_reference: Vec<f64>,
    pub test_reference: Vec<f64>,
    pub validation_hypervolume: Option<f64>,
    pub test_hypervolume: Option<f64>,
}

fn scores_of(c: &[CandidateModel]) -> Vec<Vec<f64>> {
    c.iter().map(|m| m.scores.clone()).collect()
}

/// Hypervolume for up to three values; `None` beyond that.
pub fn optional_hypervolume(points: &[Vec<f64>], reference: &[f64]) -> CliResult<Option<f64>> {
    if reference.len() > 3 {
        return Ok(None);
    }
    hypervolume(points, reference)
        .map(Some)
        .map_err(|e| CliError::stage("pareto", e))
}

/// Selects on validation and reports the same members on test. Test
/// candidates must be in the same grid order as the validation ones.
pub fn select_frontier(
    cfg: &PipelineConfig,
    validation: &[CandidateModel],
    test: &[CandidateModel],
) -> CliResult<ParetoOutcome> {
    let stage = "pareto";
    if validation.len() != test.len() {
        return Err(CliError::stage(
            stage,
            format!("{} validation but {} test candidates", validation.len(), test.len()),
        ));
    }
    let mut frontier = pareto_filter(validation).map_err(|e| CliError::stage(stage, e))?;
    if cfg.dedupe {
        frontier = frontier.deduplicated();
    }
    let test_members: Vec<CandidateModel> = frontier.member_indices.iter().map(|&i| test[i].clone()).collect();
    let validation_reference =
        default_reference_point(&scores_of(validation)).map_err(|e| CliError::stage(stage, e))?;
    let test_reference = default_reference_point(&scores_of(test)).map_err(|e| CliError::stage(stage, e))?;
    Ok(ParetoOutcome {
        validation_hypervolume: optional_hypervolume(&frontier.member_scores(), &validation_reference)?,
        test_hypervolume: optional_hypervolume(&scores_of(&test_members), &test_reference)?,
        frontier,
        test_members,
        validation_reference,
        test_reference,
    })
}

#[derive(Clone, Debug)]
pub struct PairDiagnostics {
    pub i: usize,
    pub j: usize,
    pub raw_conflict: ConflictReport,
    pub filtered_conflict: ConflictReport,
    pub geometry: GeometryReport,
    pub gap_scan: MergeGapReport,
}

/// Conflict before and after filtering, vector geometry and the merging-gap
/// scan for every value pair `i < j`. The scanned loss is the mean of the
/// two values' DPO losses on their filtered subsets.
pub fn diagnostics(
    cfg: &PipelineConfig,
    reference: &TabularPolicy,
    raw: &[PreferenceDataset],
    filtered: &[PreferenceDataset],
    thetas: &[ValueVector],
) -> CliResult<Vec<PairDiagnostics>> {
    let stage = "verify";
    let beta = cfg.dpo.beta;
    let mut out = Vec::new();
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            let ctx = |e: vcsoup_core::Error| {
                CliError::stage(
                    stage,
                    format!("values {} / {}: {e}", raw[i].value_name, raw[j].value_name),
                )
            };
            let raw_conflict = gradient_conflict(reference, &raw[i], &raw[j], beta).map_err(ctx)?;
            let filtered_conflict = gradient_conflict(reference, &filtered[i], &filtered[j], beta).map_err(ctx)?;
            let geometry = vector_geometry(&thetas[i], &thetas[j]).map_err(ctx)?;
            let objective = DpoObjective::new(reference, vec![&filtered[i], &filtered[j]], beta).map_err(ctx)?;
            let lh_cfg = LhConfig {
                seed: derive_seed(cfg.seed, &format!("lh-{i}-{j}")),
                ..LhConfig::default()
            };
            let lh = estimate_lh(
                &objective,
                &thetas[i].delta,
                &thetas[j].delta,
                cfg.lh_probe_points,
                &lh_cfg,
            )
            .map_err(ctx)?;
            let gap_scan = merging_gap_scan(
                &objective,
                &thetas[i].delta,
                &thetas[j].delta,
                cfg.gap_scan_points,
                Some(lh),
            )
            .map_err(ctx)?;
            out.push(PairDiagnostics {
                i,
                j,
                raw_conflict,
                filtered_conflict,
                geometry,
                gap_scan,
            });
        }
    }
    Ok(out)
}
