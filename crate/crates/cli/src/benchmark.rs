//! Side-by-side run of the filtered soup and the unfiltered (naive) soup on
//! shared data, rewards and splits.

use vcsoup_core::pareto::default_reference_point;
use vcsoup_core::policy::{TabularPolicy, ValueVector};
use vcsoup_core::soup::CandidateModel;

use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::pipeline::{
    build_soup, diagnostics, evaluation_models, filter_values, generate_data, optional_hypervolume, score_values,
    select_frontier, train_rewards, train_vectors, PairDiagnostics, ParetoOutcome,
};

#[derive(Clone, Debug)]
pub struct ArmOutcome {
    pub tau: f64,
    /// Retained pairs per value.
    pub retained: Vec<usize>,
    pub thetas: Vec<ValueVector>,
    pub validation: Vec<CandidateModel>,
    pub test: Vec<CandidateModel>,
    pub pareto: ParetoOutcome,
    pub diagnostics: Vec<PairDiagnostics>,
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub seed: u64,
    pub conflict_fraction: Option<f64>,
    pub vc: ArmOutcome,
    pub naive: ArmOutcome,
    /// Componentwise minimum over both arms' test candidates, minus 1e-6.
    pub common_test_reference: Vec<f64>,
    pub vc_test_hypervolume: Option<f64>,
    pub naive_test_hypervolume: Option<f64>,
}

/// Runs both arms with `cfg.seed`; `vc_tau` applies to every value.
pub fn run_benchmark(cfg: &PipelineConfig, vc_tau: f64, naive_tau: f64) -> CliResult<BenchmarkOutcome> {
    cfg.validate()?;
    let data = generate_data(cfg)?;
    let fits = train_rewards(cfg, &data.universe, &data.datasets)?;
    let trained: Vec<_> = fits.into_iter().map(|f| f.model).collect();
    let (_, records) = score_values(cfg, &data.universe, &data.datasets, &trained)?;
    let eval = evaluation_models(cfg, &data.labelers, &trained)?;
    let reference = TabularPolicy::for_universe(&data.universe);

    let arm = |tau: f64| -> CliResult<ArmOutcome> {
        let c = cfg.with_tau(tau);
        let filtered = filter_values(&c, &records)?;
        let thetas: Vec<ValueVector> = train_vectors(&c, &reference, &filtered)?
            .into_iter()
            .map(|f| f.theta)
            .collect();
        let (validation, test) = build_soup(&c, &reference, &thetas, &eval, &data.universe, &data.splits)?;
        let pareto = select_frontier(&c, &validation, &test)?;
        let diagnostics = diagnostics(&c, &reference, &data.datasets, &filtered, &thetas)?;
        Ok(ArmOutcome {
            tau,
            retained: filtered.iter().map(|d| d.len()).collect(),
            thetas,
            validation,
            test,
            pareto,
            diagnostics,
        })
    };
    let vc = arm(vc_tau)?;
    let naive = arm(naive_tau)?;

    let all_test: Vec<Vec<f64>> = vc.test.iter().chain(&naive.test).map(|c| c.scores.clone()).collect();
    let common = default_reference_point(&all_test).map_err(|e| crate::error::CliError::stage("pareto", e))?;
    let hv = |a: &ArmOutcome| -> CliResult<Option<f64>> {
        let pts: Vec<Vec<f64>> = a.pareto.test_members.iter().map(|c| c.scores.clone()).collect();
        optional_hypervolume(&pts, &common)
    };
    Ok(BenchmarkOutcome {
        seed: cfg.seed,
        conflict_fraction: data.conflict_fraction,
        vc_test_hypervolume: hv(&vc)?,
        naive_test_hypervolume: hv(&naive)?,
        common_test_reference: common,
        vc,
        naive,
    })
}
