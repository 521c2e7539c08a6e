//! File-based subcommands. Each stage reads only artifacts written by earlier
//! stages into the output directory, plus the configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcsoup_core::consistency::{read_scores_jsonl, write_gap_csv, write_scores_jsonl};
use vcsoup_core::data::{read_pairs_jsonl, write_pairs_jsonl, DatasetManifest, PreferenceDataset, Universe};
use vcsoup_core::policy::{write_loss_csv, TabularPolicy, ValueVector, ValueVectorFile};
use vcsoup_core::reward::{pairwise_accuracy, RewardModel, RewardStats};
use vcsoup_core::soup::{read_candidates_csv, write_candidates_csv};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{
    build_soup, diagnostics, evaluation_models, filter_values, generate_data, select_frontier, train_rewards,
    train_vectors, Splits,
};

pub const STAGES: [&str; 8] = [
    "gen-data",
    "train-reward",
    "score",
    "filter",
    "train-dpo",
    "merge",
    "pareto",
    "verify",
];

/// Output directory plus the stage currently running, for error context.
struct Io<'a> {
    dir: &'a Path,
    stage: &'static str,
    written: Vec<String>,
}

impl<'a> Io<'a> {
    fn new(cfg: &'a PipelineConfig, stage: &'static str) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| CliError::stage(stage, format!("cannot create {}: {e}", cfg.out_dir.display())))?;
        Ok(Self {
            dir: &cfg.out_dir,
            stage,
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn err(&self, name: &str, e: impl std::fmt::Display) -> CliError {
        CliError::stage(self.stage, format!("{name}: {e}"))
    }

    fn read<T>(&self, name: &str, f: impl FnOnce(&Path) -> vcsoup_core::Result<T>) -> CliResult<T> {
        f(&self.path(name)).map_err(|e| self.err(name, e))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> CliResult<T> {
        let text = fs::read_to_string(self.path(name)).map_err(|e| self.err(name, e))?;
        serde_json::from_str(&text).map_err(|e| self.err(name, e))
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&Path) -> vcsoup_core::Result<()>) -> CliResult<()> {
        f(&self.path(name)).map_err(|e| self.err(name, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| self.err(name, e))?;
        text.push('\n');
        fs::write(self.path(name), text).map_err(|e| self.err(name, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DataManifest {
    seed: u64,
    config_hash: String,
    conflict_fraction: Option<f64>,
    values: Vec<ValueSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueSummary {
    name: String,
    pairs: usize,
    has_labeler: bool,
}

fn value_names(cfg: &PipelineConfig) -> Vec<&str> {
    cfg.values.iter().map(|v| v.name.as_str()).collect()
}

fn read_universe(io: &Io) -> CliResult<Universe> {
    io.read("universe.json", |p| Universe::read_json(p))
}

fn read_datasets(io: &Io, cfg: &PipelineConfig, prefix: &str) -> CliResult<Vec<PreferenceDataset>> {
    value_names(cfg)
        .into_iter()
        .map(|n| {
            let d = io.read(&format!("{prefix}_{n}.jsonl"), |p| read_pairs_jsonl(p))?;
            Ok(d.with_value_name(n).with_universe_ref("universe.json"))
        })
        .collect()
}

fn read_models(io: &Io, cfg: &PipelineConfig, prefix: &str) -> CliResult<Vec<RewardModel>> {
    value_names(cfg)
        .into_iter()
        .map(|n| io.read(&format!("{prefix}_{n}.json"), |p| RewardModel::read_json(p)))
        .collect()
}

fn read_thetas(io: &Io, cfg: &PipelineConfig) -> CliResult<Vec<ValueVectorFile>> {
    value_names(cfg)
        .into_iter()
        .map(|n| io.read(&format!("theta_{n}.json"), |p| ValueVectorFile::read_json(p)))
        .collect()
}

fn vectors(files: &[ValueVectorFile]) -> CliResult<Vec<ValueVector>> {
    files
        .iter()
        .map(|f| {
            f.vector()
                .map_err(|e| CliError::stage("merge", format!("theta_{}: {e}", f.value_name)))
        })
        .collect()
}

/// Universe, labelers, pair files with sidecars, prompt splits and a data manifest.
pub fn cmd_gen_data(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "gen-data")?;
    let data = generate_data(cfg)?;
    io.write("universe.json", |p| data.universe.write_json(p))?;
    let mut values = Vec::new();
    for (v, (labeler, ds)) in cfg.values.iter().zip(data.labelers.iter().zip(&data.datasets)) {
        if let Some(l) = labeler {
            io.write(&format!("labeler_{}.json", v.name), |p| l.write_json(p))?;
        }
        io.write(&format!("pairs_{}.jsonl", v.name), |p| write_pairs_jsonl(ds, p))?;
        let sidecar = DatasetManifest {
            value_name: v.name.clone(),
            universe: "universe.json".into(),
        };
        io.write(&format!("pairs_{}.manifest.json", v.name), |p| sidecar.write_json(p))?;
        values.push(ValueSummary {
            name: v.name.clone(),
            pairs: ds.len(),
            has_labeler: labeler.is_some(),
        });
    }
    io.write_json("splits.json", &data.splits)?;
    io.write_json(
        "data_manifest.json",
        &DataManifest {
            seed: cfg.seed,
            config_hash: cfg.hash(),
            conflict_fraction: data.conflict_fraction,
            values,
        },
    )?;
    Ok(io.written)
}

#[derive(Debug, Serialize, Deserialize)]
struct RewardSummary {
    value: String,
    train_accuracy: f64,
    initial_loss: f64,
    final_loss: f64,
}

/// One Bradley–Terry model per value plus its loss trajectory.
pub fn cmd_train_reward(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "train-reward")?;
    let universe = read_universe(&io)?;
    let datasets = read_datasets(&io, cfg, "pairs")?;
    let fits = train_rewards(cfg, &universe, &datasets)?;
    let mut summary = Vec::new();
    for (d, fit) in datasets.iter().zip(&fits) {
        let name = &d.value_name;
        io.write(&format!("reward_{name}.json"), |p| fit.model.write_json(p))?;
        io.write(&format!("reward_loss_{name}.csv"), |p| write_loss_csv(&fit.losses, p))?;
        let acc = pairwise_accuracy(&fit.model, d, &universe).map_err(|e| io.err(name, e))?;
        summary.push(RewardSummary {
            value: name.clone(),
            train_accuracy: acc,
            initial_loss: fit.losses[0],
            final_loss: *fit.losses.last().expect("losses include the initial point"),
        });
    }
    io.write_json("reward_summary.json", &summary)?;
    Ok(io.written)
}

/// Per-value scale stats, consistency records and the two-value gap CSV.
pub fn cmd_score(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "score")?;
    let universe = read_universe(&io)?;
    let datasets = read_datasets(&io, cfg, "pairs")?;
    let models = read_models(&io, cfg, "reward")?;
    let (stats, records) = crate::pipeline::score_values(cfg, &universe, &datasets, &models)?;
    let stats_map: BTreeMap<&str, &RewardStats> = value_names(cfg).into_iter().zip(&stats).collect();
    io.write_json("stats.json", &stats_map)?;
    for (d, r) in datasets.iter().zip(&records) {
        let name = &d.value_name;
        io.write(&format!("scores_{name}.jsonl"), |p| write_scores_jsonl(r, p))?;
        io.write(&format!("gaps_{name}.csv"), |p| write_gap_csv(r, p))?;
    }
    Ok(io.written)
}

#[derive(Debug, Serialize, Deserialize)]
struct Retention {
    value: String,
    tau: f64,
    total: usize,
    retained: usize,
    fraction: f64,
}

/// Threshold filtering of every value's scored pairs.
pub fn cmd_filter(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "filter")?;
    let records = value_names(cfg)
        .into_iter()
        .map(|n| io.read(&format!("scores_{n}.jsonl"), |p| read_scores_jsonl::<f64>(p)))
        .collect::<CliResult<Vec<_>>>()?;
    let filtered = filter_values(cfg, &records)?;
    let mut retention = Vec::new();
    for ((v, r), d) in cfg.values.iter().zip(&records).zip(&filtered) {
        io.write(&format!("filtered_{}.jsonl", v.name), |p| write_pairs_jsonl(d, p))?;
        retention.push(Retention {
            value: v.name.clone(),
            tau: cfg.tau_for(v),
            total: r.len(),
            retained: d.len(),
            fraction: if r.is_empty() {
                0.0
            } else {
                d.len() as f64 / r.len() as f64
            },
        });
    }
    io.write_json("retention.json", &retention)?;
    Ok(io.written)
}

/// One value vector per value, trained by DPO on its filtered subset.
pub fn cmd_train_dpo(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "train-dpo")?;
    let universe = read_universe(&io)?;
    let filtered = read_datasets(&io, cfg, "filtered")?;
    let retention: Vec<Retention> = io.read_json("retention.json")?;
    let reference = TabularPolicy::for_universe(&universe);
    let fits = train_vectors(cfg, &reference, &filtered)?;
    for ((d, fit), r) in filtered.iter().zip(&fits).zip(&retention) {
        let name = &d.value_name;
        let file = ValueVectorFile::new(&fit.theta, name, r.tau, cfg.dpo);
        io.write(&format!("theta_{name}.json"), |p| file.write_json(p))?;
        io.write(&format!("dpo_loss_{name}.csv"), |p| write_loss_csv(&fit.losses, p))?;
    }
    Ok(io.written)
}

fn load_eval_models(io: &Io, cfg: &PipelineConfig) -> CliResult<Vec<RewardModel>> {
    let trained = read_models(io, cfg, "reward")?;
    let labelers = value_names(cfg)
        .into_iter()
        .map(|n| {
            let name = format!("labeler_{n}.json");
            if io.path(&name).exists() {
                io.read(&name, |p| RewardModel::read_json(p)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    evaluation_models(cfg, &labelers, &trained)
}

/// Candidates over the weight grid, scored on validation and on test prompts.
pub fn cmd_merge(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "merge")?;
    let universe = read_universe(&io)?;
    let splits: Splits = io.read_json("splits.json")?;
    let thetas = vectors(&read_thetas(&io, cfg)?)?;
    let eval = load_eval_models(&io, cfg)?;
    let reference = TabularPolicy::for_universe(&universe);
    let (val, test) = build_soup(cfg, &reference, &thetas, &eval, &universe, &splits)?;
    io.write("candidates.csv", |p| write_candidates_csv(&val, None, p))?;
    io.write("candidates_test.csv", |p| write_candidates_csv(&test, None, p))?;
    Ok(io.written)
}

#[derive(Debug, Serialize, Deserialize)]
struct ParetoSummary {
    candidates: usize,
    members: usize,
    dominated: usize,
    validation_reference: Vec<f64>,
    test_reference: Vec<f64>,
    validation_hypervolume: Option<f64>,
    test_hypervolume: Option<f64>,
}

/// Frontier selected on validation scores, with the same members' test scores.
pub fn cmd_pareto(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "pareto")?;
    let (val, _) = io.read("candidates.csv", |p| read_candidates_csv::<f64>(p))?;
    let (test, _) = io.read("candidates_test.csv", |p| read_candidates_csv::<f64>(p))?;
    let out = select_frontier(cfg, &val, &test)?;
    io.write("frontier.csv", |p| write_candidates_csv(&out.frontier.members, None, p))?;
    io.write("frontier_test.csv", |p| {
        write_candidates_csv(&out.test_members, None, p)
    })?;
    let mask = out.frontier.mask(val.len());
    io.write("candidates_pareto.csv", |p| write_candidates_csv(&val, Some(&mask), p))?;
    io.write_json(
        "pareto_summary.json",
        &ParetoSummary {
            candidates: val.len(),
            members: out.frontier.members.len(),
            dominated: out.frontier.dominated_count,
            validation_reference: out.validation_reference,
            test_reference: out.test_reference,
            validation_hypervolume: out.validation_hypervolume,
            test_hypervolume: out.test_hypervolume,
        },
    )?;
    Ok(io.written)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConflictSummary {
    matched_prompts: usize,
    compared_prompts: usize,
    mean_cosine: f64,
    negative_fraction: f64,
    full_batch_cosine: f64,
}

impl From<&vcsoup_core::theory::ConflictReport> for ConflictSummary {
    fn from(r: &vcsoup_core::theory::ConflictReport) -> Self {
        Self {
            matched_prompts: r.matched_prompts.len(),
            compared_prompts: r.per_pair_cosines.len(),
            mean_cosine: r.mean_cosine,
            negative_fraction: r.negative_fraction,
            full_batch_cosine: r.full_batch_cosine,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairReport {
    value_i: String,
    value_j: String,
    raw_conflict: ConflictSummary,
    filtered_conflict: ConflictSummary,
    l2_distance: f64,
    cosine: f64,
    lh: Option<f64>,
    max_gap: f64,
    bound_holds: Option<bool>,
}

/// Gradient conflict before and after filtering, value-vector geometry and
/// the merging-gap scan for every pair of values.
pub fn cmd_verify(cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    let mut io = Io::new(cfg, "verify")?;
    let universe = read_universe(&io)?;
    let raw = read_datasets(&io, cfg, "pairs")?;
    let filtered = read_datasets(&io, cfg, "filtered")?;
    let files = read_thetas(&io, cfg)?;
    let thetas = vectors(&files)?;
    // the losses are those the vectors were trained on
    let mut c = cfg.clone();
    c.dpo = files[0].train_config;
    let reference = TabularPolicy::for_universe(&universe);
    let diag = diagnostics(&c, &reference, &raw, &filtered, &thetas)?;
    let mut reports = Vec::new();
    for d in &diag {
        let (a, b) = (&cfg.values[d.i].name, &cfg.values[d.j].name);
        io.write(&format!("gap_scan_{a}_vs_{b}.csv"), |p| d.gap_scan.write_csv(p))?;
        io.write(&format!("geometry_{a}_vs_{b}.csv"), |p| d.geometry.write_csv(p))?;
        reports.push(PairReport {
            value_i: a.clone(),
            value_j: b.clone(),
            raw_conflict: (&d.raw_conflict).into(),
            filtered_conflict: (&d.filtered_conflict).into(),
            l2_distance: d.geometry.l2_distance,
            cosine: d.geometry.cosine,
            lh: d.gap_scan.lh,
            max_gap: d.gap_scan.max_gap(),
            bound_holds: d.gap_scan.bound_holds(1e-8),
        });
    }
    io.write_json("verify.json", &reports)?;
    Ok(io.written)
}

pub fn run_stage(name: &str, cfg: &PipelineConfig) -> CliResult<Vec<String>> {
    match name {
        "gen-data" => cmd_gen_data(cfg),
        "train-reward" => cmd_train_reward(cfg),
        "score" => cmd_score(cfg),
        "filter" => cmd_filter(cfg),
        "train-dpo" => cmd_train_dpo(cfg),
        "merge" => cmd_merge(cfg),
        "pareto" => cmd_pareto(cfg),
        "verify" => cmd_verify(cfg),
        other => Err(CliError::Config(format!("unknown stage {other}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigest {
    pub stage: String,
    /// File name to lowercase hex SHA-256, sorted by name.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageDigest>,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::stage("pipeline", e))?;
        serde_json::from_str(&text).map_err(|e| CliError::stage("pipeline", e))
    }
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Every stage in order, then `MANIFEST.json`.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> CliResult<Manifest> {
    cfg.validate()?;
    let mut stages = Vec::new();
    for name in STAGES {
        let written = run_stage(name, cfg)?;
        let mut outputs = BTreeMap::new();
        for f in written {
            let digest =
                file_digest(&cfg.out_dir.join(&f)).map_err(|e| CliError::stage("pipeline", format!("{f}: {e}")))?;
            outputs.insert(f, digest);
        }
        stages.push(StageDigest {
            stage: name.to_string(),
            outputs,
        });
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        stages,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::stage("pipeline", e))?;
    text.push('\n');
    fs::write(cfg.out_dir.join("MANIFEST.json"), text).map_err(|e| CliError::stage("pipeline", e))?;
    Ok(manifest)
}
