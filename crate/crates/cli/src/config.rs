//! Pipeline configuration: one JSON document, overridable by CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vcsoup_core::consistency::ZeroNormPolicy;
use vcsoup_core::policy::DpoTrainConfig;
use vcsoup_core::reward::{BtTrainConfig, RewardModel};

use crate::error::CliError;

/// How strongly the generated value labelers disagree. The pairwise cosine
/// between labeler weight vectors is 0.8, 0.5 and 0.0 respectively, which
/// for isotropic features gives a per-pair sign-disagreement probability of
/// `acos(cos)/π`: about 0.20, 0.33 and 0.50.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictLevel {
    Low,
    Medium,
    High,
}

impl ConflictLevel {
    pub fn labeler_cosine(self) -> f64 {
        match self {
            ConflictLevel::Low => 0.8,
            ConflictLevel::Medium => 0.5,
            ConflictLevel::High => 0.0,
        }
    }
}

impl std::str::FromStr for ConflictLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(format!("unknown conflict level {other:?} (low|medium|high)")),
        }
    }
}

/// Which reward models score candidates for Pareto selection and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalModels {
    /// The ground-truth labelers that generated the data.
    Labeler,
    /// The Bradley–Terry models fitted in stage 1.
    Trained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSpec {
    pub name: String,
    /// Explicit ground-truth labeler; generated from `conflict` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeler: Option<RewardModel>,
    /// Pre-built pairs JSONL to ingest instead of generating pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Per-value threshold; falls back to the shared `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl ValueSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            labeler: None,
            dataset: None,
            tau: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseSpec {
    /// Existing universe JSON; generated from the counts below when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub num_prompts: usize,
    pub responses_per_prompt: usize,
    pub feature_dim: usize,
}

impl Default for UniverseSpec {
    fn default() -> Self {
        Self {
            path: None,
            num_prompts: 200,
            responses_per_prompt: 4,
            feature_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub universe: UniverseSpec,
    pub values: Vec<ValueSpec>,
    pub conflict: ConflictLevel,
    pub pairs_per_value: usize,
    pub reward: BtTrainConfig,
    pub dpo: DpoTrainConfig,
    pub tau: f64,
    pub zero_norm_policy: ZeroNormPolicy,
    /// Substitute σ = 1 for a reward model whose scores have zero spread.
    pub unit_scale_fallback: bool,
    /// Simplex grid step; 0.1 for two values and 0.2 otherwise when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    pub validation_prompts: usize,
    pub test_prompts: usize,
    pub eval_with: EvalModels,
    pub dedupe: bool,
    pub gap_scan_points: usize,
    pub lh_probe_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            universe: UniverseSpec::default(),
            values: vec![ValueSpec::named("helpfulness"), ValueSpec::named("harmlessness")],
            conflict: ConflictLevel::High,
            pairs_per_value: 2000,
            reward: BtTrainConfig::default(),
            dpo: DpoTrainConfig::default(),
            tau: 0.7,
            zero_norm_policy: ZeroNormPolicy::Drop,
            unit_scale_fallback: false,
            grid_step: None,
            validation_prompts: 50,
            test_prompts: 150,
            eval_with: EvalModels::Labeler,
            dedupe: false,
            gap_scan_points: 21,
            lh_probe_points: 4,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.values.len() < 2 {
            return bad("at least two values are required".into());
        }
        let mut names: Vec<&str> = self.values.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.values.len() {
            return bad("value names must be unique".into());
        }
        for v in &self.values {
            if v.name.is_empty()
                || !v
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return bad(format!("value name {:?} must be non-empty [A-Za-z0-9_-]", v.name));
            }
            let tau = self.tau_for(v);
            if !(-1.0..=1.0).contains(&tau) {
                return bad(format!("tau {tau} for value {} outside [-1, 1]", v.name));
            }
        }
        if self.values.iter().any(|v| v.dataset.is_some()) && self.universe.path.is_none() {
            return bad("ingesting a dataset requires universe.path".into());
        }
        let generated_labelers = self
            .values
            .iter()
            .filter(|v| v.labeler.is_none() && v.dataset.is_none())
            .count();
        if generated_labelers > 0 && self.universe.feature_dim < self.values.len() + 1 {
            return bad(format!(
                "feature_dim must be at least {} to generate labelers",
                self.values.len() + 1
            ));
        }
        if self.validation_prompts == 0 || self.test_prompts == 0 {
            return bad("validation and test splits must be non-empty".into());
        }
        if self.universe.path.is_none() && self.validation_prompts + self.test_prompts > self.universe.num_prompts {
            return bad(format!(
                "validation ({}) + test ({}) prompts exceed the universe ({})",
                self.validation_prompts, self.test_prompts, self.universe.num_prompts
            ));
        }
        if self.gap_scan_points < 3 || self.lh_probe_points < 2 {
            return bad("gap_scan_points >= 3 and lh_probe_points >= 2 required".into());
        }
        self.reward.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.dpo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let step = self.grid_step();
        let m = (1.0 / step).round();
        if !(step > 0.0 && step <= 1.0) || (m * step - 1.0).abs() > 1e-9 {
            return bad(format!("grid step {step} must divide 1"));
        }
        Ok(())
    }

    pub fn tau_for(&self, value: &ValueSpec) -> f64 {
        value.tau.unwrap_or(self.tau)
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(if self.values.len() == 2 { 0.1 } else { 0.2 })
    }

    /// Same configuration with every threshold set to `tau`.
    pub fn with_tau(&self, tau: f64) -> Self {
        let mut c = self.clone();
        c.tau = tau;
        for v in &mut c.values {
            v.tau = None;
        }
        c
    }

    /// SHA-256 of the canonical JSON serialization, excluding `out_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Flag values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
    pub grid_step: Option<f64>,
    pub beta: Option<f64>,
    pub conflict: Option<ConflictLevel>,
    pub dedupe: bool,
}

/// Flag > config file > default. The seed must come from the file or a flag.
pub fn resolve(config_path: Option<&Path>, o: &Overrides) -> Result<PipelineConfig, CliError> {
    let (mut cfg, file_has_seed) = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let has_seed = raw.get("seed").is_some();
            let cfg = serde_json::from_value(raw).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (cfg, has_seed)
        }
        None => (PipelineConfig::default(), false),
    };
    match o.seed {
        Some(s) => cfg.seed = s,
        None if !file_has_seed => {
            return Err(CliError::Config(
                "no seed: pass --seed or set \"seed\" in the config".into(),
            ))
        }
        None => {}
    }
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = o.tau {
        cfg = cfg.with_tau(t);
    }
    if let Some(g) = o.grid_step {
        cfg.grid_step = Some(g);
    }
    if let Some(b) = o.beta {
        cfg.dpo.beta = b;
    }
    if let Some(c) = o.conflict {
        cfg.conflict = c;
    }
    cfg.dedupe |= o.dedupe;
    cfg.validate()?;
    Ok(cfg)
}
