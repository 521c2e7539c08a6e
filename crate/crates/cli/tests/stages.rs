use std::path::Path;
use std::process::Command;

use vcsoup_cli::config::ValueSpec;
use vcsoup_cli::stages::{cmd_pipeline, file_digest, run_stage, Manifest, STAGES};
use vcsoup_cli::{CliError, PipelineConfig};
use vcsoup_core::consistency::read_scores_jsonl;
use vcsoup_core::data::{read_pairs_jsonl, DatasetManifest, Universe};
use vcsoup_core::policy::ValueVectorFile;
use vcsoup_core::reward::RewardModel;
use vcsoup_core::soup::read_candidates_csv;

fn small(seed: u64, out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed,
        out_dir: out.to_path_buf(),
        pairs_per_value: 300,
        validation_prompts: 10,
        test_prompts: 20,
        gap_scan_points: 5,
        ..PipelineConfig::default()
    };
    c.universe.num_prompts = 40;
    c.reward.epochs = 50;
    c.dpo.epochs = 40;
    c
}

#[test]
fn pipeline_equals_manual_stages() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let manifest = cmd_pipeline(&small(4, a.path())).unwrap();
    let manual = small(4, b.path());
    for stage in STAGES {
        run_stage(stage, &manual).unwrap();
    }
    for s in &manifest.stages {
        for (file, digest) in &s.outputs {
            assert_eq!(&file_digest(&b.path().join(file)).unwrap(), digest, "{file}");
        }
    }
    let reread = Manifest::read(&a.path().join("MANIFEST.json")).unwrap();
    assert_eq!(reread, manifest);
    assert_eq!(manifest.seed, 4);
}

#[test]
fn outputs_round_trip_through_readers() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small(5, d.path());
    cmd_pipeline(&cfg).unwrap();
    let p = |f: &str| d.path().join(f);
    let u = Universe::<f64>::read_json(p("universe.json")).unwrap();
    u.validate().unwrap();
    for v in ["helpfulness", "harmlessness"] {
        let pairs = read_pairs_jsonl(p(&format!("pairs_{v}.jsonl"))).unwrap();
        assert_eq!(pairs.len(), 300);
        pairs.validate(&u).unwrap();
        assert_eq!(
            DatasetManifest::read_json(p(&format!("pairs_{v}.manifest.json")))
                .unwrap()
                .value_name,
            v
        );
        RewardModel::<f64>::read_json(p(&format!("reward_{v}.json"))).unwrap();
        RewardModel::<f64>::read_json(p(&format!("labeler_{v}.json"))).unwrap();
        assert_eq!(
            read_scores_jsonl::<f64>(p(&format!("scores_{v}.jsonl"))).unwrap().len(),
            300
        );
        read_pairs_jsonl(p(&format!("filtered_{v}.jsonl")))
            .unwrap()
            .validate(&u)
            .unwrap();
        let theta = ValueVectorFile::<f64>::read_json(p(&format!("theta_{v}.json"))).unwrap();
        assert_eq!(theta.shape, [40, 4]);
        assert_eq!(theta.tau, 0.7);
    }
    let (cands, flags) = read_candidates_csv::<f64>(p("candidates.csv")).unwrap();
    assert_eq!(cands.len(), 11);
    assert!(flags.is_none());
    let (front, _) = read_candidates_csv::<f64>(p("frontier.csv")).unwrap();
    let (front_test, _) = read_candidates_csv::<f64>(p("frontier_test.csv")).unwrap();
    assert!(!front.is_empty());
    assert_eq!(front.len(), front_test.len());
    let (_, flags) = read_candidates_csv::<f64>(p("candidates_pareto.csv")).unwrap();
    assert_eq!(flags.unwrap().iter().filter(|&&f| f).count(), front.len());
}

#[test]
fn tau_minus_one_is_the_naive_soup() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small(6, a.path()).with_tau(-1.0);
    cmd_pipeline(&cfg).unwrap();
    // naive soup: train on the raw pairs directly, skipping the filter
    let naive = small(6, b.path()).with_tau(-1.0);
    for stage in ["gen-data", "train-reward", "score"] {
        run_stage(stage, &naive).unwrap();
    }
    for v in ["helpfulness", "harmlessness"] {
        let raw = std::fs::read(b.path().join(format!("pairs_{v}.jsonl"))).unwrap();
        std::fs::write(b.path().join(format!("filtered_{v}.jsonl")), raw).unwrap();
    }
    let retention = std::fs::read(a.path().join("retention.json")).unwrap();
    std::fs::write(b.path().join("retention.json"), retention).unwrap();
    for stage in ["train-dpo", "merge"] {
        run_stage(stage, &naive).unwrap();
    }
    assert_eq!(
        std::fs::read(a.path().join("candidates.csv")).unwrap(),
        std::fs::read(b.path().join("candidates.csv")).unwrap()
    );
}

#[test]
fn empty_filtered_subset_names_the_value() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(7, d.path());
    cfg.values[1].tau = Some(1.0);
    let err = cmd_pipeline(&cfg).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Stage { stage: "train-dpo", .. }), "{msg}");
    assert!(
        msg.contains("harmlessness") && msg.contains("cannot train on empty filtered subset"),
        "{msg}"
    );
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn three_values_run_end_to_end() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(8, d.path());
    cfg.values.push(ValueSpec::named("honesty"));
    let m = cmd_pipeline(&cfg).unwrap();
    let (cands, _) = read_candidates_csv::<f64>(d.path().join("candidates.csv")).unwrap();
    assert_eq!(cands.len(), 21);
    assert!(m
        .stages
        .iter()
        .any(|s| s.outputs.contains_key("gap_scan_harmlessness_vs_honesty.csv")));
}

#[test]
fn ingested_dataset_without_labeler_needs_trained_eval() {
    let src = tempfile::tempdir().unwrap();
    cmd_pipeline(&small(9, src.path())).unwrap();
    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(9, d.path());
    cfg.universe.path = Some(src.path().join("universe.json"));
    cfg.values[0].dataset = Some(src.path().join("pairs_helpfulness.jsonl"));
    assert!(matches!(cmd_pipeline(&cfg), Err(CliError::Config(_))));
    cfg.eval_with = vcsoup_cli::config::EvalModels::Trained;
    cmd_pipeline(&cfg).unwrap();
    assert_eq!(
        std::fs::read(d.path().join("pairs_helpfulness.jsonl")).unwrap(),
        std::fs::read(src.path().join("pairs_helpfulness.jsonl")).unwrap()
    );
}

fn vcsoup(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vcsoup")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let cfg_path = d.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"seed": 3, "pairs_per_value": 200, "universe": {"num_prompts": 30}, "validation_prompts": 10, "test_prompts": 20, "dpo": {"epochs": 20}, "reward": {"epochs": 20}}"#,
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let o = vcsoup(&["gen-data", "--out", out]);
    assert_eq!(o.status.code(), Some(2), "missing seed");
    let o = vcsoup(&["filter", "--config", cfg, "--out", out, "--tau", "3"]);
    assert_eq!(o.status.code(), Some(2), "tau out of range");
    let o = vcsoup(&["score", "--config", cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage score"));
    let o = vcsoup(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));

    for args in [
        vec!["gen-data", "--conflict", "high"],
        vec!["train-reward"],
        vec!["score"],
        vec!["filter", "--tau", "-0.5"],
        vec!["train-dpo", "--beta", "0.2"],
        vec!["merge", "--grid-step", "0.25"],
        vec!["pareto", "--dedupe"],
        vec!["verify"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", cfg, "--out", out]);
        let o = vcsoup(&full);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let retention = std::fs::read_to_string(d.path().join("retention.json")).unwrap();
    assert!(retention.contains("-0.5"));
    let theta = ValueVectorFile::<f64>::read_json(d.path().join("theta_helpfulness.json")).unwrap();
    assert_eq!(theta.train_config.beta, 0.2);
    assert_eq!(theta.tau, -0.5);
    let (cands, _) = read_candidates_csv::<f64>(d.path().join("candidates.csv")).unwrap();
    assert_eq!(cands.len(), 5);

    let o = vcsoup(&["pipeline", "--config", cfg, "--out", out, "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(Manifest::read(&d.path().join("MANIFEST.json")).unwrap().seed == 11);
}
