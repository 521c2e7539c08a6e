use vcsoup_cli::config::ConflictLevel;
use vcsoup_cli::pipeline::generate_data;
use vcsoup_cli::PipelineConfig;

#[test]
fn conflict_levels_match_recorded_calibration() {
    let fixture: serde_json::Value = serde_json::from_str(include_str!("fixtures/conflict_calibration.json")).unwrap();
    for (name, level) in [
        ("low", ConflictLevel::Low),
        ("medium", ConflictLevel::Medium),
        ("high", ConflictLevel::High),
    ] {
        let expected = fixture["conflict_fraction"][name].as_array().unwrap();
        for (seed, want) in expected.iter().enumerate() {
            let cfg = PipelineConfig {
                seed: seed as u64,
                conflict: level,
                ..PipelineConfig::default()
            };
            let data = generate_data(&cfg).unwrap();
            assert_eq!(data.datasets.len(), 2);
            assert!(data.datasets.iter().all(|d| d.len() == 2000));
            assert_eq!(
                (data.universe.num_prompts, data.universe.responses_per_prompt),
                (200, 4)
            );
            let got = data.conflict_fraction.unwrap();
            assert_eq!(got, want.as_f64().unwrap(), "{name} seed {seed}");
            if level == ConflictLevel::High {
                assert!(got > 0.3);
            }
        }
    }
}
