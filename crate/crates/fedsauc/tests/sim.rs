//! End-to-end simulator invariants on a small synthetic dataset.

use fedsauc::config::ExperimentConfig;
use fedsauc::dataset::Scheme;
use fedsauc::runner::run_sim;
use fedsauc::synth::{self, SynthSpec};

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(
        dir.path(),
        &SynthSpec {
            train_per_digit: 16,
            test_per_digit: 8,
            noise: 0.15,
            label_noise: 0.1,
            odd_digit_scale: 1.0,
            odd_blend: 0.6,
            seed: 42,
        },
    )
    .unwrap();
    dir
}

fn small_config(dir: &std::path::Path, out: &std::path::Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.dataset_dir = dir.to_path_buf();
    config.output = out.to_path_buf();
    config.scheme = Scheme::Set2;
    config.fed.rounds = 12;
    config.fed.start_round = 4;
    config.fed.seed = 7;
    config
}

#[test]
fn identical_seeds_give_byte_identical_csv() {
    let data = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let a_path = out.path().join("a.csv");
    let b_path = out.path().join("b.csv");

    let config_a = small_config(data.path(), &a_path);
    let config_b = small_config(data.path(), &b_path);
    run_sim(&config_a).unwrap();
    run_sim(&config_b).unwrap();

    let a = std::fs::read(&a_path).unwrap();
    let b = std::fs::read(&b_path).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn parameter_accounting_is_conserved_every_round() {
    let data = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let config = small_config(data.path(), &out.path().join("m.csv"));
    let outcome = run_sim(&config).unwrap();

    let ppu = config.fed.update_type.vector_len() as u64;
    assert_eq!(outcome.records.len(), 12);
    for record in &outcome.records {
        assert_eq!(
            record.uploaded_params + record.suppressed_params,
            10 * ppu,
            "round {}",
            record.round
        );
        assert_eq!(
            u64::from(record.active_count) * ppu,
            record.uploaded_params,
            "round {}",
            record.round
        );
        assert!(record.accuracy.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    // Update control starts after round 4: directives for rounds 1..=4 keep
    // everyone active, so suppression can first appear in round 5, and the
    // first clustering happens at the end of round 4 to prepare it.
    for record in &outcome.records[..4] {
        assert_eq!(record.suppressed_params, 0, "round {}", record.round);
    }
    for record in &outcome.records[..3] {
        assert_eq!(record.groups_total, 0, "round {}", record.round);
    }
    assert_eq!(outcome.records[3].groups_total, 5);
    assert_eq!(outcome.records[11].groups_total, 0);
    let suppressed_after: u64 = outcome.records[4..]
        .iter()
        .map(|r| r.suppressed_params)
        .sum();
    assert!(suppressed_after > 0);
}

#[test]
fn tau_one_and_late_start_disable_suppression_identically() {
    let data = fixture_dir();
    let out = tempfile::tempdir().unwrap();

    let tau_path = out.path().join("tau1.csv");
    let mut tau_one = small_config(data.path(), &tau_path);
    tau_one.fed.tau = 1.0;
    run_sim(&tau_one).unwrap();

    let late_path = out.path().join("late.csv");
    let mut late_start = small_config(data.path(), &late_path);
    late_start.fed.start_round = late_start.fed.rounds + 1;
    run_sim(&late_start).unwrap();

    assert_eq!(
        std::fs::read(&tau_path).unwrap(),
        std::fs::read(&late_path).unwrap()
    );
}

#[test]
fn accuracy_improves_over_the_run() {
    let data = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let config = small_config(data.path(), &out.path().join("acc.csv"));
    let outcome = run_sim(&config).unwrap();
    let first = outcome.records.first().unwrap().mean_accuracy;
    let last = outcome.summary.final_mean_accuracy;
    assert!(
        last >= first,
        "mean accuracy fell from {first} to {last} over the run"
    );
    assert!(last > 0.5, "final accuracy {last} shows no learning");
}

#[test]
fn missing_dataset_is_a_dataset_error() {
    let out = tempfile::tempdir().unwrap();
    let config = small_config(std::path::Path::new("/nonexistent"), &out.path().join("x.csv"));
    let err = run_sim(&config).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
