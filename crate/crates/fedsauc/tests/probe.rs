//! Temporary exploration harness (removed before release).

use fedsauc::clustering::{Algorithm, UpdateType};
use fedsauc::config::ExperimentConfig;
use fedsauc::dataset::Scheme;
use fedsauc::runner::run_sim;
use fedsauc::synth::{self, SynthSpec};

fn fixture(spec: &SynthSpec) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(dir.path(), spec).unwrap();
    dir
}

fn base_spec() -> SynthSpec {
    SynthSpec {
        train_per_digit: 256,
        test_per_digit: 64,
        noise: 0.15,
        label_noise: 0.1,
        odd_digit_scale: 1.0,
        odd_blend: 0.5,
        seed: 42,
    }
}

#[test]
#[ignore]
fn probe_stale() {
    use fedsauc::clustering::{flatten_update, kmeans, GroundTruthGroups, UpdateVector};
    use fedsauc::federation::aggregate;
    use fedsauc::model::{local_train, GradientUpdate, ModelParams};
    use rand::{Rng, SeedableRng};

    let data = fixture(&base_spec());
    for lr in [0.01f64, 0.003, 0.001] {
        println!("==== lr {lr}");
        for scheme in [Scheme::Set1, Scheme::Set2] {
            let train = fedsauc::dataset::load_samples(
                &data.path().join(fedsauc::dataset::TRAIN_IMAGES_FILE),
                &data.path().join(fedsauc::dataset::TRAIN_LABELS_FILE),
            )
            .unwrap();
            let clients = fedsauc::dataset::partition(&train, scheme).unwrap();
            let mut config = ExperimentConfig::default();
            config.learning_rate = lr;
            let mut global = ModelParams::zeros();
            let truth = GroundTruthGroups::consecutive_pairs(10);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);

            let mut table: Vec<Option<(ModelParams, GradientUpdate, u32)>> = vec![None; 10];
            let mut active = vec![true; 10];
            let mut correct_ww = 0;
            let mut correct_wg = 0;
            let mut events = 0;

            for round in 1..=50u32 {
                let mut uploads = Vec::new();
                for c in &clients {
                    if !active[usize::from(c.client_id)] {
                        continue;
                    }
                    let (theta, grad) =
                        local_train(&global, c, &config.train_config(round, c.client_id)).unwrap();
                    table[usize::from(c.client_id)] = Some((theta.clone(), grad, round));
                    uploads.push((theta, c.len() as u32));
                }
                let refs: Vec<(&ModelParams, u32)> = uploads.iter().map(|(p, n)| (p, *n)).collect();
                global = aggregate(&refs).unwrap();

                if round >= 10 && round < 50 {
                    let view = |use_grad: bool| -> Vec<UpdateVector> {
                        table
                            .iter()
                            .enumerate()
                            .map(|(id, entry)| {
                                let (theta, grad, _) = entry.as_ref().unwrap();
                                flatten_update(
                                    id as u16,
                                    theta,
                                    grad,
                                    if use_grad { UpdateType::Wg } else { UpdateType::Ww },
                                )
                            })
                            .collect()
                    };
                    let ww = view(false);
                    let wg = view(true);
                    let km_ww = kmeans(&ww, 5, 1).unwrap();
                    let km_wg = kmeans(&wg, 5, 1).unwrap();
                    correct_ww += fedsauc::clustering::correct_groups(&km_ww, &truth);
                    correct_wg += fedsauc::clustering::correct_groups(&km_wg, &truth);
                    events += 1;
                    for a in active.iter_mut() {
                        *a = rng.random::<f64>() < 0.5;
                    }
                } else {
                    active = vec![true; 10];
                }
            }
            println!(
                "{}: WW {}/{}  WG {}/{}",
                scheme.name(),
                correct_ww,
                events * 5,
                correct_wg,
                events * 5
            );
        }
    }
}

#[test]
#[ignore]
fn probe_tune() {
    for (scale, blend) in [(1.0f64, 0.6f64), (0.5, 0.75)] {
    let dir = fixture(&SynthSpec { odd_digit_scale: scale, odd_blend: blend, ..base_spec() });
    let out = tempfile::tempdir().unwrap();
    for lr in [0.001f64, 0.0005] {
        println!("--- scale {scale} blend {blend} lr {lr}");
        for scheme in [Scheme::Set1, Scheme::Set2] {
            for algorithm in Algorithm::ALL {
                let mut line = format!("{} {:>13}:", scheme.name(), algorithm.name());
                for update_type in UpdateType::ALL {
                    let mut config = ExperimentConfig::default();
                    config.dataset_dir = dir.path().to_path_buf();
                    config.output = out.path().join("t.csv");
                    config.scheme = scheme;
                    config.learning_rate = lr;
                    config.fed.algorithm = algorithm;
                    config.fed.update_type = update_type;
                    config.fed.seed = 1;
                    let outcome = run_sim(&config).unwrap();
                    line.push_str(&format!(
                        " {}={:.3}/acc{:.2}",
                        update_type.name(),
                        outcome.summary.clustering_accuracy.unwrap_or(f64::NAN),
                        outcome.summary.final_mean_accuracy,
                    ));
                }
                println!("{line}");
            }
        }
    }
    }
}

#[test]
#[ignore]
fn probe_recovery() {
    let data = fixture(&base_spec());
    let out = tempfile::tempdir().unwrap();
    for seed in [1u64, 2, 3] {
        let mut suppressed = ExperimentConfig::default();
        suppressed.dataset_dir = data.path().to_path_buf();
        suppressed.output = out.path().join("s.csv");
        suppressed.scheme = Scheme::Set1;
        suppressed.fed.seed = seed;
        let s = run_sim(&suppressed).unwrap();

        let mut baseline = suppressed.clone();
        baseline.output = out.path().join("b.csv");
        baseline.fed.tau = 1.0;
        let b = run_sim(&baseline).unwrap();
        println!(
            "seed {seed}: suppressed {:.4} baseline {:.4} gap {:.4}",
            s.summary.final_mean_accuracy,
            b.summary.final_mean_accuracy,
            (s.summary.final_mean_accuracy - b.summary.final_mean_accuracy).abs()
        );
    }
}
