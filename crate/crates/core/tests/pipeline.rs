//! End-to-end checks that cross module boundaries: train, measure, probe,
//! infer groups, retrain, and reproduce a run from its manifest.

use std::fs;

use spurious_lab::dataset::{make_finite_dataset, Block, FeatureTarget, SpuriousTaskConfig};
use spurious_lab::debias::{containment, rank_by_ce, true_minority, upsample_retrain, InferenceMethod};
use spurious_lab::experiment::{
    load_run_dataset, run_experiment, score_run_inference, Manifest, JACCARD_COLUMNS, MANIFEST_FILE, METRICS_FILE,
};
use spurious_lab::metrics::{correlations, group_accuracies, CorrelationMode, MetricPlan};
use spurious_lab::network::{no_observer, sgd_train, DataSource, TrainConfig};
use spurious_lab::probe::{decoded_correlation, ProbeReg};
use spurious_lab::{ExperimentConfig, Mlp};

fn small_task() -> SpuriousTaskConfig {
    SpuriousTaskConfig::parity(2, 3, 1, 0.9).unwrap()
}

fn trained(task: &SpuriousTaskConfig, epochs: usize) -> Mlp {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        width: 32,
        epochs,
        samples_per_epoch: 2000,
        ..TrainConfig::default()
    };
    let mut model = cfg.init_model(task).unwrap();
    sgd_train(&mut model, &cfg, task, DataSource::Online, &MetricPlan::correlations_only(), &mut no_observer)
        .unwrap();
    model
}

#[test]
fn training_learns_both_features_on_a_small_task() {
    let task = small_task();
    let model = trained(&task, 150);
    let corr = correlations(&model, &task, CorrelationMode::Exact).unwrap();
    assert!(corr.core.value > 0.9, "core {}", corr.core.value);
}

#[test]
fn decoded_core_is_not_worse_than_the_model_itself() {
    let task = small_task();
    for epochs in [5, 40, 150] {
        let model = trained(&task, epochs);
        let own = correlations(&model, &task, CorrelationMode::Exact).unwrap().core.value;
        let decoded =
            decoded_correlation(&model, &task, FeatureTarget::Core, 2000, 2000, &ProbeReg::default(), 1).unwrap();
        assert!(decoded >= own - 0.02, "epochs {epochs}: decoded {decoded} < own {own}");
    }
}

#[test]
fn core_correlation_is_twice_mean_group_accuracy_minus_one() {
    let task = small_task();
    let model = trained(&task, 20);
    let exact = correlations(&model, &task, CorrelationMode::Exact).unwrap();
    let mc = correlations(
        &model,
        &task,
        CorrelationMode::MonteCarlo {
            samples: 40_000,
            seed: 2,
        },
    )
    .unwrap();
    assert!(mc.core.within(exact.core.value, 3.0));
    assert!(mc.spurious.unwrap().within(exact.spurious.unwrap().value, 3.0));
    let groups = group_accuracies(&model, &task, 40_000, 3).unwrap();
    let from_groups = 2.0 * groups.mean() - 1.0;
    // Each of the four cells carries its own binomial error.
    assert!((from_groups - exact.core.value).abs() < 0.03, "{from_groups} vs {}", exact.core.value);
}

#[test]
fn ce_ranking_of_everything_contains_the_base_rate() {
    let task = small_task();
    let model = trained(&task, 5);
    let data = make_finite_dataset(&task, 500, 4).unwrap();
    let all = rank_by_ce(&model, &data.samples, data.len(), 0).unwrap();
    let truth = true_minority(&data.samples);
    let rate = containment(&truth, &all.predicted_minority);
    assert_eq!(rate, 1.0);
    assert_eq!(all.predicted_minority.len(), data.len());
    let base = containment(&all.predicted_minority, &truth);
    assert!((base - truth.len() as f64 / data.len() as f64).abs() < 1e-12);
}

#[test]
fn run_directory_scores_and_reproduces_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(
        small_task(),
        TrainConfig {
            learning_rate: 1e-2,
            width: 16,
            epochs: 8,
            ..TrainConfig::default()
        },
    );
    cfg.metrics = MetricPlan::correlations_only();
    cfg.data.size = Some(600);
    cfg.snapshots.every = 2;
    let first = dir.path().join("first");
    let out = run_experiment(&cfg, &first).unwrap();
    assert_eq!(out.snapshots.len(), 4);

    let data = load_run_dataset(&first, None).unwrap();
    assert_eq!(data.len(), 600);
    let table = score_run_inference(&first, &data, &InferenceMethod::ALL, None).unwrap();
    assert_eq!(table.header, JACCARD_COLUMNS);
    assert_eq!(table.rows.len(), 4 * InferenceMethod::ALL.len());
    for row in &table.rows {
        let j: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&j));
    }

    let manifest = Manifest::load(&first.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.config, cfg);
    let second = dir.path().join("second");
    run_experiment(&manifest.config, &second).unwrap();
    for name in [METRICS_FILE, "data.tsv", "model_epoch_8.snapshot"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn masked_training_never_reads_hidden_blocks() {
    let mut cfg = ExperimentConfig::new(
        small_task(),
        TrainConfig {
            learning_rate: 1e-2,
            width: 8,
            epochs: 3,
            samples_per_epoch: 500,
            ..TrainConfig::default()
        },
    );
    cfg.metrics = MetricPlan::correlations_only();
    cfg.visible_blocks = Some(vec![Block::Spurious]);
    let run = spurious_lab::experiment::train_experiment(&cfg, &mut no_observer).unwrap();
    let task = &cfg.task;
    let layer = run.model.first_layer();
    for i in 0..layer.outputs {
        let row = layer.row(i);
        assert!(task.block(Block::Core).all(|j| row[j] == 0.0));
        assert!(task.block(Block::Noise).all(|j| row[j] == 0.0));
    }
}

#[test]
fn upsampling_the_true_minority_improves_worst_group() {
    let task = SpuriousTaskConfig::parity(1, 3, 1, 0.9).unwrap();
    let data = make_finite_dataset(&task, 2000, 5).unwrap();
    let train = TrainConfig {
        learning_rate: 1e-2,
        width: 32,
        epochs: 30,
        ..TrainConfig::default()
    };
    let plan = MetricPlan::correlations_only();
    let oracle = spurious_lab::debias::GroupInference {
        predicted_minority: data.minority_indices(),
        method: InferenceMethod::Jtt,
        epoch: 0,
    };
    let none = spurious_lab::debias::GroupInference {
        predicted_minority: Vec::new(),
        ..oracle.clone()
    };
    let base = upsample_retrain::<f64>(&task, &data.samples, &none, 1.0, &train, &plan).unwrap();
    let up = upsample_retrain::<f64>(&task, &data.samples, &oracle, 9.0, &train, &plan).unwrap();
    assert!(
        up.worst_group_accuracy >= base.worst_group_accuracy,
        "{} < {}",
        up.worst_group_accuracy,
        base.worst_group_accuracy
    );
}

#[test]
fn documented_example_config_parses() {
    let doc = include_str!("../../../docs/config.md");
    let blocks: Vec<&str> = doc.split("```toml").skip(1).map(|b| b.split("```").next().unwrap()).collect();
    let example = ExperimentConfig::from_toml(blocks.last().unwrap()).unwrap();
    assert_eq!(example.sweep_cells().unwrap().len(), 3 * 4 * 5);
    assert_eq!(example.task.n(), 16);
    let bare: SpuriousTaskConfig = toml::from_str(blocks[0]).unwrap();
    assert_eq!(bare, SpuriousTaskConfig::parity(2, 4, 1, 0.9).unwrap());
}
