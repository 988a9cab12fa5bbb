//! Cross-module flow through the public API: groups in, curves and
//! reports out, plus the single-precision instantiation.

use dgao::advantage::{compute_advantages, AdvantageConfig};
use dgao::rewards::{build_reward_matrix, TaskKind};
use dgao::toyrl::{curves_csv, run_experiment, TrainConfig, TrainMode};

fn fast_cfg(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        train_groups: 16,
        eval_groups: 16,
        epochs: 2,
        cold_start_steps: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn experiment_produces_curves_for_every_epoch() {
    let result = run_experiment::<f64>(&fast_cfg(TrainMode::Dgao, 3)).unwrap();
    assert_eq!(result.curves.len(), 3, "epoch 0 plus two epochs");
    let csv = curves_csv(&result.curves);
    assert!(csv.starts_with("epoch,accuracy,consistency_rate,overconfidence_rate\n"));
    assert_eq!(csv.lines().count(), 4);
    for p in &result.curves {
        assert!((0.0..=1.0).contains(&p.accuracy));
        assert!((0.0..=1.0).contains(&p.consistency_rate));
        assert!((0.0..=1.0).contains(&p.overconfidence_rate));
        // metric suite invariants hold at every evaluation
        assert!(p.overconfidence_rate <= p.consistency_rate + 1e-12);
        assert!(p.accuracy <= p.consistency_rate + 1e-12);
    }
}

#[test]
fn all_modes_run_to_completion() {
    for mode in [TrainMode::Dgao, TrainMode::Grpo, TrainMode::Paft] {
        let result = run_experiment::<f64>(&fast_cfg(mode, 5)).unwrap();
        assert_eq!(result.final_report.m_groups, 16);
        assert_eq!(result.final_report.n_variants, 8);
    }
}

#[test]
fn advantage_pipeline_works_in_single_precision() {
    let outputs = vec![
        vec!["a".to_string(), "a".into(), "b".into(), "a".into()],
        vec!["b".to_string(), "b".into(), "b".into(), "b".into()],
    ];
    let labels = vec!["a".to_string(), "a".into()];
    let ids = vec!["g0".to_string(), "g1".into()];
    let rm = build_reward_matrix::<f32>(&outputs, &labels, &ids, &TaskKind::ExactMatch).unwrap();
    let batch = compute_advantages(&rm, &AdvantageConfig::<f32>::default()).unwrap();
    assert!((batch.baseline - 0.375).abs() < 1e-6);
    let inter_sum: f32 = batch.inter.iter().sum();
    assert!(inter_sum.abs() < 1e-6, "f32 keeps the identities to its own precision");
}

#[test]
fn single_precision_training_runs() {
    let result = run_experiment::<f32>(&fast_cfg(TrainMode::Dgao, 9)).unwrap();
    assert!(result.final_report.accuracy.is_finite());
}
