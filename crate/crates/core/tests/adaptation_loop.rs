mod common;

use common::random_matrix;
use conda_core::adaptation::{
    adapt_full, adapt_on_batch, run_continual, train_source, ContinualConfig, ContinualState,
    SourceConfig,
};
use conda_core::buffer::Buffer;
use conda_core::clustering::pseudo_labels;
use conda_core::data::{make_domain_pair, stream_batches, DomainPairConfig};
use conda_core::harness::evaluate;
use conda_core::losses::{total_objective, HyperParams};
use conda_core::netcore::{HeadMode, Model, ModelConfig};
use conda_core::seed::{rng_for, Purpose};
use conda_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_domains(seed: u64) -> (conda_core::data::Dataset, conda_core::data::Dataset) {
    make_domain_pair(&DomainPairConfig {
        n_per_class: 60,
        seed,
        ..DomainPairConfig::moons_rot30()
    })
    .unwrap()
}

fn quick_source(seed: u64) -> (Model, conda_core::data::Dataset) {
    let (s, t) = small_domains(seed);
    let cfg = SourceConfig {
        epochs: 10,
        ..SourceConfig::default()
    };
    (
        train_source(&s, &ModelConfig::default(), &cfg, seed).unwrap(),
        t,
    )
}

fn conda_cfg() -> ContinualConfig {
    ContinualConfig {
        batch_size: 20,
        epochs_per_batch: 3,
        buffer_capacity: 8,
        ..ContinualConfig::default()
    }
}

fn head_bytes(m: &Model) -> Vec<u64> {
    let h = &m.hypothesis;
    h.directions
        .value
        .as_slice()
        .iter()
        .chain(h.scales.value.as_slice())
        .map(|v| v.to_bits())
        .collect()
}

#[test]
fn hypothesis_never_changes_during_adaptation() {
    let (model, target) = quick_source(1);
    let before = head_bytes(&model);
    let cfg = conda_cfg();
    let stream = stream_batches(target.len(), cfg.batch_size, 1).unwrap();
    let mut state = ContinualState::new(model, &cfg, 1).unwrap();
    run_continual(&mut state, target.samples(), &stream, &cfg, |m| {
        evaluate(m, &target)
    })
    .unwrap();
    assert_eq!(head_bytes(&state.model), before);
    assert!(state.buffer.len() <= cfg.buffer_capacity);
}

#[test]
fn entropy_only_configuration_isolates_the_entropy_term() {
    let (mut model, target) = quick_source(2);
    let cfg = ContinualConfig {
        hp: HyperParams {
            gamma1: 0.0,
            gamma2: 0.0,
            ..HyperParams::default()
        },
        mixup: false,
        buffer_capacity: 0,
        ..conda_cfg()
    };
    let buf = Buffer::new(0, 2, 2).unwrap();
    let batch = target.samples().select_rows(&(0..40).collect::<Vec<_>>());
    let out = adapt_on_batch(
        &mut model,
        &batch,
        &buf,
        &cfg,
        &mut rng_for(2, Purpose::Adaptation),
    )
    .unwrap();
    assert_eq!(out.terms.total, out.terms.entropy);
    assert_eq!(out.terms.mixup, 0.0);
    assert!(out.buffer.is_empty());
}

#[test]
fn single_full_batch_equals_full_target_adaptation() {
    let (model, target) = quick_source(3);
    let cfg = ContinualConfig {
        epochs_per_batch: 2,
        ..ContinualConfig::default()
    };
    let (full, rec) = adapt_full(model.clone(), target.samples(), &cfg, 3, |m| {
        evaluate(m, &target)
    })
    .unwrap();

    let one = ContinualConfig {
        batch_size: target.len(),
        buffer_capacity: 0,
        ..cfg
    };
    let stream = stream_batches(target.len(), target.len(), 3).unwrap();
    assert_eq!(stream.len(), 1);
    let mut state = ContinualState::new(model, &one, 3).unwrap();
    let recs = run_continual(&mut state, target.samples(), &stream, &one, |m| {
        evaluate(m, &target)
    })
    .unwrap();
    assert_eq!(recs.last().unwrap().accuracy, rec.accuracy);
    assert_eq!(state.model.params()[0].2.value, full.params()[0].2.value);
}

#[test]
fn empty_stream_reports_only_the_source_model() {
    let (model, target) = quick_source(4);
    let src_acc = evaluate(&model, &target).unwrap();
    let cfg = conda_cfg();
    let stream = stream_batches(0, 5, 4).unwrap();
    let mut state = ContinualState::new(model, &cfg, 4).unwrap();
    let recs = run_continual(&mut state, target.samples(), &stream, &cfg, |m| {
        evaluate(m, &target)
    })
    .unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].batch_index, 0);
    assert_eq!(recs[0].accuracy, src_acc);
}

#[test]
fn continual_run_is_deterministic() {
    let go = || {
        let (model, target) = quick_source(5);
        let cfg = conda_cfg();
        let stream = stream_batches(target.len(), cfg.batch_size, 5).unwrap();
        let mut state = ContinualState::new(model, &cfg, 5).unwrap();
        let recs = run_continual(&mut state, target.samples(), &stream, &cfg, |m| {
            evaluate(m, &target)
        })
        .unwrap();
        let acc: Vec<u64> = recs.iter().map(|r| r.accuracy.to_bits()).collect();
        let loss: Vec<u64> = recs.iter().map(|r| r.terms.total.to_bits()).collect();
        (acc, loss, state.model.params()[2].2.value.clone())
    };
    assert_eq!(go(), go());
}

#[test]
fn one_epoch_lowers_the_objective_on_most_seeds() {
    let mut wins = 0;
    for seed in 0..5 {
        let (mut model, target) = quick_source(10 + seed);
        let x: Matrix = target.samples().select_rows(&(0..32).collect::<Vec<_>>());
        let hp = HyperParams::default();
        let value = |m: &Model| {
            let y = pseudo_labels(m, &x).unwrap().labels;
            let p = m.predict_probs(&x).unwrap();
            total_objective(&p, &y, &y, &vec![1.0; y.len()], &hp)
                .unwrap()
                .total
        };
        let before = value(&model);
        let cfg = ContinualConfig {
            epochs_per_batch: 1,
            ..ContinualConfig::default()
        };
        let buf = Buffer::new(0, 2, 2).unwrap();
        adapt_on_batch(
            &mut model,
            &x,
            &buf,
            &cfg,
            &mut rng_for(seed, Purpose::Adaptation),
        )
        .unwrap();
        if value(&model) < before {
            wins += 1;
        }
    }
    assert!(wins >= 3, "objective decreased on {wins} of 5 seeds");
}

#[test]
fn fresh_state_starts_without_momentum() {
    let (mut model, _) = quick_source(6);
    for (_, p) in model.params_mut(HeadMode::Trainable) {
        p.momentum.fill(1.0);
    }
    let state = ContinualState::new(model, &conda_cfg(), 6).unwrap();
    assert!(state.model.params().iter().all(|(_, _, p)| p
        .momentum
        .as_slice()
        .iter()
        .all(|&m| m == 0.0)));
}

#[test]
fn momentum_reset_flag_changes_the_trajectory() {
    let (model, target) = quick_source(7);
    let run = |reset: bool| {
        let cfg = ContinualConfig {
            reset_momentum: reset,
            ..conda_cfg()
        };
        let stream = stream_batches(60, cfg.batch_size, 7).unwrap();
        let mut state = ContinualState::new(model.clone(), &cfg, 7).unwrap();
        run_continual(&mut state, target.samples(), &stream, &cfg, |_| Ok(0.0)).unwrap();
        state.model.params()[0].2.value.clone()
    };
    assert_ne!(run(false), run(true));
}

#[test]
fn separable_blobs_are_learned() {
    let (src, _) = make_domain_pair(&DomainPairConfig {
        num_classes: 2,
        n_per_class: 200,
        noise_sd: 0.5,
        ..DomainPairConfig::blobs_5c()
    })
    .unwrap();
    let cfg = ModelConfig {
        num_classes: 2,
        ..ModelConfig::default()
    };
    let m = train_source(&src, &cfg, &SourceConfig::default(), 0).unwrap();
    assert!(evaluate(&m, &src).unwrap() >= 0.99);
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let (src, _) = small_domains(0);
    let cfg = ModelConfig::default();
    let m = train_source(
        &src,
        &cfg,
        &SourceConfig {
            epochs: 0,
            ..SourceConfig::default()
        },
        9,
    )
    .unwrap();
    let init = Model::new(&cfg, &mut rng_for(9, Purpose::ModelInit)).unwrap();
    let x = random_matrix(&mut ChaCha8Rng::seed_from_u64(0), 5, 2, 1.0);
    assert_eq!(m.logits(&x).unwrap(), init.logits(&x).unwrap());
}

#[test]
fn source_training_is_deterministic() {
    let (src, _) = small_domains(1);
    let cfg = SourceConfig {
        epochs: 5,
        ..SourceConfig::default()
    };
    let a = train_source(&src, &ModelConfig::default(), &cfg, 1).unwrap();
    let b = train_source(&src, &ModelConfig::default(), &cfg, 1).unwrap();
    for ((_, _, p), (_, _, q)) in a.params().into_iter().zip(b.params()) {
        assert_eq!(p.value, q.value);
    }
}
