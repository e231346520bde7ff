use kvmn_core::model::{AddressingMode, Model, ModelConfig};
use kvmn_core::optim::{Adadelta, AdadeltaConfig};
use kvmn_core::train::{token_accuracy, train_step, Batcher, Item, SynthTask, TaskKind};

fn config() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        key_dim: 8,
        value_dim: 8,
        hidden_dim: 12,
        embed_dim: 6,
        attn_dim: 8,
        vocab_size: 10,
        ..ModelConfig::default()
    }
}

fn run(steps: u64, clip: Option<f64>) -> (Model, Vec<u64>) {
    let mut model = Model::new(config(), 3).unwrap();
    let mut opt = Adadelta::new(&model, AdadeltaConfig::default()).unwrap();
    let task = SynthTask::new(TaskKind::Copy, 4, 10, 8).unwrap();
    let mut log = Vec::new();
    for s in 0..steps {
        let eps = task.episodes(1, s, 4).unwrap();
        let items: Vec<Item> = eps.iter().map(|e| (e, &e.captions[0][..])).collect();
        let r = train_step(&mut model, &mut opt, &items, clip).unwrap();
        assert!(r.clip_factor <= 1.0);
        log.push(r.loss.to_bits());
    }
    (model, log)
}

#[test]
fn training_is_bitwise_reproducible() {
    let (a, la) = run(5, Some(5.0));
    let (b, lb) = run(5, Some(5.0));
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn loss_goes_down() {
    let (_, log) = run(60, Some(5.0));
    let first = f64::from_bits(log[0]);
    let tail: f64 = log[50..].iter().map(|&b| f64::from_bits(b)).sum::<f64>() / 10.0;
    assert!(tail < first, "{tail} !< {first}");
}

#[test]
fn clipping_caps_the_norm() {
    let mut model = Model::new(config(), 3).unwrap();
    let mut opt = Adadelta::new(&model, AdadeltaConfig::default()).unwrap();
    let task = SynthTask::new(TaskKind::Recall, 4, 10, 8).unwrap();
    let eps = task.episodes(1, 0, 2).unwrap();
    let items: Vec<Item> = eps.iter().map(|e| (e, &e.captions[0][..])).collect();
    let r = train_step(&mut model, &mut opt, &items, Some(1e-3)).unwrap();
    assert!((r.clip_factor - 1e-3 / r.grad_norm).abs() < 1e-15);
}

#[test]
fn accuracy_counts_every_target() {
    let model = Model::new(ModelConfig { mode: AddressingMode::DecoderOnly, ..config() }, 3).unwrap();
    let task = SynthTask::new(TaskKind::Copy, 5, 10, 8).unwrap();
    let eps = task.episodes(2, u64::MAX, 3).unwrap();
    let items: Vec<Item> = eps.iter().map(|e| (e, &e.captions[0][..])).collect();
    let acc = token_accuracy(&model, &items).unwrap();
    assert_eq!(acc.total, 3 * 6);
    assert!((0.0..=1.0).contains(&acc.ratio()));
}

#[test]
fn batcher_visits_every_item_each_epoch() {
    let mut b = Batcher::new(10, 4, 7).unwrap();
    let mut seen: Vec<usize> = Vec::new();
    for _ in 0..5 {
        seen.extend(b.next_batch());
    }
    let mut first: Vec<usize> = seen[..10].to_vec();
    first.sort();
    assert_eq!(first, (0..10).collect::<Vec<_>>());
    let mut second: Vec<usize> = seen[10..20].to_vec();
    second.sort();
    assert_eq!(second, (0..10).collect::<Vec<_>>());
    assert!(Batcher::new(0, 4, 1).is_err());
    assert_eq!(Batcher::new(3, 8, 1).unwrap().next_batch().len(), 3);
}
