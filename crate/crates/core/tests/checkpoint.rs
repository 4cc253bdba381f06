use ntm::io::{load_checkpoint, save_checkpoint, Checkpoint};
use ntm::task::{CopyConfig, Split, TaskConfig};
use ntm::{NtmConfig, NtmError, NtmModel, Tensor, TrainConfig, Trainer};

fn task() -> TaskConfig {
    TaskConfig::Copy(CopyConfig {
        bits: 4,
        min_len: 1,
        max_len: 3,
        split: Split::Train,
    })
}

fn train_config(total: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        total_instances: total,
        report_every: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

// Little-endian helpers for authoring the fixture by hand.
fn u32le(v: u32) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

fn string(s: &str) -> Vec<u8> {
    let mut b = u32le(s.len() as u32);
    b.extend_from_slice(s.as_bytes());
    b
}

#[test]
fn hand_built_two_array_file() {
    let mut b = Vec::new();
    b.extend_from_slice(b"NTMCKPT1");
    b.extend(u32le(1));
    b.extend(string("copy"));
    for v in [4, 1, 3, 0] {
        b.extend(u32le(v));
    }
    b.extend(1.0f64.to_le_bytes());
    b.push(0);
    for v in [5, 4, 8, 4, 8, 3] {
        b.extend(u32le(v));
    }
    b.extend(u32le(2));
    // a: 2x3 matrix
    b.extend(string("a"));
    b.extend(u32le(2));
    b.extend(u32le(2));
    b.extend(u32le(3));
    for v in [1.0f64, -2.0, 0.5, 0.0, 3.25, -0.125] {
        b.extend(v.to_le_bytes());
    }
    // bias: length-2 vector
    b.extend(string("bias"));
    b.extend(u32le(1));
    b.extend(u32le(2));
    for v in [f64::MIN_POSITIVE, 1e300] {
        b.extend(v.to_le_bytes());
    }
    b.push(0);
    b.push(0);

    let ck = Checkpoint::from_bytes(&b).unwrap();
    assert_eq!(ck.task, task());
    assert_eq!(ck.model_config, NtmConfig::new(5, 4, 8, 4, 8));
    assert_eq!(ck.arrays.len(), 2);
    assert_eq!(ck.arrays[0].name, "a");
    assert_eq!(
        ck.arrays[0].tensor,
        Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.25, -0.125]).unwrap()
    );
    assert_eq!(ck.arrays[1].name, "bias");
    assert_eq!(
        ck.arrays[1].tensor,
        Tensor::vector(vec![f64::MIN_POSITIVE, 1e300])
    );
    assert!(ck.optimizer.is_none() && ck.progress.is_none());
    assert_eq!(ck.to_bytes(), b);

    // Two arrays are not a model.
    match ck.model() {
        Err(NtmError::Checkpoint { field, .. }) => assert!(field.starts_with("arrays")),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = NtmModel::new(NtmConfig::new(5, 4, 16, 6, 12), 3).unwrap();
    save_checkpoint(&model, task(), &path).unwrap();
    let (back, t) = load_checkpoint(&path).unwrap();
    assert_eq!(t, task());
    for (a, b) in model.params().iter().zip(back.params()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert!(!path.with_extension("tmp").exists());
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = NtmModel::new(NtmConfig::new(5, 4, 8, 4, 8), 0).unwrap();
    save_checkpoint(&model, task(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(NtmError::Checkpoint { .. })
    ));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_checkpoint(&dir.path().join("nope.ckpt")),
        Err(NtmError::Io { .. })
    ));
}

#[test]
fn resume_reproduces_trajectory() {
    let model = NtmModel::new(NtmConfig::new(5, 4, 8, 4, 8), 2).unwrap();

    let mut straight = Trainer::new(model.clone(), task(), train_config(24)).unwrap();
    straight.run(|_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut first = Trainer::new(model, task(), train_config(10)).unwrap();
    first.run(|_| Ok(())).unwrap();
    Checkpoint::from_trainer(&first).save(&path).unwrap();

    let mut resumed = Checkpoint::load(&path)
        .unwrap()
        .trainer(train_config(24))
        .unwrap();
    resumed.run(|_| Ok(())).unwrap();

    assert_eq!(resumed.model, straight.model);
    assert_eq!(resumed.optimizer, straight.optimizer);
    assert_eq!(resumed.progress, straight.progress);
}

#[test]
fn resume_rejects_other_seed() {
    let model = NtmModel::new(NtmConfig::new(5, 4, 8, 4, 8), 2).unwrap();
    let mut t = Trainer::new(model, task(), train_config(4)).unwrap();
    t.run(|_| Ok(())).unwrap();
    let ck = Checkpoint::from_trainer(&t);
    let cfg = TrainConfig {
        seed: 12,
        ..train_config(8)
    };
    match ck.trainer(cfg) {
        Err(NtmError::Checkpoint { field, .. }) => assert_eq!(field, "progress.seed"),
        other => panic!("expected seed mismatch, got {:?}", other.map(|_| ())),
    }
}
