use map_core::data::idx::{encode_idx, parse_idx_bytes};
use map_core::data::{
    checkpoint::{checkpoint_precision, decode_checkpoint, encode_checkpoint},
    parse_idx, IdxData, ImageSet, SyntheticSpec,
};
use map_core::experiment::{self, gen_data, RunConfig, Trainer, IDX_FILES};
use map_core::{Error, Precision};

#[test]
fn gen_data_round_trips_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::new(4, 25, 10, 3);
    gen_data(&spec, 5, dir.path()).unwrap();

    let train = ImageSet::load(dir.path().join(IDX_FILES[0]), dir.path().join(IDX_FILES[1]), None).unwrap();
    let test = ImageSet::load(dir.path().join(IDX_FILES[2]), dir.path().join(IDX_FILES[3]), None).unwrap();
    assert_eq!(train.len(), 100);
    assert_eq!(test.len(), 20);
    assert_eq!(train.dim(), 10);

    let direct = map_core::data::gen_synthetic_split(&spec, map_core::data::Split::Train).unwrap();
    assert_eq!(train.pixels, direct.pixels);
    assert_eq!(train.labels, direct.labels);

    // header count field equals the requested rows
    let bytes = std::fs::read(dir.path().join(IDX_FILES[0])).unwrap();
    assert_eq!(u32::from_be_bytes(bytes[4..8].try_into().unwrap()), 100);
    let labels = std::fs::read(dir.path().join(IDX_FILES[3])).unwrap();
    assert_eq!(u32::from_be_bytes(labels[4..8].try_into().unwrap()), 20);
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let read_all = |seed| {
        let dir = tempfile::tempdir().unwrap();
        gen_data(&SyntheticSpec::new(3, 10, 6, seed), 4, dir.path()).unwrap();
        IDX_FILES.map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    assert_eq!(read_all(5), read_all(5));
    assert_ne!(read_all(5)[0], read_all(6)[0]);
}

#[test]
fn idx_training_matches_synthetic_training() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        epochs: 3,
        prune_start_epoch: Some(1),
        prune_ramp_epochs: Some(1),
        exploit_epoch: Some(3),
        synthetic_classes: 3,
        synthetic_dim: 6,
        synthetic_per_class: 20,
        synthetic_test_per_class: 5,
        hidden: vec![8],
        batch_size: 8,
        ..RunConfig::default()
    };
    let spec = SyntheticSpec {
        sigma: base.synthetic_sigma,
        ..SyntheticSpec::new(3, 20, 6, base.data_seed)
    };
    gen_data(&spec, 5, dir.path()).unwrap();
    let from_files = RunConfig {
        data: experiment::DataSource::Idx,
        train_images: Some(dir.path().join(IDX_FILES[0])),
        train_labels: Some(dir.path().join(IDX_FILES[1])),
        test_images: Some(dir.path().join(IDX_FILES[2])),
        test_labels: Some(dir.path().join(IDX_FILES[3])),
        ..base.clone()
    };
    let a = experiment::train(&base).unwrap();
    let b = experiment::train(&from_files).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn idx_rejects_malformed_input() {
    let good = [0u8, 0, 8, 1, 0, 0, 0, 2, 4, 5];
    assert_eq!(parse_idx_bytes(&good).unwrap(), IdxData::Labels(vec![4, 5]));
    assert!(matches!(parse_idx_bytes(&good[..9]), Err(Error::Idx(_))));
    assert!(matches!(parse_idx_bytes(&[good.as_slice(), &[1]].concat()), Err(Error::Idx(_))));
    assert!(parse_idx_bytes(&[0, 0, 0x0D, 1, 0, 0, 0, 1, 0, 0, 0, 0]).is_err());
    assert!(parse_idx_bytes(&[0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0]).is_err());
    assert!(parse_idx_bytes(&[]).is_err());
    // dimensions whose product overflows
    assert!(parse_idx_bytes(&[0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255]).is_err());
    assert!(matches!(parse_idx("/nonexistent/file"), Err(Error::Io(_))));
}

#[test]
fn idx_encoding_is_byte_exact() {
    let images = IdxData::Images {
        count: 3,
        rows: 1,
        cols: 2,
        pixels: vec![1, 2, 3, 4, 5, 6],
    };
    let bytes = encode_idx(&images).unwrap();
    assert_eq!(&bytes[..4], [0, 0, 8, 3]);
    assert_eq!(bytes.len(), 16 + 6);
    assert_eq!(parse_idx_bytes(&bytes).unwrap(), images);
    assert_eq!(encode_idx(&parse_idx_bytes(&bytes).unwrap()).unwrap(), bytes);
}

fn small_trainer(precision: Precision) -> RunConfig {
    RunConfig {
        epochs: 4,
        precision,
        prune_start_epoch: Some(1),
        prune_ramp_epochs: Some(2),
        exploit_epoch: Some(2),
        synthetic_classes: 3,
        synthetic_dim: 6,
        synthetic_per_class: 20,
        hidden: vec![8],
        batch_size: 8,
        ..RunConfig::default()
    }
}

#[test]
fn checkpoints_round_trip_in_both_precisions() {
    let cfg = small_trainer(Precision::F32);
    let (train, test) = experiment::load_data::<f32>(&cfg).unwrap();
    let mut t = Trainer::new(cfg, train, test).unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    let ck = t.checkpoint();
    let bytes = encode_checkpoint(&ck).unwrap();
    assert_eq!(checkpoint_precision(&bytes).unwrap(), Precision::F32);
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    assert!(back.prune.frozen);
    assert_eq!(back.prune.mask, t.prune.mask);
    assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::Checkpoint(_))));

    let cfg = small_trainer(Precision::F64);
    let (train, test) = experiment::load_data::<f64>(&cfg).unwrap();
    let t = Trainer::new(cfg, train, test).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    assert_eq!(checkpoint_precision(&bytes).unwrap(), Precision::F64);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let cfg = small_trainer(Precision::F64);
    let (train, test) = experiment::load_data::<f64>(&cfg).unwrap();
    let t = Trainer::new(cfg, train, test).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    for pos in [0, 9, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x40;
        assert!(decode_checkpoint::<f64>(&bad).is_err(), "flip at {pos} accepted");
    }
    assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 5]).is_err());
}

#[test]
fn resume_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out_dir: Some(dir.path().to_path_buf()),
        ..small_trainer(Precision::F64)
    };
    experiment::train(&cfg).unwrap();
    let ckpt = dir.path().join("final.ckpt");
    let wider = RunConfig {
        hidden: vec![9],
        ..cfg.clone()
    };
    assert!(matches!(experiment::resume(&wider, &ckpt), Err(Error::Config(_))));
    let other_seed = RunConfig { seed: 9, ..cfg.clone() };
    assert!(matches!(experiment::resume(&other_seed, &ckpt), Err(Error::Config(_))));
    let f32_cfg = RunConfig {
        precision: Precision::F32,
        ..cfg
    };
    assert!(experiment::resume(&f32_cfg, &ckpt).is_err());
}
