use std::path::Path;

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ModelConfig, ModelParams, ModelShape};
use crate::spectral::BandPartition;
use crate::trainer::TrainConfig;

fn here() -> &'static Path {
    Path::new("mem")
}

#[test]
fn zero_matrix_decodes() {
    let bytes = encode_features(&Array2::zeros((2, 3))).unwrap();
    assert_eq!(bytes.len(), 12 + 24);
    assert_eq!(&bytes[..4], b"SSRF");
    let x = decode_features(&bytes, here()).unwrap();
    assert_eq!(x, Array2::<f64>::zeros((2, 3)));
}

#[test]
fn payload_one_float_short_is_rejected() {
    let mut bytes = encode_features(&Array2::ones((2, 3))).unwrap();
    bytes.truncate(bytes.len() - 4);
    match decode_features(&bytes, here()) {
        Err(SsrError::Format { offset, .. }) => assert_eq!(offset, 32),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_magic_and_non_finite_are_rejected() {
    let mut bytes = encode_features(&array![[1.0, 2.0]]).unwrap();
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(decode_features(&wrong, here()), Err(SsrError::Format { offset: 0, .. })));
    bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_features(&bytes, here()), Err(SsrError::Format { offset: 16, .. })));
    assert!(encode_features(&array![[f64::INFINITY]]).is_err());
}

#[test]
fn feature_roundtrip_is_bit_exact() {
    let x = array![[0.1, -2.5, 3.0e7], [1e-30, 0.0, -0.0]];
    let bytes = encode_features(&x).unwrap();
    let y = decode_features(&bytes, here()).unwrap();
    assert_eq!(encode_features(&y).unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ssrf");
    save_features(&p, &y).unwrap();
    assert_eq!(load_features(&p).unwrap(), y);
}

#[test]
fn csv_features_load() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    std::fs::write(&p, "1, 2.5\n-3,4\n").unwrap();
    assert_eq!(load_features_csv(&p).unwrap(), array![[1.0, 2.5], [-3.0, 4.0]]);
    std::fs::write(&p, "1,2\n3\n").unwrap();
    assert!(load_features_csv(&p).is_err());
    std::fs::write(&p, "1,x\n").unwrap();
    assert!(load_features_csv(&p).is_err());
}

#[test]
fn interactions_with_header_and_numeric_ids() {
    let t = parse_interactions("user\titem\ttimestamp\n0\t3\t10\n2\t1\t5\n\n", here()).unwrap();
    assert_eq!((t.n_users, t.n_items), (3, 4));
    assert!(t.user_ids.is_none());
    assert_eq!(t.table.records[1].item, 1);
    assert_eq!(t.table.records[1].timestamp, 5);
}

#[test]
fn string_ids_are_ranked_and_mapped() {
    let t = parse_interactions("bob,i9,1\nalice,i1,2\nbob,i1,3\n", here()).unwrap();
    assert_eq!(t.user_ids.as_deref().unwrap(), ["alice", "bob"]);
    assert_eq!(t.item_ids.as_deref().unwrap(), ["i1", "i9"]);
    let users: Vec<usize> = t.table.records.iter().map(|r| r.user).collect();
    assert_eq!(users, vec![1, 0, 1]);
}

#[test]
fn malformed_interactions_are_rejected() {
    assert!(matches!(parse_interactions("0 1 2\n0 1\n", here()), Err(SsrError::Format { offset: 6, .. })));
    assert!(matches!(parse_interactions("0 1 5\n0 1 x\n", here()), Err(SsrError::Format { .. })));
    assert!(matches!(parse_interactions("0 1 -5\n", here()), Err(SsrError::InvalidRecord { .. })));
    assert!(matches!(parse_interactions("u i t\n", here()), Err(SsrError::EmptyTable)));
}

#[test]
fn interaction_file_roundtrip() {
    let t = parse_interactions("0 1 5\n1 0 7\n", here()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.tsv");
    save_interactions(&p, &t.table).unwrap();
    assert_eq!(load_interactions(&p).unwrap(), t);
}

fn checkpoint() -> Checkpoint {
    let cfg = TrainConfig { dim: 4, bands: 2, rank: 2, gate_hidden: 3, ..Default::default() };
    let model: ModelConfig = cfg.model_config();
    let shape = ModelShape::new(&model, 3, 5, vec![(Modality::Img, 6), (Modality::Txt, 2)]).unwrap();
    let params = ModelParams::init(shape, &mut ChaCha8Rng::seed_from_u64(1));
    let part = BandPartition { boundaries: vec![0, 3, 8], band_energies: vec![0.25, 1.0 / 3.0], residual: false, equal_count_fallback: false };
    Checkpoint {
        config: cfg,
        partitions: vec![(Modality::Id, part.clone()), (Modality::Img, part.clone()), (Modality::Txt, part)],
        best_epoch: 7,
        params,
    }
}

#[test]
fn checkpoint_roundtrip_matches_quantized_model() {
    let c = checkpoint();
    let bytes = encode_checkpoint(&c).unwrap();
    let back = decode_checkpoint(&bytes, here()).unwrap();
    assert_eq!(back, c.clone().quantized());
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&checkpoint()).unwrap();
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1], here()).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra, here()).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(decode_checkpoint(&version, here()).is_err());
    assert!(decode_checkpoint(b"SSRF", here()).is_err());
}
