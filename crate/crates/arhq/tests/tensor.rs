use arhq::tensor::{
    decode_tensor, encode_tensor, load_archive, load_tensor, load_tensor_expect, load_tensor_with_dtype,
    save_archive, save_tensor, save_tensor_as, Dtype,
};
use arhq::IoError;
use arhq_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn random(seed: u64, r: usize, c: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1e3..1e3) * rng.random::<f64>().powi(7))
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn offset_of(e: IoError) -> u64 {
    match e {
        IoError::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn small_f64_file_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.arhqt");
    save_tensor(&Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap(), &p).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 6 + 1 + 1 + 16 + 48);
}

#[test]
fn empty_tensor_rejected() {
    let mut buf = Vec::new();
    let e = encode_tensor(&Matrix::zeros(0, 0), Dtype::F64, &mut buf).unwrap_err();
    assert!(matches!(e, IoError::Core(_)), "{e}");
    // A zero extent on disk is rejected too.
    let mut raw = b"ARHQT1\x01\x02".to_vec();
    raw.extend_from_slice(&0u64.to_le_bytes());
    raw.extend_from_slice(&3u64.to_le_bytes());
    assert_eq!(offset_of(decode_tensor(&raw, Path::new("x")).unwrap_err()), 8);
}

#[test]
fn random_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = random(1, 100, 50);
    let p = dir.path().join("m.arhqt");
    save_tensor(&m, &p).unwrap();
    let (back, dtype) = load_tensor_with_dtype(&p).unwrap();
    assert_eq!(dtype, Dtype::F64);
    assert_eq!(back.shape(), (100, 50));
    assert_eq!(bits(&back), bits(&m));

    let m32 = m.map(|v| v as f32 as f64);
    save_tensor_as(&m32, &p, Dtype::F32).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 24 + 100 * 50 * 4);
    assert_eq!(bits(&load_tensor_expect(&p, Dtype::F32).unwrap()), bits(&m32));
}

#[test]
fn payload_is_little_endian_row_major() {
    let mut buf = Vec::new();
    encode_tensor(&Matrix::from_rows(&[[1.5, -2.0]]).unwrap(), Dtype::F32, &mut buf).unwrap();
    assert_eq!(&buf[..8], b"ARHQT1\x00\x02");
    assert_eq!(&buf[8..16], &1u64.to_le_bytes());
    assert_eq!(&buf[16..24], &2u64.to_le_bytes());
    assert_eq!(&buf[24..28], &1.5f32.to_le_bytes());
    assert_eq!(&buf[28..32], &(-2.0f32).to_le_bytes());
}

#[test]
fn corrupt_files_report_offsets() {
    let mut good = Vec::new();
    encode_tensor(&random(2, 3, 4), Dtype::F64, &mut good).unwrap();
    let p = Path::new("corrupt");

    let mut bad_magic = good.clone();
    bad_magic[2] = b'X';
    assert_eq!(offset_of(decode_tensor(&bad_magic, p).unwrap_err()), 0);

    let mut bad_dtype = good.clone();
    bad_dtype[6] = 9;
    assert_eq!(offset_of(decode_tensor(&bad_dtype, p).unwrap_err()), 6);

    let mut bad_ndim = good.clone();
    bad_ndim[7] = 3;
    assert_eq!(offset_of(decode_tensor(&bad_ndim, p).unwrap_err()), 7);

    let truncated = &good[..good.len() - 5];
    assert_eq!(offset_of(decode_tensor(truncated, p).unwrap_err()), 24);

    let short_header = &good[..12];
    assert_eq!(offset_of(decode_tensor(short_header, p).unwrap_err()), 8);

    let mut trailing = good.clone();
    trailing.push(0);
    assert_eq!(offset_of(decode_tensor(&trailing, p).unwrap_err()), good.len() as u64);

    let mut nan = good.clone();
    nan[24 + 8..24 + 16].copy_from_slice(&f64::NAN.to_le_bytes());
    assert_eq!(offset_of(decode_tensor(&nan, p).unwrap_err()), 32);
}

#[test]
fn dtype_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.arhqt");
    save_tensor_as(&random(3, 2, 2).map(|v| v as f32 as f64), &p, Dtype::F32).unwrap();
    assert_eq!(offset_of(load_tensor_expect(&p, Dtype::F64).unwrap_err()), 6);
}

#[test]
fn vectors_load_as_columns() {
    let mut raw = b"ARHQT1\x01\x01".to_vec();
    raw.extend_from_slice(&3u64.to_le_bytes());
    for v in [1.0f64, 2.0, 3.0] {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let (m, _) = decode_tensor(&raw, Path::new("v")).unwrap();
    assert_eq!(m.shape(), (3, 1));
    assert_eq!(m.column(0), vec![1.0, 2.0, 3.0]);
}

#[test]
fn missing_file_names_path() {
    let e = load_tensor("/nonexistent/dir/w.arhqt").unwrap_err();
    assert!(e.to_string().contains("/nonexistent/dir/w.arhqt"));
}

#[test]
fn archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.arhqa");
    let (a, b) = (random(4, 5, 3), random(5, 1, 1));
    save_archive(&[("alpha", &a), ("β", &b)], &p, Dtype::F64).unwrap();
    let back = load_archive(&p).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!((back[0].0.as_str(), bits(&back[0].1)), ("alpha", bits(&a)));
    assert_eq!((back[1].0.as_str(), bits(&back[1].1)), ("β", bits(&b)));

    let raw = std::fs::read(&p).unwrap();
    let e = {
        std::fs::write(&p, &raw[..raw.len() - 1]).unwrap();
        load_archive(&p).unwrap_err()
    };
    assert!(matches!(e, IoError::Format { .. }));
}

proptest! {
    #[test]
    fn any_finite_matrix_round_trips(
        (r, c, v) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, r * c))
        })
    ) {
        let m = Matrix::new(r, c, v).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&m, Dtype::F64, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), 24 + r * c * 8);
        let (back, _) = decode_tensor(&buf, Path::new("p")).unwrap();
        prop_assert_eq!(bits(&back), bits(&m));
    }
}
