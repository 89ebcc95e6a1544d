//! BFPT container round trips and strict validation.

use sbmm_cli::synth::gaussian_matrix;
use sbmm_cli::tensor::{DType, Tensor, TensorData};
use sbmm_cli::CliError;
use sbmm_core::codec::{quantize_tensor_q3k, quantize_tensor_q8k};

fn is_format(err: &CliError) -> bool {
    matches!(err, CliError::Core(sbmm_core::Error::Format(_)))
}

#[test]
fn f32_round_trip() {
    let values = gaussian_matrix(3, 100, 7, 1.0);
    let t = Tensor::from_f32(vec![3, 100], values).unwrap();
    let bytes = t.to_bytes();
    let back = Tensor::from_bytes(&bytes).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.dtype(), DType::F32);
}

#[test]
fn packed_round_trips() {
    let values = gaussian_matrix(2, 512, 9, 2.0);
    let q3 = quantize_tensor_q3k(&values, 2, 512).unwrap();
    let t = Tensor::new(vec![2, 512], TensorData::Q3K(q3.blocks().to_vec())).unwrap();
    let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.as_q3k_matrix().unwrap(), q3);

    let q8 = quantize_tensor_q8k(&values, 2, 512).unwrap();
    let t = Tensor::new(vec![2, 512], TensorData::Q8K(q8.blocks().to_vec())).unwrap();
    let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
    assert_eq!(back.as_q8k_matrix().unwrap(), q8);
}

#[test]
fn q3k_payload_size_is_110_bytes_per_block() {
    let t = Tensor::new(
        vec![1, 256],
        TensorData::Q3K(
            quantize_tensor_q3k(&[0.0; 256], 1, 256)
                .unwrap()
                .blocks()
                .to_vec(),
        ),
    )
    .unwrap();
    let bytes = t.to_bytes();
    // header: 4 magic + 2 version + 2 dtype + 2 ndim + 2*8 dims
    assert_eq!(bytes.len(), 26 + 110);
}

#[test]
fn corrupted_magic_is_rejected_with_offset() {
    let t = Tensor::from_f32(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut bytes = t.to_bytes();
    bytes[0] = b'X';
    match Tensor::from_bytes(&bytes) {
        Err(e) if is_format(&e) => {
            assert!(e.to_string().contains("offset 0"), "{e}");
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn zero_dims_are_rejected() {
    assert!(Tensor::from_f32(vec![0, 4], vec![]).is_err());
    assert!(Tensor::from_f32(vec![], vec![]).is_err());
}

#[test]
fn truncation_and_trailing_bytes_are_rejected() {
    let t = Tensor::from_f32(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let bytes = t.to_bytes();
    match Tensor::from_bytes(&bytes[..bytes.len() - 1]) {
        Err(e) if is_format(&e) => {}
        other => panic!("expected format error, got {other:?}"),
    }
    let mut extra = bytes.clone();
    extra.push(0);
    match Tensor::from_bytes(&extra) {
        Err(e) if is_format(&e) => assert!(e.to_string().contains("trailing")),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn dtype_and_length_mismatch_is_rejected() {
    // A q3k tensor whose last dim is not a multiple of 256.
    let t = Tensor::from_f32(vec![2, 255], vec![0.0; 510]).unwrap();
    let mut bytes = t.to_bytes();
    bytes[6..8].copy_from_slice(&1u16.to_le_bytes()); // flip dtype to q3k
    assert!(Tensor::from_bytes(&bytes).is_err());
}

#[test]
fn write_read_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bfpt");
    let t = Tensor::from_f32(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, -0.0, 9.0]).unwrap();
    t.write_file(&path).unwrap();
    assert_eq!(Tensor::read_file(&path).unwrap(), t);
}
