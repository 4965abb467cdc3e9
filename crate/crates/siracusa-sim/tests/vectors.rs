//! Binary vector file format: 16-byte header (magic 0x5154, dtype,
//! three u32 dims), flat little-endian data.

use siracusa_sim::qnn::{
    load_qtensor, load_tensor32, load_weights, save_qtensor, save_tensor32, save_weights,
    QTensor, Tensor32,
};

#[test]
fn qtensor_round_trip_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("act.bin");
    let mut t = QTensor::zeros(3, 5, 7);
    for (i, v) in t.data.iter_mut().enumerate() {
        *v = (i * 7 % 256) as u8;
    }
    save_qtensor(&p, &t).unwrap();

    let raw = std::fs::read(&p).unwrap();
    assert_eq!(raw.len(), 16 + 3 * 5 * 7);
    assert_eq!(u16::from_le_bytes([raw[0], raw[1]]), 0x5154);
    assert_eq!(u16::from_le_bytes([raw[2], raw[3]]), 1); // dtype u8
    assert_eq!(u32::from_le_bytes(raw[4..8].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 5);
    assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 7);

    let back = load_qtensor(&p).unwrap();
    assert_eq!(back.data, t.data);
    assert_eq!((back.height, back.width, back.channels), (3, 5, 7));
}

#[test]
fn weights_and_tensor32_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("w.bin");
    let w: Vec<i8> = (0..64).map(|i| (i as i8).wrapping_mul(5)).collect();
    save_weights(&wp, &w, [4, 4, 4]).unwrap();
    let (back, dims) = load_weights(&wp).unwrap();
    assert_eq!((back, dims), (w, [4, 4, 4]));

    let tp = dir.path().join("acc.bin");
    let mut t = Tensor32::zeros(2, 3, 4);
    for (i, v) in t.data.iter_mut().enumerate() {
        *v = i as i32 * -100_003;
    }
    save_tensor32(&tp, &t).unwrap();
    let back = load_tensor32(&tp).unwrap();
    assert_eq!(back.data, t.data);
}

#[test]
fn wrong_magic_and_dtype_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.bin");
    let mut raw = vec![0u8; 16];
    raw[0] = 0xff; // bad magic
    std::fs::write(&p, &raw).unwrap();
    assert!(load_qtensor(&p).is_err());

    // Right magic, wrong dtype for a QTensor (i32 instead of u8).
    let t = Tensor32::zeros(1, 1, 1);
    save_tensor32(&p, &t).unwrap();
    assert!(load_qtensor(&p).is_err());
}
