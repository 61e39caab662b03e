//! Property tests for the IO layer: quantization is a projection, masks stay
//! binary, checkpoints round-trip bit-exactly.

use proptest::prelude::*;
use vpforge_core::io::checkpoint::{load_checkpoint, save_checkpoint, ParamRecord};
use vpforge_core::io::{byte_to_real, read_mask, read_video, real_to_byte, write_video};
use vpforge_core::tensor::{Dims5, Tensor5};

proptest! {
    #[test]
    fn quantization_is_a_projection(v in -1.5f64..1.5) {
        let b = real_to_byte(v);
        let v2: f64 = byte_to_real(b);
        prop_assert_eq!(real_to_byte(v2), b);
        let v3: f64 = byte_to_real(real_to_byte(v2));
        prop_assert_eq!(v2.to_bits(), v3.to_bits());
    }

    #[test]
    fn video_read_write_read_is_idempotent(bytes in proptest::collection::vec(any::<u8>(), 2 * 3 * 2 * 3)) {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor5::<f32>::from_vec(
            Dims5::new(1, 3, 2, 2, 3),
            bytes.iter().map(|&b| byte_to_real(b)).collect(),
        ).unwrap();
        let d1 = dir.path().join("v1");
        write_video(&t, &d1).unwrap();
        let t2: Tensor5<f32> = read_video(&d1).unwrap();
        prop_assert_eq!(&t, &t2);
        let d2 = dir.path().join("v2");
        write_video(&t2, &d2).unwrap();
        let t3: Tensor5<f32> = read_video(&d2).unwrap();
        prop_assert_eq!(&t2, &t3);
    }

    #[test]
    fn masks_read_as_exact_binary(bytes in proptest::collection::vec(any::<u8>(), 4 * 5)) {
        let dir = tempfile::tempdir().unwrap();
        let mut data = Vec::from(&b"P5\n5 4\n255\n"[..]);
        data.extend_from_slice(&bytes);
        std::fs::write(dir.path().join("mask_00000.pgm"), data).unwrap();
        let m: Tensor5<f64> = read_mask(dir.path()).unwrap();
        prop_assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact(
        payload in proptest::collection::vec(-1e6f32..1e6, 1..64),
        name in "[a-z][a-z0-9_.]{0,16}",
    ) {
        prop_assume!(name != "crc32");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.vpf");
        let rec = ParamRecord::new(name, vec![payload.len() as u32], payload);
        save_checkpoint(&path, std::slice::from_ref(&rec)).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        prop_assert_eq!(loaded.len(), 1);
        prop_assert_eq!(&loaded[0].name, &rec.name);
        let bits_a: Vec<u32> = rec.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = loaded[0].data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits_a, bits_b);
    }
}
