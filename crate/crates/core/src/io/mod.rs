//! Frame-sequence video and mask IO.
//!
//! A video is a directory of `frame_%05d.ppm` files (binary P6, maxval 255),
//! a mask video a directory of `mask_%05d.pgm` files (binary P5) where byte
//! 255 marks the hole. Frames map to reals in [-1, 1] via b/127.5 - 1; the
//! writer inverts with round-half-up, so write(read(x)) reproduces files
//! byte for byte.

pub mod checkpoint;
pub mod pnm;

use crate::error::{Error, Result};
use crate::tensor::{Dims5, Scalar, Tensor5};
use std::path::{Path, PathBuf};

pub fn frame_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.ppm"))
}

pub fn mask_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:05}.pgm"))
}

#[inline]
pub fn byte_to_real<T: Scalar>(b: u8) -> T {
    T::of_f64(b as f64 / 127.5 - 1.0)
}

#[inline]
pub fn real_to_byte<T: Scalar>(v: T) -> u8 {
    let scaled = (v.as_f64() + 1.0) * 127.5;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn count_frames(dir: &Path, name: impl Fn(usize) -> PathBuf) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::format(dir.display(), "not a directory"));
    }
    let mut t = 0;
    while name(t).is_file() {
        t += 1;
    }
    if t == 0 {
        return Err(Error::format(
            dir.display(),
            "no frames found (frame_00000)",
        ));
    }
    Ok(t)
}

/// Read a frame sequence into a (1, 3, T, H, W) tensor with values in [-1, 1].
pub fn read_video<T: Scalar>(dir: &Path) -> Result<Tensor5<T>> {
    let t_len = count_frames(dir, |i| frame_file(dir, i))?;
    let mut tensor: Option<Tensor5<T>> = None;
    for t in 0..t_len {
        let img = pnm::read_ppm(&frame_file(dir, t))?;
        let tensor = tensor
            .get_or_insert_with(|| Tensor5::zeros(Dims5::new(1, 3, t_len, img.height, img.width)));
        let d = tensor.dims();
        if img.height != d.h || img.width != d.w {
            return Err(Error::shape(
                "read_video frame dims",
                format!("{}x{}", d.h, d.w),
                format!("{}x{}", img.height, img.width),
            ));
        }
        for y in 0..d.h {
            for x in 0..d.w {
                let px = (y * d.w + x) * 3;
                for c in 0..3 {
                    *tensor.at_mut(0, c, t, y, x) = byte_to_real(img.data[px + c]);
                }
            }
        }
    }
    Ok(tensor.unwrap())
}

/// Write a (1, 3, T, H, W) tensor as a frame sequence.
pub fn write_video<T: Scalar>(tensor: &Tensor5<T>, dir: &Path) -> Result<()> {
    let d = tensor.dims();
    if d.n != 1 || d.c != 3 {
        return Err(Error::shape("write_video", "1x3xTxHxW", d));
    }
    std::fs::create_dir_all(dir)?;
    let mut data = vec![0u8; d.h * d.w * 3];
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                let px = (y * d.w + x) * 3;
                for c in 0..3 {
                    data[px + c] = real_to_byte(tensor.at(0, c, t, y, x));
                }
            }
        }
        pnm::write_ppm(
            &frame_file(dir, t),
            &pnm::PnmImage {
                width: d.w,
                height: d.h,
                data: data.clone(),
            },
        )?;
    }
    Ok(())
}

/// Read a mask sequence into a (1, 1, T, H, W) tensor holding exactly 0.0/1.0.
/// Any source byte >= 128 reads as 1.0 (hole).
pub fn read_mask<T: Scalar>(dir: &Path) -> Result<Tensor5<T>> {
    let t_len = count_frames(dir, |i| mask_file(dir, i))?;
    let mut tensor: Option<Tensor5<T>> = None;
    for t in 0..t_len {
        let img = pnm::read_pgm(&mask_file(dir, t))?;
        let tensor = tensor
            .get_or_insert_with(|| Tensor5::zeros(Dims5::new(1, 1, t_len, img.height, img.width)));
        let d = tensor.dims();
        if img.height != d.h || img.width != d.w {
            return Err(Error::shape(
                "read_mask frame dims",
                format!("{}x{}", d.h, d.w),
                format!("{}x{}", img.height, img.width),
            ));
        }
        for y in 0..d.h {
            for x in 0..d.w {
                *tensor.at_mut(0, 0, t, y, x) = if img.data[y * d.w + x] >= 128 {
                    T::one()
                } else {
                    T::zero()
                };
            }
        }
    }
    Ok(tensor.unwrap())
}

/// Write a (1, 1, T, H, W) binary tensor as a mask sequence ({0,255} bytes).
pub fn write_mask<T: Scalar>(tensor: &Tensor5<T>, dir: &Path) -> Result<()> {
    let d = tensor.dims();
    if d.n != 1 || d.c != 1 {
        return Err(Error::shape("write_mask", "1x1xTxHxW", d));
    }
    std::fs::create_dir_all(dir)?;
    let mut data = vec![0u8; d.h * d.w];
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                let v = tensor.at(0, 0, t, y, x).as_f64();
                data[y * d.w + x] = match v {
                    0.0 => 0,
                    1.0 => 255,
                    v => return Err(Error::NonBinaryMask(v)),
                };
            }
        }
        pnm::write_pgm(
            &mask_file(dir, t),
            &pnm::PnmImage {
                width: d.w,
                height: d.h,
                data: data.clone(),
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_mapping() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            frame_file(dir.path(), 0),
            b"P6\n2 1\n255\n\x00\x00\x00\xff\xff\xff",
        )
        .unwrap();
        let v: Tensor5<f64> = read_video(dir.path()).unwrap();
        assert_eq!(v.dims(), Dims5::new(1, 3, 1, 1, 2));
        for c in 0..3 {
            assert_eq!(v.at(0, c, 0, 0, 0), -1.0);
            assert_eq!(v.at(0, c, 0, 0, 1), 1.0);
        }
    }

    #[test]
    fn mid_byte_maps_and_requantizes() {
        let v: f64 = byte_to_real(128);
        assert!((v - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((v - 0.00392156862745).abs() < 1e-12);
        assert_eq!(real_to_byte(v), 128);
    }

    #[test]
    fn every_byte_requantizes_exactly() {
        for b in 0..=255u8 {
            assert_eq!(real_to_byte::<f64>(byte_to_real(b)), b);
            assert_eq!(real_to_byte::<f32>(byte_to_real(b)), b);
        }
    }

    #[test]
    fn video_roundtrip_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir(&src).unwrap();
        let mut rng = crate::rng::Rng::from_seed(50);
        for t in 0..3 {
            let data: Vec<u8> = (0..4 * 5 * 3).map(|_| rng.next_u64() as u8).collect();
            pnm::write_ppm(
                &frame_file(&src, t),
                &pnm::PnmImage {
                    width: 5,
                    height: 4,
                    data,
                },
            )
            .unwrap();
        }
        let v: Tensor5<f64> = read_video(&src).unwrap();
        let dst = dir.path().join("dst");
        write_video(&v, &dst).unwrap();
        for t in 0..3 {
            assert_eq!(
                std::fs::read(frame_file(&src, t)).unwrap(),
                std::fs::read(frame_file(&dst, t)).unwrap(),
                "frame {t}"
            );
        }
    }

    #[test]
    fn mask_reads_binary_only() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(mask_file(dir.path(), 0), b"P5\n2 2\n255\n\x00\x7f\x80\xff").unwrap();
        let m: Tensor5<f64> = read_mask(dir.path()).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mask_roundtrip_preserves_files() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir(&src).unwrap();
        std::fs::write(mask_file(&src, 0), b"P5\n2 2\n255\n\x00\xff\xff\x00").unwrap();
        let m: Tensor5<f32> = read_mask(&src).unwrap();
        let dst = dir.path().join("dst");
        write_mask(&m, &dst).unwrap();
        assert_eq!(
            std::fs::read(mask_file(&src, 0)).unwrap(),
            std::fs::read(mask_file(&dst, 0)).unwrap()
        );
    }

    #[test]
    fn missing_frame_breaks_sequence() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(frame_file(dir.path(), 1), b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
        // frame_00000 missing entirely
        assert!(read_video::<f64>(dir.path()).is_err());
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(frame_file(dir.path(), 0), b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
        std::fs::write(
            frame_file(dir.path(), 1),
            b"P6\n2 1\n255\n\x00\x00\x00\x00\x00\x00",
        )
        .unwrap();
        assert!(read_video::<f64>(dir.path()).is_err());
    }
}
