//! Binary PPM (P6) and PGM (P5) codecs, maxval 255 only.
//!
//! The writer emits the canonical header form `P6\n{w} {h}\n255\n`; the reader
//! accepts any standard netpbm whitespace/comment layout so externally
//! produced files load too.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved samples: RGB triplets for P6, single bytes for P5.
    pub data: Vec<u8>,
}

fn parse_header(bytes: &[u8], path: &Path, magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    let err = |msg: &str| Error::format(path.display(), msg);
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(&format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected integer in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| err("header integer out of range"))?;
    }
    // exactly one whitespace byte separates maxval from raster data
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(&format!("unsupported maxval {maxval}, expected 255")));
    }
    if w == 0 || h == 0 {
        return Err(err("zero image dimension"));
    }
    Ok((w, h, pos))
}

fn read_pnm(path: &Path, magic: &[u8; 2], samples_per_pixel: usize) -> Result<PnmImage> {
    let bytes = fs::read(path)?;
    let (width, height, offset) = parse_header(&bytes, path, magic)?;
    let expected = width * height * samples_per_pixel;
    let raster = &bytes[offset..];
    if raster.len() < expected {
        return Err(Error::format(
            path.display(),
            format!("raster truncated: {} of {expected} bytes", raster.len()),
        ));
    }
    Ok(PnmImage {
        width,
        height,
        data: raster[..expected].to_vec(),
    })
}

fn write_pnm(path: &Path, magic: &[u8; 2], img: &PnmImage, samples_per_pixel: usize) -> Result<()> {
    debug_assert_eq!(img.data.len(), img.width * img.height * samples_per_pixel);
    let mut out = Vec::with_capacity(img.data.len() + 32);
    out.extend_from_slice(magic);
    write!(&mut out, "\n{} {}\n255\n", img.width, img.height)?;
    out.extend_from_slice(&img.data);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<PnmImage> {
    read_pnm(path, b"P6", 3)
}

pub fn write_ppm(path: &Path, img: &PnmImage) -> Result<()> {
    write_pnm(path, b"P6", img, 3)
}

pub fn read_pgm(path: &Path) -> Result<PnmImage> {
    read_pnm(path, b"P5", 1)
}

pub fn write_pgm(path: &Path, img: &PnmImage) -> Result<()> {
    write_pnm(path, b"P5", img, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        fs::write(&path, b"P6\n2 1\n255\n\x00\x00\x00\xff\xff\xff").unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![0, 0, 0, 255, 255, 255]);
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        fs::write(
            &path,
            b"P5 # comment\n# another\n 2\t2 #x\n255\n\x01\x02\x03\x04",
        )
        .unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn rejects_bad_magic_and_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        fs::write(&path, b"P5\n1 1\n255\n\x00").unwrap();
        assert!(read_ppm(&path).is_err());
        fs::write(&path, b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn rejects_truncated_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        fs::write(&path, b"P6\n2 2\n255\n\x00\x00\x00").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn writer_emits_canonical_form() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = PnmImage {
            width: 2,
            height: 1,
            data: vec![0, 0, 0, 255, 255, 255],
        };
        write_ppm(&path, &img).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            b"P6\n2 1\n255\n\x00\x00\x00\xff\xff\xff"
        );
    }
}
