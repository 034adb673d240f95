//! Binary PGM (P5, maxval 255) for interchange with image viewers.
//!
//! Label images map `0 ↦ 0` and `1 ↦ 255`; any other gray level is rejected
//! on import.

use std::fs;
use std::path::Path;

use super::BinaryImage;
use crate::{Error, Result};

pub fn encode_pgm(img: &BinaryImage) -> Vec<u8> {
    let gray: Vec<u8> = img.data().iter().map(|&v| v * 255).collect();
    encode_gray_pgm(img.height(), img.width(), &gray)
}

/// Encodes raw 8-bit gray levels.
pub fn encode_gray_pgm(height: usize, width: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(
        gray.len(),
        height * width,
        "gray buffer does not match dimensions"
    );
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(
            pos,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos, "missing whitespace after header"));
    }
    pos += 1;
    let px = width * height;
    let payload = &bytes[pos..];
    if payload.len() < px {
        return Err(Error::format(
            bytes.len(),
            format!("truncated raster, expected {px} bytes"),
        ));
    }
    let mut data = Vec::with_capacity(px);
    for (i, &g) in payload[..px].iter().enumerate() {
        match g {
            0 => data.push(0),
            255 => data.push(1),
            other => {
                return Err(Error::format(
                    pos + i,
                    format!("gray level {other} is neither 0 nor 255"),
                ))
            }
        }
    }
    BinaryImage::new(height, width, data)
}

pub fn write_pgm(img: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<BinaryImage> {
    decode_pgm(&fs::read(path)?)
}
