//! `GEOD` dataset container.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "GEOD" | version | count | height | width | count*height*width label bytes
//! ```

use std::fs;
use std::path::Path;

use super::BinaryImage;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"GEOD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_dataset(images: &[BinaryImage]) -> Result<Vec<u8>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot write an empty dataset"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(i) = images
        .iter()
        .position(|im| im.height() != h || im.width() != w)
    {
        return Err(Error::shape(format!(
            "image {} is {}x{}, expected {}x{}",
            i,
            images[i].height(),
            images[i].width(),
            h,
            w
        )));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + images.len() * h * w);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(images.len(), "count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(h, "height")?.to_le_bytes());
    out.extend_from_slice(&to_u32(w, "width")?.to_le_bytes());
    for im in images {
        out.extend_from_slice(im.data());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<BinaryImage>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, expected GEOD"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = word(4);
    if version != DATASET_VERSION as usize {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let (count, h, w) = (word(8), word(12), word(16));
    let expected = count
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(8, "header dimensions overflow"))?;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected, "trailing bytes after payload"));
    }
    let payload = &bytes[HEADER_LEN..];
    if let Some(pos) = payload.iter().position(|&b| b > 1) {
        return Err(Error::format(
            HEADER_LEN + pos,
            format!("label byte {} is not 0 or 1", payload[pos]),
        ));
    }
    let px = h * w;
    Ok((0..count)
        .map(|i| BinaryImage::new(h, w, payload[i * px..(i + 1) * px].to_vec()).expect("validated"))
        .collect())
}

pub fn write_dataset(images: &[BinaryImage], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(images)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<BinaryImage>> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn checker(h: usize, w: usize, phase: usize) -> BinaryImage {
        let data = (0..h * w)
            .map(|i| ((i / w + i % w + phase) % 2) as u8)
            .collect();
        BinaryImage::new(h, w, data).unwrap()
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let imgs: Vec<_> = (0..3).map(|p| checker(8, 8, p)).collect();
        let bytes = encode_dataset(&imgs).unwrap();
        assert_eq!(bytes.len(), 20 + 3 * 64);
        assert_eq!(&bytes[..4], b"GEOD");
    }

    #[test]
    fn out_of_range_byte_names_offset() {
        let imgs = vec![checker(4, 4, 0)];
        let mut bytes = encode_dataset(&imgs).unwrap();
        bytes[20 + 5] = 2;
        match decode_dataset(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 25),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_dataset(&[checker(4, 4, 0)]).unwrap();
        assert!(matches!(
            decode_dataset(&bytes[..30]),
            Err(Error::Format { offset: 30, .. })
        ));
        assert!(matches!(
            decode_dataset(&bytes[..10]),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_dataset(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn write_rejects_empty_and_mixed() {
        assert!(encode_dataset(&[]).is_err());
        assert!(encode_dataset(&[checker(4, 4, 0), checker(4, 5, 0)]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.geod");
        let imgs: Vec<_> = (0..5).map(|p| checker(6, 3, p)).collect();
        write_dataset(&imgs, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), imgs);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(count in 1usize..6, h in 1usize..10, w in 1usize..10,
                               bits in proptest::collection::vec(0u8..2, 900)) {
            let imgs: Vec<_> = (0..count)
                .map(|i| {
                    let data = (0..h * w).map(|j| bits[(i * h * w + j) % bits.len()]).collect();
                    BinaryImage::new(h, w, data).unwrap()
                })
                .collect();
            let bytes = encode_dataset(&imgs).unwrap();
            let back = decode_dataset(&bytes).unwrap();
            prop_assert_eq!(&back, &imgs);
            prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
        }
    }
}
