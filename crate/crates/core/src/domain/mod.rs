//! Value types and file formats shared by every stage.
//!
//! Labels: `1` is channel rock (white), `0` is background (black). The
//! network works in `[-1, 1]`, with `0 ↦ -1` and `1 ↦ +1`.

mod dataset;
mod image;
mod measurement;
mod pgm;

pub use dataset::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION,
};
pub use image::{encode_for_network, threshold, BinaryImage, RealImage};
pub use measurement::{parse_measurements, read_measurements, Measurement, MeasurementSet};
pub use pgm::{decode_pgm, encode_gray_pgm, encode_pgm, read_pgm, write_pgm};
