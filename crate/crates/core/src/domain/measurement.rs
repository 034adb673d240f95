use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// One point observation: the rock type at a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Measurement {
    pub row: usize,
    pub col: usize,
    pub rock: u8,
}

impl Measurement {
    pub fn new(row: usize, col: usize, rock: u8) -> Result<Self> {
        if rock > 1 {
            return Err(Error::invalid(format!("rock type {rock} is not 0 or 1")));
        }
        Ok(Self { row, col, rock })
    }
}

/// Ordered measurements with unique coordinates.
///
/// Order matters: mask expansion breaks ties in favour of the earlier entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MeasurementSet {
    items: Vec<Measurement>,
}

impl MeasurementSet {
    /// Collapses exact duplicates (first occurrence kept) and rejects two
    /// entries at the same pixel with different rock types.
    pub fn new(items: impl IntoIterator<Item = Measurement>) -> Result<Self> {
        let mut seen: HashMap<(usize, usize), u8> = HashMap::new();
        let mut out = Vec::new();
        for m in items {
            if m.rock > 1 {
                return Err(Error::invalid(format!(
                    "rock type {} is not 0 or 1",
                    m.rock
                )));
            }
            match seen.get(&(m.row, m.col)) {
                Some(&r) if r == m.rock => {}
                Some(&r) => {
                    return Err(Error::invalid(format!(
                        "conflicting measurements at ({}, {}): {} vs {}",
                        m.row, m.col, r, m.rock
                    )))
                }
                None => {
                    seen.insert((m.row, m.col), m.rock);
                    out.push(m);
                }
            }
        }
        Ok(Self { items: out })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Measurement> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Measurement] {
        &self.items
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        for m in &self.items {
            if m.row >= height || m.col >= width {
                return Err(Error::invalid(format!(
                    "measurement ({}, {}) lies outside the {}x{} grid",
                    m.row, m.col, height, width
                )));
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a MeasurementSet {
    type Item = &'a Measurement;
    type IntoIter = std::slice::Iter<'a, Measurement>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Parses `row,col,rock` records, one per line. Blank lines and lines
/// starting with `#` are skipped. `grid` is `(height, width)` when bounds
/// should be checked.
pub fn parse_measurements(text: &str, grid: Option<(usize, usize)>) -> Result<MeasurementSet> {
    let mut items = Vec::new();
    let mut seen: HashMap<(usize, usize), (u8, usize)> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let parse = |s: &str, name: &str| {
            s.parse::<usize>()
                .map_err(|_| err(format!("{name} {s:?} is not a non-negative integer")))
        };
        let row = parse(fields[0], "row")?;
        let col = parse(fields[1], "col")?;
        let rock = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("rock {other:?} must be 0 or 1"))),
        };
        if let Some((h, w)) = grid {
            if row >= h || col >= w {
                return Err(err(format!("({row}, {col}) is outside the {h}x{w} grid")));
            }
        }
        match seen.get(&(row, col)) {
            Some(&(r, _)) if r == rock => continue,
            Some(&(r, first)) => {
                return Err(err(format!(
                    "rock {rock} at ({row}, {col}) conflicts with rock {r} on line {first}"
                )))
            }
            None => {
                seen.insert((row, col), (rock, line_no));
            }
        }
        items.push(Measurement { row, col, rock });
    }
    Ok(MeasurementSet { items })
}

pub fn read_measurements(
    path: impl AsRef<Path>,
    grid: Option<(usize, usize)>,
) -> Result<MeasurementSet> {
    let text = fs::read_to_string(path)?;
    parse_measurements(&text, grid)
}
