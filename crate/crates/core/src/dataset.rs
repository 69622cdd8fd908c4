//! Row-major point sets, normalization and client partitioning.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

/// `n` points of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !values.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {d}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate at flat index {i}")));
        }
        Ok(Dataset { d, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has {} coordinates, expected {d}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Dataset::new(d, values)
    }

    pub fn empty(d: usize) -> Self {
        Dataset { d, values: Vec::new() }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn push(&mut self, point: &[f64]) {
        assert_eq!(point.len(), self.d, "dimension mismatch");
        self.values.extend_from_slice(point);
    }

    /// Sub-dataset made of the given row indices, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            values.extend_from_slice(self.point(i));
        }
        Dataset { d: self.d, values }
    }

    /// Concatenation of datasets sharing one dimension.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let d = parts.first().map(|p| p.d).ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut values = Vec::new();
        for p in parts {
            if p.d != d {
                return Err(Error::invalid("dimension mismatch in concat"));
            }
            values.extend_from_slice(&p.values);
        }
        Ok(Dataset { d, values })
    }

    /// Whether every coordinate lies in `[-bound, bound]`.
    pub fn within(&self, bound: f64) -> bool {
        self.values.iter().all(|v| v.abs() <= bound)
    }
}

/// Per-dimension affine map produced by normalization: each dimension's
/// observed `[min, max]` goes to `[-bound, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub bound: f64,
}

impl AffineMap {
    pub fn apply(&self, point: &[f64]) -> Vec<f64> {
        (0..point.len())
            .map(|h| {
                let span = self.max[h] - self.min[h];
                if span > 0.0 {
                    -self.bound + 2.0 * self.bound * (point[h] - self.min[h]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Back to raw units. Constant dimensions map back to their constant.
    pub fn invert(&self, point: &[f64]) -> Vec<f64> {
        (0..point.len())
            .map(|h| {
                let span = self.max[h] - self.min[h];
                self.min[h] + (point[h] + self.bound) * span / (2.0 * self.bound)
            })
            .collect()
    }
}

/// Map each dimension affinely so its minimum goes to `-bound` and its
/// maximum to `+bound`. Constant dimensions map to 0.
pub fn normalize_dataset(raw: &Dataset, bound: f64) -> Result<(Dataset, AffineMap)> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty dataset"));
    }
    let d = raw.d();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for p in raw.points() {
        for h in 0..d {
            min[h] = min[h].min(p[h]);
            max[h] = max[h].max(p[h]);
        }
    }
    let map = AffineMap { min, max, bound };
    let mut values = Vec::with_capacity(raw.values.len());
    for p in raw.points() {
        values.extend(map.apply(p).into_iter().map(|y| y.clamp(-bound, bound)));
    }
    Ok((Dataset { d, values }, map))
}

/// Shuffle with the partition stream and cut into `clients` balanced shards.
pub fn partition_dataset(data: &Dataset, clients: usize, rng: &SeededRng) -> Result<Vec<Dataset>> {
    if clients == 0 {
        return Err(Error::invalid("at least one shard is required"));
    }
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.stream(Stream::Partition));
    let base = n / clients;
    let extra = n % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for i in 0..clients {
        let len = base + usize::from(i < extra);
        shards.push(data.select(&order[start..start + len]));
        start += len;
    }
    Ok(shards)
}

/// Parsed CSV: the points plus an optional trailing integer label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub data: Dataset,
    pub labels: Option<Vec<i64>>,
}

/// Load comma-separated points. A first row that does not parse as numbers is
/// treated as a header. With `label_column`, the last column is split off as
/// integer labels.
pub fn read_csv<R: Read>(reader: R, label_column: bool) -> Result<Labeled> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut d = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let mut row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::invalid(format!("row {}: {e}", i + 1))),
        };
        if label_column {
            let label = row
                .pop()
                .ok_or_else(|| Error::invalid(format!("row {}: missing label", i + 1)))?;
            labels.push(label as i64);
        }
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::invalid(format!(
                    "row {} has {} coordinates, expected {d}",
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
    }
    let d = d.ok_or_else(|| Error::invalid("csv contains no points"))?;
    Ok(Labeled {
        data: Dataset::new(d, values)?,
        labels: label_column.then_some(labels),
    })
}

pub fn load_csv(path: impl AsRef<Path>, label_column: bool) -> Result<Labeled> {
    read_csv(std::fs::File::open(path)?, label_column)
}

/// Write points (and labels, if given) as CSV with a `x0,x1,...[,label]` header.
pub fn write_csv<W: std::io::Write>(out: W, data: &Dataset, labels: Option<&[i64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.d()).map(|h| format!("x{h}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, p) in data.points().enumerate() {
        let mut row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        if let Some(labels) = labels {
            row.push(labels[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
