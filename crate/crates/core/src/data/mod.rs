//! Readings and distance files, forecasting windows, and synthetic data.

mod synth;
mod window;

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::graph::DistanceRecord;
use crate::tensor::Tensor;

pub use synth::{synth_hierarchical, write_dataset, PlantedTruth, SynthConfig, SynthDataset};
pub use window::{
    split_and_window, window_all, FeatureSet, ForecastBatch, SampleSet, SplitRatios, Splits, Standardizer,
};

const TIME_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"];

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Sensor readings on a uniform time grid.
///
/// Missing cells are stored forward-filled in `values` and flagged in
/// `missing`; leading gaps take the first observed value of the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadingsFrame {
    pub timestamps: Vec<String>,
    pub sensor_ids: Vec<String>,
    /// `[T, N]`
    pub values: Tensor,
    /// Row-major `[T, N]` flags.
    pub missing: Vec<bool>,
}

impl ReadingsFrame {
    /// Builds a frame from raw cells, `None` meaning missing.
    pub fn from_cells(
        timestamps: Vec<String>,
        sensor_ids: Vec<String>,
        cells: &[Option<f64>],
    ) -> Result<Self> {
        let (t, n) = (timestamps.len(), sensor_ids.len());
        if cells.len() != t * n {
            return Err(Error::InvalidTensor(format!(
                "{} cells for {t} timestamps x {n} sensors",
                cells.len()
            )));
        }
        let missing: Vec<bool> = cells.iter().map(Option::is_none).collect();
        let mut values = vec![0.0; t * n];
        for s in 0..n {
            let first = (0..t).find_map(|i| cells[i * n + s]).unwrap_or(0.0);
            let mut last = first;
            for i in 0..t {
                if let Some(v) = cells[i * n + s] {
                    last = v;
                }
                values[i * n + s] = last;
            }
        }
        Ok(Self {
            timestamps,
            sensor_ids,
            values: Tensor::new(&[t, n], values)?,
            missing,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_ids.len()
    }

    /// Fraction of missing cells per sensor.
    pub fn missing_rate(&self) -> Vec<f64> {
        let (t, n) = (self.len(), self.sensor_count());
        (0..n)
            .map(|s| {
                let m = (0..t).filter(|&i| self.missing[i * n + s]).count();
                if t == 0 {
                    0.0
                } else {
                    m as f64 / t as f64
                }
            })
            .collect()
    }

    /// Also flags exact zeros as missing, as speed sensors report 0 when
    /// offline. Values are re-filled from the remaining observations.
    pub fn with_zeros_missing(&self) -> Self {
        let cells: Vec<Option<f64>> = self
            .values
            .data()
            .iter()
            .zip(&self.missing)
            .map(|(&v, &m)| if m || v == 0.0 { None } else { Some(v) })
            .collect();
        Self::from_cells(self.timestamps.clone(), self.sensor_ids.clone(), &cells)
            .expect("same dimensions")
    }

    /// Reorders columns to `order`. Every id must be present.
    pub fn select_sensors(&self, order: &[String]) -> Result<Self> {
        let n = self.sensor_count();
        let idx = order
            .iter()
            .map(|id| {
                self.sensor_ids.iter().position(|s| s == id).ok_or_else(|| {
                    Error::Construction(format!("sensor {id} has no readings"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t = self.len();
        let m = idx.len();
        let values = Tensor::from_fn(&[t, m], |k| self.values.data()[(k / m) * n + idx[k % m]]);
        let missing = (0..t * m).map(|k| self.missing[(k / m) * n + idx[k % m]]).collect();
        Ok(Self {
            timestamps: self.timestamps.clone(),
            sensor_ids: order.to_vec(),
            values,
            missing,
        })
    }
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

fn csv_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => format_err(
            path,
            line,
            format!("expected {expected_len} fields, found {len}"),
        ),
        other => format_err(path, line, format!("{other:?}")),
    }
}

/// Reads `timestamp,<sensor_1>,...` with one row per time step. Empty cells
/// are missing. Timestamps must be strictly increasing at a fixed interval.
pub fn load_readings(path: &Path) -> Result<ReadingsFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(format_err(path, 1, "header needs a timestamp column and at least one sensor"));
    }
    let sensor_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut timestamps = Vec::new();
    let mut cells = Vec::new();
    let mut prev: Option<NaiveDateTime> = None;
    let mut step: Option<chrono::TimeDelta> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = csv_line(&rec, row + 2);
        let ts_raw = &rec[0];
        let ts = parse_timestamp(ts_raw)
            .ok_or_else(|| format_err(path, line, format!("unparseable timestamp `{ts_raw}`")))?;
        if let Some(p) = prev {
            let d = ts - p;
            if d <= chrono::TimeDelta::zero() {
                return Err(format_err(path, line, format!("timestamp {ts_raw} is not after the previous row")));
            }
            match step {
                None => step = Some(d),
                Some(s) if s != d => {
                    return Err(format_err(
                        path,
                        line,
                        format!("interval {}s differs from {}s", d.num_seconds(), s.num_seconds()),
                    ))
                }
                _ => {}
            }
        }
        prev = Some(ts);
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                cells.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                format_err(path, line, format!("sensor {}: `{cell}` is not a number", sensor_ids[j]))
            })?;
            if !v.is_finite() {
                return Err(format_err(path, line, format!("sensor {}: non-finite value", sensor_ids[j])));
            }
            cells.push(Some(v));
        }
        timestamps.push(ts_raw.to_string());
    }
    ReadingsFrame::from_cells(timestamps, sensor_ids, &cells)
}

pub fn write_readings(path: &Path, frame: &ReadingsFrame) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "timestamp,{}", frame.sensor_ids.join(","))?;
    let n = frame.sensor_count();
    for (i, ts) in frame.timestamps.iter().enumerate() {
        write!(w, "{ts}")?;
        for s in 0..n {
            let k = i * n + s;
            if frame.missing[k] {
                write!(w, ",")?;
            } else {
                write!(w, ",{}", frame.values.data()[k])?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `from_id,to_id,distance` rows (header required).
pub fn load_distances(path: &Path) -> Result<Vec<DistanceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?;
    if header.len() != 3 {
        return Err(format_err(path, 1, "expected header `from_id,to_id,distance`"));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = csv_line(&rec, row + 2);
        let meters: f64 = rec[2]
            .parse()
            .map_err(|_| format_err(path, line, format!("`{}` is not a distance", &rec[2])))?;
        if !(meters >= 0.0) || !meters.is_finite() {
            return Err(format_err(path, line, format!("distance {meters} must be finite and >= 0")));
        }
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(format_err(path, line, "empty sensor id"));
        }
        out.push(DistanceRecord::new(&rec[0], &rec[1], meters));
    }
    if out.is_empty() {
        return Err(format_err(path, 1, "no distance rows"));
    }
    Ok(out)
}

pub fn write_distances(path: &Path, records: &[DistanceRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "from_id,to_id,distance_m")?;
    for r in records {
        writeln!(w, "{},{},{}", r.from, r.to, r.meters)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
