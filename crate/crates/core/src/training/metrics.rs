use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forecast steps reported individually (15, 30 and 60 minutes at 5-minute
/// resolution).
pub const REPORT_HORIZONS: [usize; 3] = [3, 6, 12];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    /// Percent; `None` when no usable target remains.
    pub mape: Option<f64>,
    pub rmse: f64,
    pub count: usize,
}

/// Running sums for one horizon or for all of them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    abs: f64,
    sq: f64,
    pct: f64,
    count: usize,
    pct_count: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, pred: f64, target: f64) {
        let e = pred - target;
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
        if target != 0.0 {
            self.pct += (e / target).abs();
            self.pct_count += 1;
        }
    }

    pub fn finish(&self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mae: self.abs / n,
            mape: (self.pct_count > 0).then(|| 100.0 * self.pct / self.pct_count as f64),
            rmse: (self.sq / n).sqrt(),
            count: self.count,
        }
    }
}

/// Masked metrics at selected horizons plus over every step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// `(horizon step, metrics)`, 1-based steps.
    pub horizons: Vec<(usize, Metrics)>,
    pub overall: Metrics,
}

/// Accumulates `[B, T, N, 1]` predictions against targets and a 0/1 mask.
#[derive(Clone, Debug)]
pub struct ReportBuilder {
    per_step: Vec<MetricAccumulator>,
    overall: MetricAccumulator,
}

impl ReportBuilder {
    pub fn new(horizon: usize) -> Self {
        Self {
            per_step: vec![MetricAccumulator::default(); horizon],
            overall: MetricAccumulator::default(),
        }
    }

    pub fn add(&mut self, pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<()> {
        if pred.shape() != target.shape() || pred.shape() != mask.shape() || pred.rank() != 4 {
            return Err(Error::dim("metrics", pred.shape(), target.shape()));
        }
        let s = pred.shape();
        let (t, per_t) = (s[1], s[2] * s[3]);
        if t != self.per_step.len() {
            return Err(Error::dim("metrics", s, &[s[0], self.per_step.len(), s[2], s[3]]));
        }
        for (k, ((&p, &y), &m)) in pred.data().iter().zip(target.data()).zip(mask.data()).enumerate() {
            if m == 0.0 {
                continue;
            }
            let step = (k / per_t) % t;
            self.per_step[step].push(p, y);
            self.overall.push(p, y);
        }
        Ok(())
    }

    pub fn finish(&self) -> MetricReport {
        MetricReport {
            horizons: REPORT_HORIZONS
                .iter()
                .filter(|&&h| h <= self.per_step.len())
                .map(|&h| (h, self.per_step[h - 1].finish()))
                .collect(),
            overall: self.overall.finish(),
        }
    }
}

fn mape_cell(m: Option<f64>) -> String {
    m.map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"))
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "horizon,mae,mape,rmse,count";

    /// One row per horizon and a final `all` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let row = |label: String, m: &Metrics| {
            let mape = m.mape.map_or_else(|| "NA".to_string(), |v| v.to_string());
            format!("{label},{},{mape},{},{}\n", m.mae, m.rmse, m.count)
        };
        for (h, m) in &self.horizons {
            out += &row(h.to_string(), m);
        }
        out += &row("all".into(), &self.overall);
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>10} {:>10} {:>10}", "horizon", "MAE", "MAPE(%)", "RMSE")?;
        for (h, m) in &self.horizons {
            writeln!(f, "{:>8} {:>10.4} {:>10} {:>10.4}", h, m.mae, mape_cell(m.mape), m.rmse)?;
        }
        let m = &self.overall;
        write!(f, "{:>8} {:>10.4} {:>10} {:>10.4}", "all", m.mae, mape_cell(m.mape), m.rmse)
    }
}
