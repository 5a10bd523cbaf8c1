use chrono::Timelike;

use super::{parse_timestamp, ReadingsFrame};
use crate::config::{parse_f64_list, render_f64_list, KeyValues};
use crate::error::{Error, Result};
use crate::losses::TargetScale;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {r:?}")));
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {s}, not 1")));
        }
        Ok(())
    }
}

/// Input channels per sensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureSet {
    /// The reading only.
    #[default]
    Value,
    /// The reading plus the fraction of the day elapsed.
    ValueAndTimeOfDay,
}

impl FeatureSet {
    pub fn in_dim(self) -> usize {
        match self {
            FeatureSet::Value => 1,
            FeatureSet::ValueAndTimeOfDay => 2,
        }
    }
}

/// One contiguous chronological segment and its sliding windows.
#[derive(Clone, Debug)]
pub struct SampleSet {
    /// Frame index of the first step in this segment.
    pub offset: usize,
    pub history: usize,
    pub horizon: usize,
    /// `[L, N, D_in]` raw features, gaps filled.
    features: Tensor,
    /// `[L, N]` raw target readings, gaps filled.
    target: Vec<f64>,
    observed: Vec<bool>,
}

/// A materialized batch. `x` is standardized; `y` stays in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBatch {
    /// `[B, H, N, D_in]`
    pub x: Tensor,
    /// `[B, T, N, 1]`
    pub y: Tensor,
    /// `[B, T, N, 1]`, 1 where the target was observed.
    pub mask: Tensor,
    /// `[B, N]` raw reading at the last input step.
    pub last_value: Tensor,
}

impl SampleSet {
    pub fn segment_len(&self) -> usize {
        self.target.len() / self.sensor_count().max(1)
    }

    pub fn sensor_count(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.features.shape()[2]
    }

    /// Number of windows.
    pub fn len(&self) -> usize {
        (self.segment_len() + 1).saturating_sub(self.history + self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame indices `[first, end)` covered by window `i`.
    pub fn window_bounds(&self, i: usize) -> (usize, usize) {
        let start = self.offset + i;
        (start, start + self.history + self.horizon)
    }

    pub fn batch(&self, indices: &[usize], norm: &Standardizer) -> Result<ForecastBatch> {
        let (n, d, h, t) = (self.sensor_count(), self.in_dim(), self.history, self.horizon);
        if norm.mean.len() != d {
            return Err(Error::dim("batch", &[norm.mean.len()], &[d]));
        }
        let b = indices.len();
        let mut x = Vec::with_capacity(b * h * n * d);
        let mut y = Vec::with_capacity(b * t * n);
        let mut mask = Vec::with_capacity(b * t * n);
        let mut last = Vec::with_capacity(b * n);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Size(format!("window {i} of {}", self.len())));
            }
            let feats = &self.features.data()[i * n * d..(i + h) * n * d];
            for (k, v) in feats.iter().enumerate() {
                let f = k % d;
                x.push((v - norm.mean[f]) / norm.std[f]);
            }
            let lo = (i + h) * n;
            let hi = (i + h + t) * n;
            y.extend_from_slice(&self.target[lo..hi]);
            mask.extend(self.observed[lo..hi].iter().map(|&o| if o { 1.0 } else { 0.0 }));
            last.extend_from_slice(&self.target[lo - n..lo]);
        }
        Ok(ForecastBatch {
            x: Tensor::new(&[b, h, n, d], x)?,
            y: Tensor::new(&[b, t, n, 1], y)?,
            mask: Tensor::new(&[b, t, n, 1], mask)?,
            last_value: Tensor::new(&[b, n], last)?,
        })
    }
}

/// Chronological train / validation / test segments.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

fn time_of_day(ts: &str) -> Result<f64> {
    let t = parse_timestamp(ts)
        .ok_or_else(|| Error::Config(format!("unparseable timestamp `{ts}`")))?;
    Ok(t.num_seconds_from_midnight() as f64 / 86_400.0)
}

/// Splits `frame` by `ratios` in time order and exposes stride-1 windows of
/// `history + horizon` steps inside each segment.
pub fn split_and_window(
    frame: &ReadingsFrame,
    ratios: SplitRatios,
    history: usize,
    horizon: usize,
    features: FeatureSet,
) -> Result<Splits> {
    ratios.validate()?;
    if history == 0 || horizon == 0 {
        return Err(Error::Config("history and horizon must be positive".into()));
    }
    let total = frame.len();
    let need = history + horizon;
    if total < need {
        return Err(Error::Size(format!("{total} steps cannot hold one window of {need}")));
    }
    let n_train = (total as f64 * ratios.train).round() as usize;
    let n_val = (total as f64 * ratios.val).round() as usize;
    let n_test = total.saturating_sub(n_train + n_val);
    for (name, len) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if len < need {
            return Err(Error::Size(format!(
                "{name} split has {len} steps but one window needs {need}"
            )));
        }
    }
    let seg = |offset, len| segment(frame, offset, len, history, horizon, features);
    Ok(Splits {
        train: seg(0, n_train)?,
        val: seg(n_train, n_val)?,
        test: seg(n_train + n_val, n_test)?,
    })
}

/// Every stride-1 window of the whole frame, without splitting.
pub fn window_all(
    frame: &ReadingsFrame,
    history: usize,
    horizon: usize,
    features: FeatureSet,
) -> Result<SampleSet> {
    if frame.len() < history + horizon {
        return Err(Error::Size(format!(
            "{} steps cannot hold one window of {}",
            frame.len(),
            history + horizon
        )));
    }
    segment(frame, 0, frame.len(), history, horizon, features)
}

fn segment(
    frame: &ReadingsFrame,
    offset: usize,
    len: usize,
    history: usize,
    horizon: usize,
    features: FeatureSet,
) -> Result<SampleSet> {
    let n = frame.sensor_count();
    let d = features.in_dim();
    let mut feats = Vec::with_capacity(len * n * d);
    for i in offset..offset + len {
        let tod = match features {
            FeatureSet::Value => None,
            FeatureSet::ValueAndTimeOfDay => Some(time_of_day(&frame.timestamps[i])?),
        };
        for s in 0..n {
            feats.push(frame.values.data()[i * n + s]);
            feats.extend(tod);
        }
    }
    Ok(SampleSet {
        offset,
        history,
        horizon,
        features: Tensor::new(&[len, n, d], feats)?,
        target: frame.values.data()[offset * n..(offset + len) * n].to_vec(),
        observed: frame.missing[offset * n..(offset + len) * n]
            .iter()
            .map(|m| !m)
            .collect(),
    })
}

/// Per-feature affine normalization fitted on the training segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over observed training entries.
    pub fn fit(train: &SampleSet) -> Result<Self> {
        let (n, d) = (train.sensor_count(), train.in_dim());
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for f in 0..d {
            let vals: Vec<f64> = train
                .features
                .data()
                .iter()
                .skip(f)
                .step_by(d)
                .enumerate()
                .filter(|(k, _)| f != 0 || train.observed[*k])
                .map(|(_, v)| *v)
                .collect();
            if vals.is_empty() {
                return Err(Error::DegenerateFeature(format!("feature {f} has no observations")));
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            if !(var.sqrt() > 0.0) {
                return Err(Error::DegenerateFeature(format!(
                    "feature {f} is constant ({m}) over {} training entries of {n} sensors",
                    vals.len()
                )));
            }
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, feature: usize, v: f64) -> f64 {
        (v - self.mean[feature]) / self.std[feature]
    }

    pub fn destandardize(&self, feature: usize, v: f64) -> f64 {
        v * self.std[feature] + self.mean[feature]
    }

    /// Maps standardized model output of the reading channel back to units.
    pub fn target_scale(&self) -> TargetScale {
        TargetScale {
            mean: self.mean[0],
            std: self.std[0],
        }
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("norm_mean", render_f64_list(&self.mean));
        kv.set("norm_std", render_f64_list(&self.std));
    }

    pub fn read_kv(kv: &KeyValues) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Config(format!("missing {k}")))
                .and_then(parse_f64_list)
        };
        let (mean, std) = (get("norm_mean")?, get("norm_std")?);
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Config("norm_mean and norm_std disagree".into()));
        }
        Ok(Self { mean, std })
    }
}
