use std::path::{Path, PathBuf};

use hiest::config::KeyValues;
use hiest::data::{FeatureSet, SplitRatios};
use hiest::model::HiestConfig;
use hiest::training::TrainConfig;
use hiest::{Error, Result};

/// Every setting of a train, eval or grid run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub readings: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub threshold: f64,
    pub splits: SplitRatios,
    pub time_of_day: bool,
    pub zero_is_missing: bool,
    pub model: HiestConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            readings: None,
            distances: None,
            threshold: 0.1,
            splits: SplitRatios::default(),
            time_of_day: false,
            zero_is_missing: false,
            model: HiestConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

// Derived from time_of_day rather than set directly.
const DERIVED: [&str; 2] = ["in_dim", "out_dim"];
const PATHS: [&str; 2] = ["readings", "distances"];

impl RunConfig {
    pub fn features(&self) -> FeatureSet {
        if self.time_of_day {
            FeatureSet::ValueAndTimeOfDay
        } else {
            FeatureSet::Value
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        if let Some(p) = &self.readings {
            kv.set("readings", p.display());
        }
        if let Some(p) = &self.distances {
            kv.set("distances", p.display());
        }
        kv.set("threshold", self.threshold);
        kv.set("train_ratio", self.splits.train);
        kv.set("val_ratio", self.splits.val);
        kv.set("test_ratio", self.splits.test);
        kv.set("time_of_day", self.time_of_day);
        kv.set("zero_is_missing", self.zero_is_missing);
        self.model.write_kv(&mut kv);
        for k in DERIVED {
            kv.remove(k);
        }
        self.train.write_kv(&mut kv);
        kv
    }

    /// Every key a config file may set.
    pub fn known_keys() -> Vec<String> {
        let mut keys: Vec<String> = Self::default().to_kv().iter().map(|(k, _)| k.to_string()).collect();
        keys.extend(PATHS.iter().map(|s| s.to_string()));
        keys
    }

    /// Keeps only the entries of `kv` that are run settings.
    pub fn filter_known(kv: &KeyValues) -> KeyValues {
        let known = Self::known_keys();
        let mut out = KeyValues::new();
        for (k, v) in kv.iter() {
            if known.iter().any(|x| x == k) {
                out.set(k, v);
            }
        }
        out
    }

    /// Defaults overlaid with `kv`. Unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let known = Self::known_keys();
        if let Some((k, _)) = kv.iter().find(|(k, _)| !known.iter().any(|x| x == k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let mut cfg = Self::default();
        cfg.readings = kv.get("readings").map(PathBuf::from);
        cfg.distances = kv.get("distances").map(PathBuf::from);
        kv.read_into("threshold", &mut cfg.threshold)?;
        kv.read_into("train_ratio", &mut cfg.splits.train)?;
        kv.read_into("val_ratio", &mut cfg.splits.val)?;
        kv.read_into("test_ratio", &mut cfg.splits.test)?;
        kv.read_into("time_of_day", &mut cfg.time_of_day)?;
        kv.read_into("zero_is_missing", &mut cfg.zero_is_missing)?;
        cfg.model.read_kv(kv)?;
        cfg.model.in_dim = cfg.features().in_dim();
        cfg.train.read_kv(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} must be in (0, 1]", self.threshold)));
        }
        self.splits.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    pub fn readings_path(&self) -> Result<&Path> {
        self.readings
            .as_deref()
            .ok_or_else(|| Error::Config("no readings file given (use --data or --readings)".into()))
    }

    pub fn distances_path(&self) -> Result<&Path> {
        self.distances
            .as_deref()
            .ok_or_else(|| Error::Config("no distances file given (use --data or --distances)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.readings = Some("r.csv".into());
        cfg.time_of_day = true;
        cfg.model.in_dim = 2;
        cfg.model.eta[3] = 0.5;
        cfg.train.lr = 0.01;
        let back = RunConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_and_derived_keys_are_rejected() {
        let kv = KeyValues::parse("lr = 0.1\nlearning_rate = 3\n").unwrap();
        assert!(matches!(RunConfig::from_kv(&kv), Err(Error::Config(_))));
        let kv = KeyValues::parse("in_dim = 2\n").unwrap();
        assert!(RunConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn time_of_day_sets_input_width() {
        let kv = KeyValues::parse("time_of_day = true\n").unwrap();
        assert_eq!(RunConfig::from_kv(&kv).unwrap().model.in_dim, 2);
    }

    #[test]
    fn invalid_values_fail_validation() {
        for text in ["threshold = 0\n", "train_ratio = 0.9\n", "hidden = 0\n", "batch_size = 0\n"] {
            let kv = KeyValues::parse(text).unwrap();
            assert!(RunConfig::from_kv(&kv).is_err(), "{text}");
        }
    }
}
