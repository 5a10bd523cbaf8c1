use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use chrono::{NaiveDate, TimeDelta};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_distances, write_readings, ReadingsFrame};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, DistanceRecord, SensorGraph, DEFAULT_KERNEL_THRESHOLD};

/// Parameters of the planted-hierarchy generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub regions: usize,
    pub nodes_per_region: usize,
    pub patterns: usize,
    pub steps: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            regions: 4,
            nodes_per_region: 5,
            patterns: 2,
            steps: 2000,
            seed: 0,
            noise: 0.25,
        }
    }
}

/// Ground truth of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub sensor_ids: Vec<String>,
    /// Regions containing each sensor; cut vertices list several.
    pub region_labels: Vec<Vec<usize>>,
    /// Temporal archetype driving each region.
    pub pattern_labels: Vec<usize>,
    pub cut_vertices: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub regions: usize,
    pub nodes_per_region: usize,
    pub patterns: usize,
    pub steps: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub graph: SensorGraph,
    pub distances: Vec<DistanceRecord>,
    pub readings: ReadingsFrame,
    pub truth: PlantedTruth,
}

const STEP_MINUTES: i64 = 5;
const SCALE_M: f64 = 1000.0;

struct Archetype {
    base: f64,
    /// (amplitude, period in steps, phase)
    waves: Vec<(f64, f64, f64)>,
}

impl Archetype {
    fn at(&self, t: usize) -> f64 {
        self.base
            + self
                .waves
                .iter()
                .map(|&(a, p, ph)| a * (TAU * t as f64 / p + ph).sin())
                .sum::<f64>()
    }
}

/// Regions are biconnected cycles with a chord, arranged as a tree: every
/// region after the first shares one node of an earlier region, which
/// becomes a cut vertex. Each region follows one of `patterns` sinusoid
/// mixtures; cut vertices average the patterns of their regions.
pub fn synth_hierarchical(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.regions < 2 || cfg.nodes_per_region < 2 || cfg.steps < 2 || cfg.patterns < 1 {
        return Err(Error::Config(
            "synthetic data needs regions, nodes per region and steps >= 2, and patterns >= 1".into(),
        ));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be finite and >= 0", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (r, k) = (cfg.regions, cfg.nodes_per_region);
    let n = r * k;

    let mut members: Vec<Vec<usize>> = Vec::with_capacity(r);
    let mut edges = BTreeSet::new();
    let link = |a: usize, b: usize, edges: &mut BTreeSet<(usize, usize)>| {
        edges.insert((a.min(b), a.max(b)));
    };
    for reg in 0..r {
        let own: Vec<usize> = (reg * k..(reg + 1) * k).collect();
        let mut cycle = own.clone();
        if reg > 0 {
            let parent = rng.random_range(0..reg);
            let connector = members[parent][rng.random_range(0..members[parent].len())];
            cycle.insert(0, connector);
        }
        let m = cycle.len();
        if m == 2 {
            link(cycle[0], cycle[1], &mut edges);
        } else {
            for i in 0..m {
                link(cycle[i], cycle[(i + 1) % m], &mut edges);
            }
            if m >= 4 {
                link(cycle[0], cycle[m / 2], &mut edges);
            }
        }
        members.push(cycle);
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();

    let sensor_ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let mut region_labels = vec![Vec::new(); n];
    for (reg, m) in members.iter().enumerate() {
        for &v in m {
            region_labels[v].push(reg);
        }
    }
    let cut_vertices = (0..n)
        .filter(|&v| region_labels[v].len() > 1)
        .map(|v| sensor_ids[v].clone())
        .collect();

    // Pattern per region: cycle through archetypes in a shuffled order so
    // every archetype is used when regions >= patterns.
    let mut order: Vec<usize> = (0..cfg.patterns).collect();
    order.shuffle(&mut rng);
    let pattern_labels: Vec<usize> = (0..r).map(|reg| order[reg % cfg.patterns]).collect();
    let archetypes: Vec<Archetype> = (0..cfg.patterns)
        .map(|p| Archetype {
            base: 60.0 + rng.random_range(-5.0..5.0),
            waves: vec![
                (10.0, 288.0, rng.random_range(0.0..TAU)),
                (5.0, [72.0, 48.0, 96.0, 36.0][p % 4] * (1.0 + p as f64 / 8.0), rng.random_range(0.0..TAU)),
                (2.0, 18.0 + 3.0 * p as f64, rng.random_range(0.0..TAU)),
            ],
        })
        .collect();

    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let start = NaiveDate::from_ymd_opt(2012, 3, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");
    let timestamps: Vec<String> = (0..cfg.steps)
        .map(|t| {
            (start + TimeDelta::minutes(STEP_MINUTES * t as i64))
                .format("%Y-%m-%dT%H:%M:%S")
                .to_string()
        })
        .collect();
    let mut cells = Vec::with_capacity(cfg.steps * n);
    for t in 0..cfg.steps {
        for labels in &region_labels {
            let v = labels
                .iter()
                .map(|&reg| archetypes[pattern_labels[reg]].at(t))
                .sum::<f64>()
                / labels.len() as f64;
            let eps = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            cells.push(Some(v + eps));
        }
    }
    let readings = ReadingsFrame::from_cells(timestamps, sensor_ids.clone(), &cells)?;

    // Adjacent sensors are close, all others far, so the kernel threshold
    // recovers exactly the planted edges.
    let edge_set: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut distances = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = if i == j {
                0.0
            } else if edge_set.contains(&(i.min(j), i.max(j))) {
                rng.random_range(0.2..0.6) * SCALE_M
            } else {
                rng.random_range(2.5..4.0) * SCALE_M
            };
            distances.push(DistanceRecord::new(&sensor_ids[i], &sensor_ids[j], d.round()));
        }
    }
    let graph = build_adjacency(&distances, DEFAULT_KERNEL_THRESHOLD, Some(&sensor_ids))?;
    let recovered: Vec<(usize, usize)> = graph.edges().iter().map(|&(i, j, _)| (i, j)).collect();
    if recovered != edges {
        return Err(Error::Construction(
            "kernel threshold did not recover the planted edges".into(),
        ));
    }

    Ok(SynthDataset {
        graph,
        distances,
        readings,
        truth: PlantedTruth {
            sensor_ids,
            region_labels,
            pattern_labels,
            cut_vertices,
            edges,
            regions: r,
            nodes_per_region: k,
            patterns: cfg.patterns,
            steps: cfg.steps,
            noise: cfg.noise,
            seed: cfg.seed,
        },
    })
}

/// Writes `readings.csv`, `distances.csv` and `planted.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_readings(&dir.join("readings.csv"), &ds.readings)?;
    write_distances(&dir.join("distances.csv"), &ds.distances)?;
    let json = serde_json::to_string_pretty(&ds.truth)?;
    std::fs::write(dir.join("planted.json"), json + "\n")?;
    Ok(())
}
