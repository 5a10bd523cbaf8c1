use super::*;
use crate::graph::{build_adjacency, tarjan_bcc, DEFAULT_KERNEL_THRESHOLD};
use std::fs;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn frame(values: &[f64], n: usize) -> ReadingsFrame {
    let t = values.len() / n;
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let ts = (0..t)
        .map(|i| (start + chrono::TimeDelta::minutes(5 * i as i64)).format("%Y-%m-%dT%H:%M:%S").to_string())
        .collect();
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    let cells: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
    ReadingsFrame::from_cells(ts, ids, &cells).unwrap()
}

#[test]
fn loads_well_formed_readings() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "r.csv",
        "timestamp,a,b\n2012-03-01 00:00:00,1.5,2\n2012-03-01 00:05:00,,3\n2012-03-01 00:10:00,4,5\n",
    );
    let f = load_readings(&p).unwrap();
    assert_eq!((f.len(), f.sensor_count()), (3, 2));
    assert_eq!(f.sensor_ids, vec!["a", "b"]);
    assert!(f.missing[2]);
    assert_eq!(f.missing.iter().filter(|&&m| m).count(), 1);
    // Forward-filled, flagged, never silently zero.
    assert_eq!(f.values.at(&[1, 0]), 1.5);
    assert_eq!(f.missing_rate(), vec![1.0 / 3.0, 0.0]);
}

#[test]
fn leading_gaps_take_the_first_observation() {
    let f = ReadingsFrame::from_cells(
        vec!["t0".into(), "t1".into(), "t2".into()],
        vec!["a".into()],
        &[None, Some(7.0), None],
    )
    .unwrap();
    assert_eq!(f.values.data(), &[7.0, 7.0, 7.0]);
    assert_eq!(f.missing, vec![true, false, true]);
}

#[test]
fn zero_readings_can_be_flagged() {
    let f = frame(&[5.0, 0.0, 6.0, 0.0], 1).with_zeros_missing();
    assert_eq!(f.missing, vec![false, true, false, true]);
    assert_eq!(f.values.data(), &[5.0, 5.0, 6.0, 6.0]);
}

#[test]
fn readings_format_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("timestamp,a,b\n2012-03-01 00:00:00,1,2\n2012-03-01 00:05:00,3\n", 3),
        ("timestamp,a\n2012-03-01 00:05:00,1\n2012-03-01 00:00:00,2\n", 3),
        ("timestamp,a\n2012-03-01 00:00:00,1\n2012-03-01 00:05:00,2\n2012-03-01 00:15:00,2\n", 4),
        ("timestamp,a\n2012-03-01 00:00:00,x\n", 2),
        ("timestamp,a\nyesterday,1\n", 2),
    ];
    for (i, (body, want)) in cases.iter().enumerate() {
        let p = write(&dir, &format!("bad{i}.csv"), body);
        match load_readings(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, *want, "case {i}"),
            other => panic!("case {i}: {other:?}"),
        }
    }
}

#[test]
fn readings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let body = "timestamp,a,b\n2012-03-01T00:00:00,1.25,\n2012-03-01T00:05:00,-3,0.1\n";
    let p = write(&dir, "r.csv", body);
    let f = load_readings(&p).unwrap();
    let q = dir.path().join("out.csv");
    write_readings(&q, &f).unwrap();
    assert_eq!(fs::read_to_string(&q).unwrap(), body);
    assert_eq!(load_readings(&q).unwrap(), f);
}

#[test]
fn distances_io() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "d.csv", "from_id,to_id,distance\na,b,10\nb,c,12.5\n");
    let d = load_distances(&p).unwrap();
    assert_eq!(d[1], DistanceRecord::new("b", "c", 12.5));
    let q = dir.path().join("d2.csv");
    write_distances(&q, &d).unwrap();
    assert_eq!(load_distances(&q).unwrap(), d);

    let bad = write(&dir, "bad.csv", "from_id,to_id,distance\na,b,10\na,c,-1\n");
    assert!(matches!(load_distances(&bad), Err(Error::Format { line: 3, .. })));
    let bad = write(&dir, "bad2.csv", "from_id,to_id,distance\na,b\n");
    assert!(matches!(load_distances(&bad), Err(Error::Format { line: 2, .. })));
}

#[test]
fn window_counts() {
    let f = frame(&vec![1.0; 24], 1);
    assert_eq!(window_all(&f, 12, 12, FeatureSet::Value).unwrap().len(), 1);
    let f = frame(&(0..34_272).map(|v| v as f64).collect::<Vec<_>>(), 1);
    assert_eq!(window_all(&f, 12, 12, FeatureSet::Value).unwrap().len(), 34_249);
    assert!(matches!(
        window_all(&frame(&[1.0; 23], 1), 12, 12, FeatureSet::Value),
        Err(Error::Size(_))
    ));
}

#[test]
fn split_validation() {
    let f = frame(&(0..400).map(|v| v as f64).collect::<Vec<_>>(), 1);
    let bad = SplitRatios {
        train: 0.7,
        val: 0.2,
        test: 0.2,
    };
    assert!(matches!(split_and_window(&f, bad, 12, 12, FeatureSet::Value), Err(Error::Config(_))));
    let short = frame(&(0..100).map(|v| v as f64).collect::<Vec<_>>(), 1);
    assert!(matches!(
        split_and_window(&short, SplitRatios::default(), 12, 12, FeatureSet::Value),
        Err(Error::Size(_))
    ));
}

#[test]
fn splits_are_chronological_and_do_not_leak() {
    let f = frame(&(0..1000).map(|v| v as f64 + 1.0).collect::<Vec<_>>(), 2);
    let s = split_and_window(&f, SplitRatios::default(), 12, 12, FeatureSet::Value).unwrap();
    assert_eq!(s.train.segment_len() + s.val.segment_len() + s.test.segment_len(), 500);
    assert_eq!((s.train.segment_len(), s.val.segment_len()), (350, 50));
    assert_eq!(s.train.len(), 350 - 23);
    let last_train = s.train.window_bounds(s.train.len() - 1).1;
    let first_val = s.val.window_bounds(0).0;
    assert!(last_train <= first_val);
    let last_val = s.val.window_bounds(s.val.len() - 1).1;
    assert!(last_val <= s.test.window_bounds(0).0);
}

#[test]
fn batches_and_standardization() {
    let values: Vec<f64> = (0..200).map(|v| 10.0 + v as f64).collect();
    let f = frame(&values, 2);
    let s = split_and_window(&f, SplitRatios::default(), 3, 2, FeatureSet::Value).unwrap();
    let norm = Standardizer::fit(&s.train).unwrap();
    let b = s.train.batch(&[0, 5], &norm).unwrap();
    assert_eq!(b.x.shape(), [2, 3, 2, 1]);
    assert_eq!(b.y.shape(), [2, 2, 2, 1]);
    // Window 5 starts at frame step 5; targets are steps 8 and 9.
    assert_eq!(b.y.at(&[1, 0, 1, 0]), f.values.at(&[8, 1]));
    assert_eq!(b.last_value.at(&[1, 0]), f.values.at(&[7, 0]));
    let x0 = norm.destandardize(0, b.x.at(&[1, 2, 0, 0]));
    assert!((x0 - f.values.at(&[7, 0])).abs() < 1e-12);
    assert!(b.mask.data().iter().all(|&m| m == 1.0));
    assert!(s.train.batch(&[s.train.len()], &norm).is_err());

    // Standardized training data is centred.
    let train_vals = &values[..s.train.segment_len() * 2];
    let mean_z: f64 = train_vals.iter().map(|&v| norm.standardize(0, v)).sum::<f64>() / train_vals.len() as f64;
    assert!(mean_z.abs() < 1e-12);
    for v in [-3.0, 0.0, 17.25, 1e4] {
        assert!((norm.destandardize(0, norm.standardize(0, v)) - v).abs() < 1e-12);
    }

    // Changing the test segment leaves the statistics untouched.
    let mut changed = values.clone();
    changed[180..].iter_mut().for_each(|v| *v *= 5.0);
    let s2 = split_and_window(&frame(&changed, 2), SplitRatios::default(), 3, 2, FeatureSet::Value).unwrap();
    assert_eq!(Standardizer::fit(&s2.train).unwrap(), norm);

    let mut kv = crate::config::KeyValues::new();
    norm.write_kv(&mut kv);
    assert_eq!(Standardizer::read_kv(&kv).unwrap(), norm);
}

#[test]
fn constant_feature_is_degenerate() {
    let f = frame(&[3.0; 100], 1);
    let s = split_and_window(&f, SplitRatios::default(), 2, 2, FeatureSet::Value).unwrap();
    assert!(matches!(Standardizer::fit(&s.train), Err(Error::DegenerateFeature(_))));
}

#[test]
fn time_of_day_channel() {
    let f = frame(&(0..300).map(|v| v as f64).collect::<Vec<_>>(), 1);
    let s = split_and_window(&f, SplitRatios::default(), 4, 2, FeatureSet::ValueAndTimeOfDay).unwrap();
    assert_eq!(s.train.in_dim(), 2);
    let norm = Standardizer::fit(&s.train).unwrap();
    let b = s.train.batch(&[12], &norm).unwrap();
    // Step 12 is one hour in.
    let tod = norm.destandardize(1, b.x.at(&[0, 0, 0, 1]));
    assert!((tod - 1.0 / 24.0).abs() < 1e-12);
}

fn synth(regions: usize, patterns: usize, noise: f64, seed: u64) -> SynthDataset {
    synth_hierarchical(&SynthConfig {
        regions,
        nodes_per_region: 4,
        patterns,
        steps: 300,
        seed,
        noise,
    })
    .unwrap()
}

#[test]
fn synth_topology_is_recovered() {
    let two = synth(2, 1, 0.1, 3);
    let d = tarjan_bcc(&two.graph);
    assert_eq!(d.len(), 2);
    assert_eq!(d.cut_vertices.len(), 1);
    for regions in 2..7 {
        for seed in 0..5 {
            let ds = synth(regions, 2, 0.1, seed);
            assert_eq!(tarjan_bcc(&ds.graph).len(), regions, "R={regions} seed={seed}");
            let rebuilt = build_adjacency(&ds.distances, DEFAULT_KERNEL_THRESHOLD, None).unwrap();
            assert_eq!(rebuilt.edges(), ds.graph.edges());
        }
    }
}

#[test]
fn noise_free_single_pattern_is_uniform() {
    let ds = synth(3, 1, 0.0, 1);
    let n = ds.readings.sensor_count();
    for row in ds.readings.values.data().chunks(n) {
        assert!(row.iter().all(|&v| (v - row[0]).abs() < 1e-12));
    }
}

#[test]
fn synth_is_deterministic_and_writes_its_files() {
    let a = synth(3, 2, 0.5, 9);
    let b = synth(3, 2, 0.5, 9);
    let bits = |d: &SynthDataset| d.readings.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.distances, b.distances);
    assert_ne!(bits(&a), bits(&synth(3, 2, 0.5, 10)));

    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &a).unwrap();
    let r = load_readings(&dir.path().join("readings.csv")).unwrap();
    assert_eq!(r.sensor_ids, a.readings.sensor_ids);
    assert!(r.values.max_abs_diff(&a.readings.values) == 0.0);
    assert_eq!(load_distances(&dir.path().join("distances.csv")).unwrap(), a.distances);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("planted.json")).unwrap()).unwrap();
    for key in ["region_labels", "pattern_labels", "cut_vertices", "sensor_ids", "seed"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    let truth: PlantedTruth = serde_json::from_value(json).unwrap();
    assert_eq!(truth, a.truth);
}

#[test]
fn synth_rejects_tiny_configs() {
    let bad = SynthConfig {
        regions: 1,
        ..SynthConfig::default()
    };
    assert!(matches!(synth_hierarchical(&bad), Err(Error::Config(_))));
}
