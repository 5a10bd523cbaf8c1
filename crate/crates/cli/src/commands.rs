use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hiest::config::KeyValues;
use hiest::data::{
    load_distances, load_readings, split_and_window, synth_hierarchical, write_dataset, Splits, Standardizer,
    SynthConfig,
};
use hiest::gradcheck::{primitive_suite, toy_objective_check};
use hiest::graph::{build_adjacency, build_mor, tarjan_bcc, SensorGraph};
use hiest::losses::LossLog;
use hiest::model::{load_checkpoint, save_checkpoint, HiestParams, HierarchyGraphs};
use hiest::training::{
    evaluate, persistence_report, restore_state, state_checkpoint, train as run_training, EpochLog, MetricReport,
    Problem, TrainLogs, TrainState,
};
use hiest::Error;

use crate::run_config::RunConfig;
use crate::{EvalArgs, Failure, GridArgs, Settings, Sources, SynthArgs, TrainArgs};

type CmdResult = std::result::Result<(), Failure>;

pub fn hierarchy(distances: &Path, threshold: f64, out: Option<&Path>) -> CmdResult {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Failure::Usage(format!("--threshold {threshold} must be in (0, 1]")));
    }
    let records = load_distances(distances)?;
    let graph = build_adjacency(&records, threshold, None)?;
    let decomp = tarjan_bcc(&graph);
    let mapping = build_mor(&decomp, graph.node_count())?;
    let ids = graph.node_ids();
    let summary = format!(
        "N_o={} N_r={} cut={}",
        graph.node_count(),
        mapping.region_count(),
        decomp.cut_vertices.len()
    );
    println!("{summary}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(Error::from)?;
        let mut text = format!("{} {}\n", graph.node_count(), mapping.region_count());
        for (i, id) in ids.iter().enumerate() {
            for (r, w) in mapping.regions_of(i) {
                writeln!(text, "{id} {r} {w}").unwrap();
            }
        }
        fs::write(dir.join("mapping.txt"), text).map_err(Error::from)?;
        let mut kv = KeyValues::new();
        kv.set("n_o", graph.node_count());
        kv.set("n_r", mapping.region_count());
        kv.set("cut", decomp.cut_vertices.len());
        kv.set("edges", graph.edges().len());
        kv.set("threshold", threshold);
        let cuts: Vec<&str> = decomp.cut_vertices.iter().map(|&v| ids[v].as_str()).collect();
        kv.set("cut_vertices", cuts.join(","));
        fs::write(dir.join("summary.txt"), kv.render()).map_err(Error::from)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        regions: a.regions,
        nodes_per_region: a.nodes_per_region,
        patterns: a.patterns,
        steps: a.steps,
        seed: a.seed,
        noise: a.noise,
    };
    let ds = synth_hierarchical(&cfg)?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} sensors x {} steps ({} regions, {} cut vertices) to {}",
        ds.readings.sensor_count(),
        ds.readings.len(),
        cfg.regions,
        ds.truth.cut_vertices.len(),
        a.out.display()
    );
    Ok(())
}

/// Lays the config file, data directory and flags over `kv`.
fn apply_sources(kv: &mut KeyValues, sources: &Sources, settings: &Settings) -> CmdResult {
    if let Some(path) = &sources.config {
        let text = fs::read_to_string(path).map_err(Error::from)?;
        let file = KeyValues::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        kv.merge(&file);
    }
    if let Some(dir) = &sources.data {
        kv.set("readings", dir.join("readings.csv").display());
        kv.set("distances", dir.join("distances.csv").display());
    }
    kv.merge(&settings.overrides());
    Ok(())
}

fn echo(cfg: &RunConfig, out: &Path) -> CmdResult {
    let text = cfg.to_kv().render();
    for line in text.lines() {
        println!("config {line}");
    }
    fs::create_dir_all(out).map_err(Error::from)?;
    fs::write(out.join("run_config.txt"), text).map_err(Error::from)?;
    Ok(())
}

struct Data {
    graph: SensorGraph,
    splits: Splits,
}

fn load_data(cfg: &RunConfig) -> Result<Data, Failure> {
    let mut frame = load_readings(cfg.readings_path()?)?;
    if cfg.zero_is_missing {
        frame = frame.with_zeros_missing();
    }
    let records = load_distances(cfg.distances_path()?)?;
    let graph = build_adjacency(&records, cfg.threshold, Some(&frame.sensor_ids))?;
    let splits = split_and_window(&frame, cfg.splits, cfg.model.history, cfg.model.horizon, cfg.features())?;
    Ok(Data { graph, splits })
}

fn write_report(path: &Path, report: &MetricReport) -> CmdResult {
    fs::write(path, report.to_csv()).map_err(Error::from)?;
    Ok(())
}

fn checkpoint_for(cfg: &RunConfig, norm: &Standardizer, state: &TrainState) -> hiest::model::Checkpoint {
    let mut ck = state_checkpoint(&cfg.model, &cfg.train, norm, state);
    ck.header.merge(&cfg.to_kv());
    ck
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let mut kv = RunConfig::default().to_kv();
    let resumed = match &a.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    if let Some(ck) = &resumed {
        kv.merge(&RunConfig::filter_known(&ck.header));
    }
    apply_sources(&mut kv, &a.sources, &a.settings)?;
    let cfg = RunConfig::from_kv(&kv)?;
    echo(&cfg, &a.out)?;

    let data = load_data(&cfg)?;
    let hier = HierarchyGraphs::from_graph(&data.graph, &cfg.model)?;
    let (norm, state) = match &resumed {
        Some(ck) => {
            let (model, _, norm, mut state) = restore_state(ck)?;
            if model != cfg.model {
                return Err(Error::Config("model settings differ from the resumed checkpoint".into()).into());
            }
            state.optimizer.weight_decay = cfg.train.weight_decay;
            state.optimizer.clip_norm = cfg.train.clip_norm;
            (norm, state)
        }
        None => {
            let norm = Standardizer::fit(&data.splits.train)?;
            let params = HiestParams::init(&cfg.model, hier.region_count(), cfg.train.seed)?;
            (norm, TrainState::new(params, &cfg.train))
        }
    };
    println!(
        "data sensors={} regions={} train={} val={} test={} params={}",
        hier.node_count(),
        hier.region_count(),
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len(),
        state.params.scalar_count()
    );

    let ck_path = a.out.join("checkpoint.bin");
    let mut logs = TrainLogs {
        steps: Some(LossLog::create(&a.out.join("train_log.csv"))?),
        epochs: Some(EpochLog::create(&a.out.join("epoch_log.csv"))?),
        on_epoch: None,
    };
    let (cfg_c, norm_c, path_c) = (cfg.clone(), norm.clone(), ck_path.clone());
    let start = Instant::now();
    logs.on_epoch = Some(Box::new(move |r, s| {
        let mape = r.val.mape.map_or_else(|| "N/A".into(), |m| format!("{m:.2}%"));
        println!(
            "epoch {:>3} train_loss {:.4} train_mae {:.4} val_mae {:.4} val_mape {mape} val_rmse {:.4} ({:.1}s)",
            r.epoch,
            r.train_loss,
            r.train_mae,
            r.val.mae,
            r.val.rmse,
            start.elapsed().as_secs_f64()
        );
        save_checkpoint(&path_c, &checkpoint_for(&cfg_c, &norm_c, s))
    }));

    let problem = Problem {
        model: &cfg.model,
        hier: &hier,
        splits: &data.splits,
        norm: &norm,
    };
    let outcome = run_training(&problem, &cfg.train, state, &mut logs)?;
    drop(logs);
    save_checkpoint(&ck_path, &checkpoint_for(&cfg, &norm, &outcome.state))?;
    if outcome.stopped_early {
        println!("stopped early after epoch {}", outcome.state.epoch);
    }

    let test = evaluate(&outcome.state.best_params, &problem, &data.splits.test, cfg.train.batch_size)?;
    let base = persistence_report(&data.splits.test, &norm, cfg.model.horizon)?;
    println!("test metrics (best epoch {})\n{test}", outcome.state.best_epoch);
    println!("persistence baseline overall mae {:.4}", base.overall.mae);
    write_report(&a.out.join("test_metrics.csv"), &test)?;
    write_report(&a.out.join("baseline_metrics.csv"), &base)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (model, _, norm, state) = restore_state(&ck)?;
    let mut kv = RunConfig::default().to_kv();
    kv.merge(&RunConfig::filter_known(&ck.header));
    if let Some(dir) = &a.data {
        kv.set("readings", dir.join("readings.csv").display());
        kv.set("distances", dir.join("distances.csv").display());
    }
    if let Some(p) = &a.readings {
        kv.set("readings", p.display());
    }
    if let Some(p) = &a.distances {
        kv.set("distances", p.display());
    }
    let mut cfg = RunConfig::from_kv(&kv)?;
    cfg.model = model;

    let data = load_data(&cfg)?;
    let set = match a.split.as_str() {
        "train" => &data.splits.train,
        "val" => &data.splits.val,
        "test" => &data.splits.test,
        other => return Err(Failure::Usage(format!("--split must be train, val or test, got `{other}`"))),
    };
    let hier = HierarchyGraphs::from_graph(&data.graph, &cfg.model)?;
    let params = if a.last { &state.params } else { &state.best_params };
    let problem = Problem {
        model: &cfg.model,
        hier: &hier,
        splits: &data.splits,
        norm: &norm,
    };
    let report = evaluate(params, &problem, set, cfg.train.batch_size)?;
    let which = if a.last { "last" } else { "best" };
    println!("{} split, {which} parameters, {} windows\n{report}", a.split, set.len());
    let csv = a.csv.clone().unwrap_or_else(|| {
        let dir = a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
        dir.join(format!("eval_{}.csv", a.split))
    });
    write_report(&csv, &report)?;
    if a.baseline {
        let base = persistence_report(set, &norm, cfg.model.horizon)?;
        println!("persistence baseline\n{base}");
        write_report(&csv.with_extension("baseline.csv"), &base)?;
    }
    println!("wrote {}", csv.display());
    Ok(())
}

pub fn gradcheck(tol: f64, step: f64, seed: u64) -> CmdResult {
    if !(tol > 0.0 && step > 0.0) {
        return Err(Failure::Usage("--tol and --step must be positive".into()));
    }
    let mut failed = Vec::new();
    for (name, report) in primitive_suite(step, tol)? {
        let verdict = if report.passed() { "ok" } else { "FAIL" };
        println!("{name:<16} max_rel_err {:.3e} {verdict}", report.max_rel_error());
        if !report.passed() {
            failed.push(name.to_string());
        }
    }
    let toy = toy_objective_check(seed, step, tol)?;
    for p in &toy.params {
        let verdict = if p.max_rel_error <= tol { "ok" } else { "FAIL" };
        println!("objective/{:<24} max_rel_err {:.3e} {verdict}", p.name, p.max_rel_error);
    }
    if !toy.passed() {
        failed.push("objective".into());
    }
    if failed.is_empty() {
        println!("all gradient checks passed at tol {tol:e}");
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient checks failed: {}", failed.join(","))))
    }
}

pub fn grid(a: &GridArgs) -> CmdResult {
    let mut kv = RunConfig::default().to_kv();
    apply_sources(&mut kv, &a.sources, &a.settings)?;
    let base = RunConfig::from_kv(&kv)?;
    echo(&base, &a.out)?;
    let data = load_data(&base)?;
    let norm = Standardizer::fit(&data.splits.train)?;
    let path: PathBuf = a.out.join("grid.csv");
    let mut out = fs::File::create(&path).map_err(Error::from)?;
    writeln!(out, "eta4,n_global,epochs,best_epoch,val_mae,test_mae,test_mape,test_rmse").map_err(Error::from)?;
    for &eta4 in &a.eta4_values {
        for &n_global in &a.n_global_values {
            let mut cfg = base.clone();
            cfg.model.eta[3] = eta4;
            cfg.model.n_global = n_global;
            cfg.validate()?;
            let hier = HierarchyGraphs::from_graph(&data.graph, &cfg.model)?;
            let params = HiestParams::init(&cfg.model, hier.region_count(), cfg.train.seed)?;
            let problem = Problem {
                model: &cfg.model,
                hier: &hier,
                splits: &data.splits,
                norm: &norm,
            };
            let state = TrainState::new(params, &cfg.train);
            let done = run_training(&problem, &cfg.train, state, &mut TrainLogs::default())?;
            let test = evaluate(&done.state.best_params, &problem, &data.splits.test, cfg.train.batch_size)?;
            let mape = test.overall.mape.map_or_else(|| "NA".into(), |m| m.to_string());
            writeln!(
                out,
                "{eta4},{n_global},{},{},{},{},{mape},{}",
                done.state.epoch, done.state.best_epoch, done.state.best_val_mae, test.overall.mae, test.overall.rmse
            )
            .map_err(Error::from)?;
            out.flush().map_err(Error::from)?;
            println!(
                "eta4 {eta4} n_global {n_global}: val_mae {:.4} test_mae {:.4}",
                done.state.best_val_mae, test.overall.mae
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}
