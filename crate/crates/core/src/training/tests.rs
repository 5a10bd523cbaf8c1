use super::*;
use crate::data::{split_and_window, synth_hierarchical, FeatureSet, SplitRatios, SynthConfig};

struct Fixture {
    model: HiestConfig,
    hier: HierarchyGraphs,
    splits: Splits,
    norm: Standardizer,
}

impl Fixture {
    fn new(eta: f64) -> Self {
        let ds = synth_hierarchical(&SynthConfig {
            regions: 2,
            nodes_per_region: 3,
            patterns: 2,
            steps: 160,
            seed: 4,
            noise: 0.2,
        })
        .unwrap();
        let model = HiestConfig {
            blocks: 1,
            hidden: 4,
            n_global: 2,
            horizon: 3,
            history: 4,
            skip_dim: 6,
            eta: [eta; 4],
            ..HiestConfig::default()
        };
        let hier = HierarchyGraphs::from_graph(&ds.graph, &model).unwrap();
        let splits = split_and_window(&ds.readings, SplitRatios::default(), 4, 3, FeatureSet::Value).unwrap();
        let norm = Standardizer::fit(&splits.train).unwrap();
        Self {
            model,
            hier,
            splits,
            norm,
        }
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            model: &self.model,
            hier: &self.hier,
            splits: &self.splits,
            norm: &self.norm,
        }
    }

    fn state(&self, cfg: &TrainConfig) -> TrainState {
        let p = HiestParams::init(&self.model, self.hier.region_count(), cfg.seed).unwrap();
        TrainState::new(p, cfg)
    }

    fn run(&self, cfg: &TrainConfig) -> TrainOutcome {
        train(&self.problem(), cfg, self.state(cfg), &mut TrainLogs::default()).unwrap()
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: epochs,
        lr: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_freezes_validation_mae() {
    let f = Fixture::new(1.0);
    let out = f.run(&TrainConfig { lr: 0.0, ..quick(3) });
    let maes: Vec<f64> = out.epochs.iter().map(|e| e.val.mae).collect();
    assert_eq!(maes.len(), 3);
    assert!(maes.iter().all(|&m| m == maes[0]));
    assert_eq!(out.state.params, f.state(&quick(3)).params);
}

#[test]
fn runs_are_deterministic() {
    let f = Fixture::new(1.0);
    let a = f.run(&quick(2));
    let b = f.run(&quick(2));
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.epochs, b.epochs);
    let c = f.run(&TrainConfig { seed: 1, ..quick(2) });
    assert_ne!(a.steps[0].total, c.steps[0].total);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let f = Fixture::new(1.0);
    let out = f.run(&TrainConfig {
        patience: 2,
        lr: 0.05,
        ..quick(12)
    });
    let best = out.epochs.iter().map(|e| e.val.mae).fold(f64::INFINITY, f64::min);
    assert_eq!(out.state.best_val_mae, best);
    let rec = &out.epochs[out.state.best_epoch - 1];
    assert_eq!(rec.val.mae, best);
    let re = evaluate(&out.state.best_params, &f.problem(), &f.splits.val, 16).unwrap();
    assert_eq!(re.overall.mae, best);
    if out.stopped_early {
        assert_eq!(out.state.epochs_since_best, 2);
    }
}

#[test]
fn loss_breakdown_is_consistent() {
    let f = Fixture::new(1.0);
    let out = f.run(&quick(1));
    for b in &out.steps {
        assert_eq!(b.total, ((b.l_pre + b.l_rec_ro) + b.l_rec_gr) + b.l_ort);
        assert!(b.l_pre >= 0.0 && b.l_rec_ro >= 0.0 && b.l_rec_gr >= 0.0 && b.l_ort >= 0.0);
    }
}

#[test]
fn mapping_logits_move_only_through_hierarchy_terms_when_eta_is_zero() {
    let f = Fixture::new(0.0);
    let one_step = |w: [f64; 4]| {
        let cfg = TrainConfig {
            loss_weights: w,
            batch_size: 1000,
            // Decoupled decay would move the logits on its own.
            weight_decay: 0.0,
            ..quick(1)
        };
        f.run(&cfg).state.params.mrg_logits
    };
    let start = f.state(&quick(1)).params.mrg_logits;
    assert_eq!(one_step([1.0, 1.0, 0.0, 0.0]), start);
    assert_ne!(one_step([1.0, 1.0, 1.0, 0.0]), start);
    assert_ne!(one_step([1.0, 1.0, 0.0, 1.0]), start);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let f = Fixture::new(1.0);
    let cfg = quick(2);
    let full = f.run(&cfg);

    let first = f.run(&quick(1));
    let ck = state_checkpoint(&f.model, &cfg, &f.norm, &first.state);
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let ck = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
    let (model, tc, norm, state) = restore_state(&ck).unwrap();
    assert_eq!(model, f.model);
    assert_eq!(norm, f.norm);
    assert_eq!(tc, cfg);
    assert_eq!(state, first.state);
    let resumed = train(&f.problem(), &cfg, state, &mut TrainLogs::default()).unwrap();
    assert_eq!(resumed.state.params, full.state.params);
    assert_eq!(resumed.epochs[0], full.epochs[1]);
}

#[test]
fn persistence_baseline_and_metric_invariants() {
    let f = Fixture::new(1.0);
    let base = persistence_report(&f.splits.test, &f.norm, 3).unwrap();
    assert!(base.overall.mae > 0.0);
    let out = f.run(&quick(2));
    let rep = evaluate(&out.state.best_params, &f.problem(), &f.splits.test, 7).unwrap();
    let again = evaluate(&out.state.best_params, &f.problem(), &f.splits.test, 64).unwrap();
    assert!((rep.overall.mae - again.overall.mae).abs() < 1e-12);
    for (_, m) in rep.horizons.iter().chain(base.horizons.iter()) {
        assert!(m.rmse >= m.mae && m.mae >= 0.0);
    }
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = TrainConfig {
        lr: 0.003,
        ag_refresh: AgRefresh::Epoch,
        loss_weights: [1.0, 0.5, 0.5, 2.0],
        ..TrainConfig::default()
    };
    let mut kv = KeyValues::new();
    cfg.write_kv(&mut kv);
    let mut back = TrainConfig::default();
    back.read_kv(&kv).unwrap();
    assert_eq!(back, cfg);
    assert!(TrainConfig { batch_size: 0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { lr: -1.0, ..cfg }.validate().is_err());
}

#[test]
fn epoch_refresh_trains() {
    let f = Fixture::new(1.0);
    let out = f.run(&TrainConfig {
        ag_refresh: AgRefresh::Epoch,
        ..quick(2)
    });
    assert!(out.steps.iter().all(|b| b.is_finite()));
}
