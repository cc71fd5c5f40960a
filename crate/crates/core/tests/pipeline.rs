use ocrf_core::checkpoint;
use ocrf_core::config::{Fields, Goal, RunConfig};
use ocrf_core::decoder::is_nerf_param;
use ocrf_core::hoa::{is_hoa_param, QuerySource};
use ocrf_core::params::{Binder, Tensor};
use ocrf_core::train::{self, forward, loss_mask, mask_mode, metrics_csv, MaskMode, SceneCache, TrainState, Trainer, THETA};
use ocrf_core::Error;
use ocrf_diff::Graph;
use std::fs;

/// A scaled-down run that still exercises every path.
fn small() -> RunConfig {
    let text = "\
train_scenes = 2
eval_scenes = 1
views = 3
width = 24
height = 24
focal = 24.0
grid_dims = 16,16,8
voxel_size = 1.0
c_v = 6
hidden = 8
k = 2
channels = 4
steps = 12
warmup = 4
metrics_every = 2
";
    let cfg = RunConfig::parse(text).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn run_csv(cfg: &RunConfig) -> (TrainState, String) {
    let (state, rows) = train::train(cfg).unwrap();
    (state, metrics_csv(&rows))
}

#[test]
fn identical_runs_write_identical_csv() {
    let cfg = small();
    let (a, csv_a) = run_csv(&cfg);
    let (b, csv_b) = run_csv(&cfg);
    assert_eq!(csv_a, csv_b);
    assert_eq!(a, b);
    assert_eq!(csv_a.lines().count(), 1 + 6);
    let mut other = cfg.clone();
    other.seed = 99;
    assert_ne!(run_csv(&other).1, csv_a);
}

#[test]
fn zero_steps_leave_initialization() {
    let mut cfg = small();
    cfg.steps = 0;
    cfg.warmup = 0;
    let (state, rows) = train::train(&cfg).unwrap();
    assert!(rows.is_empty());
    assert_eq!(state, TrainState::init(&cfg));
}

#[test]
fn metric_rows_are_finite_with_unit_fusion_weights() {
    let (_, rows) = train::train(&small()).unwrap();
    for r in &rows {
        assert!(r.is_finite());
        assert!(r.alpha > 0.0 && r.alpha < 1.0);
    }
}

#[test]
fn gaussian_only_runs_never_touch_nerf_parameters() {
    let mut cfg = small();
    cfg.fields = Fields::Gaussian;
    let init = TrainState::init(&cfg);
    let (state, _) = train::train(&cfg).unwrap();
    let mut nerf = 0;
    for (name, t) in state.m.iter() {
        if is_nerf_param(name) || name == THETA {
            nerf += 1;
            assert!(t.data.iter().all(|v| *v == 0.0), "{name} first moment");
            assert!(state.v.get(name).unwrap().data.iter().all(|v| *v == 0.0), "{name} second moment");
            assert_eq!(state.params.get(name).unwrap(), init.params.get(name).unwrap());
        }
    }
    assert!(nerf > 0);
    assert!(state.m.iter().any(|(n, t)| !is_nerf_param(n) && t.data.iter().any(|v| *v != 0.0)));
}

fn grads_for(cfg: &RunConfig, theta: f64) -> (ocrf_core::params::ParamStore, Option<QuerySource>) {
    let mut params = train::init_params(cfg);
    params.insert(THETA, Tensor::filled(&[1], theta));
    let cache = SceneCache::generate(cfg, cfg.scene_seed).unwrap();
    let mut g = Graph::new();
    let mut b = Binder::new(&params);
    let f = forward(&mut g, &mut b, cfg, &cache, 0, MaskMode::ObjectCentric).unwrap();
    g.backward(f.total).unwrap();
    (b.gradients(&g), f.query)
}

#[test]
fn disabling_hoa_cuts_its_gradients() {
    let mut cfg = small();
    let (on, _) = grads_for(&cfg, 0.0);
    assert!(on.iter().any(|(n, t)| is_hoa_param(n) && t.data.iter().any(|v| *v != 0.0)));
    cfg.hoa = false;
    let (off, query) = grads_for(&cfg, 0.0);
    assert_eq!(query, None);
    for (name, t) in off.iter().filter(|(n, _)| is_hoa_param(n)) {
        assert!(t.data.iter().all(|v| *v == 0.0), "{name}");
    }
    // The reducer and mask head still learn.
    assert!(off.get("bev.head.w").unwrap().data.iter().any(|v| *v != 0.0));
}

#[test]
fn theta_sign_selects_the_query_field() {
    let cfg = small();
    assert_eq!(grads_for(&cfg, -1.5).1, Some(QuerySource::Nerf));
    assert_eq!(grads_for(&cfg, 1.5).1, Some(QuerySource::Gaussian));
}

#[test]
fn warmup_boundary_switches_the_mask() {
    let cfg = small();
    let cache = SceneCache::generate(&cfg, cfg.scene_seed).unwrap();
    let w = cfg.warmup;
    let before = loss_mask(&cache, 1, mask_mode(&cfg, w - 1));
    let after = loss_mask(&cache, 1, mask_mode(&cfg, w));
    assert!(before.iter().all(|v| *v == 1.0));
    assert_eq!(after, cache.scene.masks2d[1].to_f64());
    assert!(after.iter().any(|v| *v == 0.0));
    let mut forced = cfg.clone();
    forced.goal = Goal::Object;
    assert_eq!(mask_mode(&forced, 0), MaskMode::ObjectCentric);
    forced.goal = Goal::Scene;
    assert_eq!(mask_mode(&forced, 10 * w), MaskMode::SceneLevel);
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let cfg = small();
    let mut t = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..5 {
        t.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    checkpoint::save(&a, &t.state, &cfg).unwrap();
    let (state, loaded_cfg) = checkpoint::load(&a).unwrap();
    assert_eq!(state, t.state);
    assert_eq!(loaded_cfg, cfg);
    checkpoint::save(&b, &state, &loaded_cfg).unwrap();
    for f in [checkpoint::MANIFEST, checkpoint::BLOB] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = small();
    let state = TrainState::init(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    checkpoint::save(&ck, &state, &cfg).unwrap();
    let blob = fs::read(ck.join(checkpoint::BLOB)).unwrap();

    fs::write(ck.join(checkpoint::BLOB), &blob[..blob.len() - 8]).unwrap();
    assert!(matches!(checkpoint::load(&ck), Err(Error::Checkpoint(_))));

    let mut flipped = blob.clone();
    flipped[17] ^= 1;
    fs::write(ck.join(checkpoint::BLOB), &flipped).unwrap();
    assert!(matches!(checkpoint::load(&ck), Err(Error::Checkpoint(_))));

    fs::write(ck.join(checkpoint::BLOB), &blob).unwrap();
    let mut wider = cfg.clone();
    wider.hidden = 10;
    let err = checkpoint::load_for(&ck, &wider).unwrap_err().to_string();
    assert!(err.contains("hidden"), "{err}");

    // A longer budget resumes fine.
    let mut longer = cfg.clone();
    longer.steps = 40;
    assert_eq!(checkpoint::load_for(&ck, &longer).unwrap(), state);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = small();
    let (full_state, full_rows) = train::train(&cfg).unwrap();

    let mut first = Trainer::new(cfg.clone()).unwrap();
    let mut rows = Vec::new();
    while first.state.step < 7 {
        rows.extend(first.step().unwrap());
    }
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &first.state, &cfg).unwrap();
    drop(first);
    let resumed = checkpoint::load_for(dir.path(), &cfg).unwrap();
    let mut second = Trainer::with_state(cfg.clone(), resumed).unwrap();
    rows.extend(second.run(|_| {}).unwrap());

    assert_eq!(metrics_csv(&rows), metrics_csv(&full_rows));
    assert_eq!(second.state, full_state);
}

#[test]
fn evaluation_of_ground_truth_masks() {
    let mut cfg = small();
    cfg.steps = 0;
    cfg.warmup = 0;
    let params = train::init_params(&cfg);
    let scenes = train::eval_pool(&cfg).unwrap();
    let row = train::evaluate(&cfg, &params, 0, &scenes, &[0, 1, 2]).unwrap();
    assert!(row.is_finite());
    assert!((0.0..=1.0).contains(&row.iou));
    assert!(row.fg_ssim <= 1.0 && row.full_ssim <= 1.0);
}
