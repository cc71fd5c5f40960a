use ocrf_core::hoa::{self, HoaConfig, QuerySource};
use ocrf_core::params::{Binder, ParamStore, Tensor};
use ocrf_core::render::loss::ssim_value;
use ocrf_core::render::{fusion_weights, masked_l1_depth, masked_mse, masked_ssim_loss};
use ocrf_diff::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 16;
const W: usize = 14;

fn random_mask(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..H * W).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// `base` with every unmasked entry replaced by noise.
fn scramble_outside(rng: &mut ChaCha8Rng, base: &[f64], mask: &[f64], channels: usize) -> Vec<f64> {
    base.iter()
        .enumerate()
        .map(|(i, v)| if mask[i / channels] > 0.0 { *v } else { rng.gen_range(-5.0..5.0) })
        .collect()
}

/// (mse, 1 − ssim, l1) of one prediction.
fn losses(pred: &[f64], depth: &[f64], gt: &[f64], gt_depth: &[f64], mask: &[f64]) -> [f64; 3] {
    let mut g = Graph::new();
    let p = g.constant(&[H, W, 3], pred.to_vec()).unwrap();
    let d = g.constant(&[H, W], depth.to_vec()).unwrap();
    let mse = masked_mse(&mut g, &[p], gt, mask).unwrap();
    let ss = masked_ssim_loss(&mut g, &[p], gt, mask).unwrap();
    let l1 = masked_l1_depth(&mut g, &[d], gt_depth, mask, 7.5).unwrap();
    [g.value(mse)[0], g.value(ss)[0], g.value(l1)[0]]
}

#[test]
fn masked_losses_vanish_when_masked_pixels_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mask = random_mask(&mut rng);
        let gt = uniform(&mut rng, H * W * 3);
        let gt_depth: Vec<f64> = (0..H * W).map(|_| rng.gen_range(1.0..20.0)).collect();
        let pred = scramble_outside(&mut rng, &gt, &mask, 3);
        let depth = scramble_outside(&mut rng, &gt_depth, &mask, 1);
        for v in losses(&pred, &depth, &gt, &gt_depth, &mask) {
            assert!(v.abs() <= 1e-12, "loss {v}");
        }
    }
}

#[test]
fn masked_losses_ignore_unmasked_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mask = random_mask(&mut rng);
        let gt = uniform(&mut rng, H * W * 3);
        let gt_depth: Vec<f64> = (0..H * W).map(|_| rng.gen_range(1.0..20.0)).collect();
        let pred = uniform(&mut rng, H * W * 3);
        let depth: Vec<f64> = (0..H * W).map(|_| rng.gen_range(1.0..20.0)).collect();
        let base = losses(&pred, &depth, &gt, &gt_depth, &mask);
        assert!(base.iter().all(|v| *v > 1e-6));
        let pred2 = scramble_outside(&mut rng, &pred, &mask, 3);
        let depth2 = scramble_outside(&mut rng, &depth, &mask, 1);
        let moved = losses(&pred2, &depth2, &gt, &gt_depth, &mask);
        for (a, b) in base.iter().zip(moved) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn dice_is_zero_for_perfect_binary_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for density in [0.0, 0.1, 0.5, 1.0] {
        let gt: Vec<f64> = (0..64).map(|_| f64::from(u8::from(rng.gen_bool(density)))).collect();
        let mut g = Graph::new();
        let p = g.constant(&[8, 8], gt.clone()).unwrap();
        let l = hoa::mask_loss(&mut g, p, &gt, 1.0, 1.0).unwrap();
        assert_eq!(g.value(l.dice)[0], 0.0);
        // The clamped log keeps BCE at its floor rather than exactly zero.
        assert!(g.value(l.bce)[0] < 1e-6);
    }
}

#[test]
fn fusion_weights_sum_to_one() {
    let mut g = Graph::new();
    for i in -400..=400 {
        let theta = g.scalar(f64::from(i) * 0.05);
        let (a, b) = fusion_weights(&mut g, theta).unwrap();
        let (a, b) = (g.value(a)[0], g.value(b)[0]);
        assert!(a > 0.0 && a < 1.0);
        assert!((a + b - 1.0).abs() <= f64::EPSILON, "θ = {}", f64::from(i) * 0.05);
    }
}

#[test]
fn iou_conventions() {
    assert_eq!(hoa::mask_iou(&[0.1, 0.2, 0.0], &[0.0, 0.0, 0.0]), 1.0);
    assert_eq!(hoa::mask_iou(&[0.9, 0.2, 0.7], &[1.0, 0.0, 1.0]), 1.0);
    assert_eq!(hoa::mask_iou(&[0.9, 0.9, 0.0], &[1.0, 0.0, 1.0]), 1.0 / 3.0);
    assert_eq!(hoa::mask_iou(&[0.5], &[1.0]), 1.0);
}

#[test]
fn foreground_ssim_of_ground_truth_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mask = random_mask(&mut rng);
    let gt = uniform(&mut rng, H * W * 3);
    let masked: Vec<f64> = gt.iter().enumerate().map(|(i, v)| v * mask[i / 3]).collect();
    assert_eq!(ssim_value(&masked, &masked, H, W).unwrap(), 1.0);
}

fn hoa_store(cfg: &HoaConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    hoa::init_hoa(&mut store, cfg, &mut rng);
    hoa::init_bev_head(&mut store, cfg, &mut rng);
    // Move the height-slice weights off their identity initialization.
    for (name, t) in store.iter_mut() {
        if name.starts_with("hoa.hsa") || name == "hoa.bo" {
            for v in &mut t.data {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    store
}

fn small_hoa(k: usize, multiscale: bool) -> HoaConfig {
    HoaConfig {
        dims: [4, 4, 4],
        k,
        c_v: 3,
        channels: 4,
        multiscale,
        ..HoaConfig::default()
    }
}

#[test]
fn query_follows_the_larger_weight() {
    let cfg = small_hoa(2, true);
    let store = hoa_store(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gs = uniform(&mut rng, 64);
    let nerf = uniform(&mut rng, 64);
    let run = |a: &[f64], b: &[f64], alpha: f64| {
        let mut g = Graph::new();
        let mut binder = Binder::frozen(&store);
        let va = g.constant(&[4, 4, 4], a.to_vec()).unwrap();
        let vb = g.constant(&[4, 4, 4], b.to_vec()).unwrap();
        let out = hoa::opacity_fusion(&mut g, &mut binder, va, vb, alpha, cfg.dims).unwrap();
        (out.query, g.value(out.volume).to_vec())
    };
    let (q_low, v_low) = run(&gs, &nerf, 0.3);
    let (q_high, v_high) = run(&gs, &nerf, 0.7);
    assert_eq!(q_low, QuerySource::Nerf);
    assert_eq!(q_high, QuerySource::Gaussian);
    assert_ne!(v_low, v_high);
    // Swapping the inputs together with the weights gives the same attention.
    let (_, v_swapped) = run(&nerf, &gs, 0.7);
    assert_eq!(v_low, v_swapped);
    // The tie goes to the NeRF query.
    assert_eq!(run(&gs, &nerf, 0.5).0, QuerySource::Nerf);
}

#[test]
fn single_slice_group_uses_one_shared_weight() {
    let cfg = small_hoa(1, false);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    hoa::init_hoa(&mut store, &cfg, &mut rng);
    assert_eq!(store.get("hoa.hsa0.w").unwrap().data.len(), 1);
    assert_eq!(store.get("hoa.hsa0.b").unwrap().data.len(), 1);
    let (w, b) = (1.7, -0.4);
    store.insert("hoa.hsa0.w", Tensor::filled(&[1], w));
    store.insert("hoa.hsa0.b", Tensor::filled(&[1], b));
    let vol = uniform(&mut rng, 64);
    let mut g = Graph::new();
    let mut binder = Binder::frozen(&store);
    let v = g.constant(&[4, 4, 4], vol.clone()).unwrap();
    let maps = hoa::multiscale_hsa(&mut g, &mut binder, v, &cfg).unwrap();
    assert_eq!(g.shape(maps), [1, 4, 4]);
    for col in 0..16 {
        let peak = vol[col * 4..col * 4 + 4].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expect = 1.0 / (1.0 + (-(w * peak + b)).exp());
        assert!((g.value(maps)[col] - expect).abs() < 1e-15);
    }
}

#[test]
fn height_groups_only_drive_their_own_map() {
    let cfg = HoaConfig {
        dims: [4, 4, 8],
        ..small_hoa(2, false)
    };
    let store = hoa_store(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vol = uniform(&mut rng, 128);
    let eval = |v: &[f64]| {
        let mut g = Graph::new();
        let mut binder = Binder::frozen(&store);
        let x = g.constant(&[4, 4, 8], v.to_vec()).unwrap();
        let m = hoa::multiscale_hsa(&mut g, &mut binder, x, &cfg).unwrap();
        g.value(m).to_vec()
    };
    let base = eval(&vol);
    // Raise the top slice of column 5; only map 1 (slices 4..8) at that column changes.
    let mut bumped = vol.clone();
    bumped[5 * 8 + 7] = 2.0;
    let after = eval(&bumped);
    for (i, (a, b)) in base.iter().zip(&after).enumerate() {
        if i == 16 + 5 {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b, "map entry {i}");
        }
    }
}

#[test]
fn attention_scales_only_its_channel_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let bev = uniform(&mut rng, 4 * 3 * 3);
    let mut maps = vec![1.0; 2 * 9];
    maps[9 + 4] = 0.25;
    let mut g = Graph::new();
    let b = g.constant(&[4, 3, 3], bev.clone()).unwrap();
    let m = g.constant(&[2, 3, 3], maps).unwrap();
    let out = hoa::apply_attention(&mut g, b, m).unwrap();
    for (i, (o, x)) in g.value(out).iter().zip(&bev).enumerate() {
        let scaled = i == 2 * 9 + 4 || i == 3 * 9 + 4;
        assert_eq!(*o, if scaled { x * 0.25 } else { *x }, "entry {i}");
    }
}
