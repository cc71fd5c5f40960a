use ocrf_core::geometry::{box_to_mask2d, boxes_to_maskbev, Box3D, Camera, Vec3, VoxelGridSpec};
use ocrf_core::render::{splat_composite, Footprint};
use ocrf_core::scene::{build_raw_grid, generate_scene, raycast_reference, Background, SceneConfig};
use ocrf_diff::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_camera(rng: &mut ChaCha8Rng, size: usize, focal: f64) -> Camera {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let eye = Vec3::new(8.0 * angle.cos(), 8.0 * angle.sin(), rng.gen_range(1.0..5.0));
    let target = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.5));
    Camera::look_at(eye, target, focal, size, size).unwrap()
}

/// Per-pixel colour and depth written as the explicit sum
/// `Σ_i c_i a_i Π_{j<i}(1 − a_j) + bg Π_j(1 − a_j)`.
fn direct_composite(cam: &Camera, pos: &[Vec3], opacity: &[f64], color: &[f64], weights: &[Vec<f64>], bg: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (cam.width, cam.height);
    let r = cam.rotation;
    let t = cam.translation;
    let eye = -(r.transpose() * t);
    let mut rgb = vec![0.0; w * h * 3];
    let mut depth = vec![0.0; w * h];
    for p in 0..w * h {
        let mut hits: Vec<(f64, usize, f64)> = (0..pos.len())
            .filter(|&i| weights[i][p] > 0.0)
            .map(|i| ((pos[i] - eye).norm(), i, weights[i][p] * opacity[i]))
            .collect();
        hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (n, &(d, i, a)) in hits.iter().enumerate() {
            let trans: f64 = hits[..n].iter().map(|h| 1.0 - h.2).product();
            for c in 0..3 {
                rgb[3 * p + c] += color[3 * i + c] * a * trans;
            }
            depth[p] += d * a * trans;
        }
        let all: f64 = hits.iter().map(|h| 1.0 - h.2).product();
        for c in 0..3 {
            rgb[3 * p + c] += bg[c] * all;
        }
    }
    (rgb, depth)
}

fn point_weights(cam: &Camera, pos: &[Vec3]) -> Vec<Vec<f64>> {
    pos.iter()
        .map(|p| {
            let pc = cam.rotation * p + cam.translation;
            let u = cam.fx * pc.x / pc.z + cam.cx;
            let v = cam.fy * pc.y / pc.z + cam.cy;
            let mut wts = vec![0.0; cam.width * cam.height];
            if pc.z > 0.0 && (0.0..cam.width as f64).contains(&u) && (0.0..cam.height as f64).contains(&v) {
                wts[v.floor() as usize * cam.width + u.floor() as usize] = 1.0;
            }
            wts
        })
        .collect()
}

/// Coverage of a disk of radius `fx·mean(s)/dist` (capped at 16) with a one-pixel ramp.
fn disk_weights(cam: &Camera, pos: &[Vec3], scale: &[f64]) -> Vec<Vec<f64>> {
    let eye = cam.center();
    pos.iter()
        .enumerate()
        .map(|(i, p)| {
            let pc = cam.rotation * p + cam.translation;
            let u = cam.fx * pc.x / pc.z + cam.cx;
            let v = cam.fy * pc.y / pc.z + cam.cy;
            let radius = (cam.fx * (scale[3 * i] + scale[3 * i + 1] + scale[3 * i + 2]) / 3.0 / (p - eye).norm()).min(16.0);
            let mut wts = vec![0.0; cam.width * cam.height];
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let d = ((x as f64 + 0.5 - u).powi(2) + (y as f64 + 0.5 - v).powi(2)).sqrt();
                    wts[y * cam.width + x] = (radius + 0.5 - d).clamp(0.0, 1.0);
                }
            }
            wts
        })
        .collect()
}

fn random_gaussians(rng: &mut ChaCha8Rng, cam: &Camera, n: usize) -> (Vec<Vec3>, Vec<f64>, Vec<f64>) {
    // Half of the centers crowd one quadrant so pixels collect several contributors.
    let pos = (0..n)
        .map(|i| {
            let span = if i % 2 == 0 { 2.0 } else { cam.width as f64 };
            cam.unproject(rng.gen_range(0.0..span), rng.gen_range(0.0..span), rng.gen_range(2.0..6.0))
        })
        .collect();
    let opacity = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
    let color = (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    (pos, opacity, color)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn point_splatting_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let cam = random_camera(&mut rng, 4, 4.0);
        let n = 1 + trial % 5;
        let (pos, opacity, color) = random_gaussians(&mut rng, &cam, n);
        let bg = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let mut g = Graph::new();
        let o = g.constant(&[n], opacity.clone()).unwrap();
        let c = g.constant(&[n, 3], color.clone()).unwrap();
        let out = splat_composite(&mut g, &pos, o, c, None, &cam, Footprint::Point, bg).unwrap();
        let (rgb, depth) = direct_composite(&cam, &pos, &opacity, &color, &point_weights(&cam, &pos), bg);
        assert!(max_diff(g.value(out.image), &rgb) <= 1e-12, "trial {trial} colour");
        assert!(max_diff(g.value(out.depth), &depth) <= 1e-12, "trial {trial} depth");
    }
}

#[test]
fn disk_splatting_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..200 {
        let cam = random_camera(&mut rng, 4, 4.0);
        let n = 1 + trial % 5;
        let (pos, opacity, color) = random_gaussians(&mut rng, &cam, n);
        let scale: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(0.05..1.2)).collect();
        let mut g = Graph::new();
        let o = g.constant(&[n], opacity.clone()).unwrap();
        let c = g.constant(&[n, 3], color.clone()).unwrap();
        let s = g.constant(&[n, 3], scale.clone()).unwrap();
        let out = splat_composite(&mut g, &pos, o, c, Some(s), &cam, Footprint::Disk, [0.0; 3]).unwrap();
        let (rgb, depth) = direct_composite(&cam, &pos, &opacity, &color, &disk_weights(&cam, &pos, &scale), [0.0; 3]);
        assert!(max_diff(g.value(out.image), &rgb) <= 1e-12, "trial {trial} colour");
        assert!(max_diff(g.value(out.depth), &depth) <= 1e-12, "trial {trial} depth");
    }
}

#[test]
fn empty_pixels_show_background() {
    let cam = Camera::look_at(Vec3::new(0.0, -5.0, 0.0), Vec3::zeros(), 4.0, 4, 4).unwrap();
    let mut g = Graph::new();
    // The only Gaussian sits behind the camera.
    let o = g.constant(&[1], vec![0.9]).unwrap();
    let c = g.constant(&[1, 3], vec![1.0; 3]).unwrap();
    let behind = [Vec3::new(0.0, -10.0, 0.0)];
    let out = splat_composite(&mut g, &behind, o, c, None, &cam, Footprint::Point, [0.2, 0.4, 0.6]).unwrap();
    let img = g.value(out.image);
    assert!(img.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
    assert!(g.value(out.depth).iter().all(|d| *d == 0.0));
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let (d1, d2, d3) = (cross(a, b, p), cross(b, c, p), cross(c, a, p));
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

/// A point lies in the convex hull of a planar set iff it lies in a triangle of
/// three of its points.
fn in_hull_of(p: (f64, f64), pts: &[(f64, f64)]) -> bool {
    let n = pts.len();
    (0..n).any(|i| (i + 1..n).any(|j| (j + 1..n).any(|k| in_triangle(p, pts[i], pts[j], pts[k]))))
}

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    let size = [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0), rng.gen_range(0.3..2.5)];
    Box3D::new(
        Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), size[2] / 2.0),
        size,
        rng.gen_range(0.0..std::f64::consts::PI),
        [0.5; 3],
    )
    .unwrap()
}

#[test]
fn box_masks_match_hull_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut covered = 0;
    for _ in 0..120 {
        let b = random_box(&mut rng);
        let cam = random_camera(&mut rng, 32, 28.0);
        let pts: Vec<(f64, f64)> = b
            .corners()
            .iter()
            .map(|c| {
                let pc = cam.rotation * c + cam.translation;
                assert!(pc.z > 0.0);
                (cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy)
            })
            .collect();
        let mask = box_to_mask2d(&b, &cam);
        for y in 0..32 {
            for x in 0..32 {
                let expect = in_hull_of((x as f64 + 0.5, y as f64 + 0.5), &pts);
                assert_eq!(mask.get(x, y), expect, "pixel ({x}, {y}) of box {b:?}");
            }
        }
        covered += mask.count();
    }
    assert!(covered > 1000, "boxes barely visible: {covered} pixels");
}

/// Even-odd crossing test against the footprint polygon.
fn in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[test]
fn bev_masks_match_rotated_rectangle_containment() {
    let spec = VoxelGridSpec::new(Vec3::new(-8.0, -8.0, 0.0), 0.5, [32, 32, 16]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..150 {
        let b = random_box(&mut rng);
        let yaw = b.yaw;
        let (l, w) = (b.size[0] / 2.0, b.size[1] / 2.0);
        let poly: Vec<(f64, f64)> = [(-l, -w), (l, -w), (l, w), (-l, w)]
            .iter()
            .map(|&(a, c)| (b.center.x + a * yaw.cos() - c * yaw.sin(), b.center.y + a * yaw.sin() + c * yaw.cos()))
            .collect();
        let mask = boxes_to_maskbev(std::slice::from_ref(&b), &spec);
        for i in 0..32 {
            for j in 0..32 {
                let p = (-8.0 + 0.5 * (i as f64 + 0.5), -8.0 + 0.5 * (j as f64 + 0.5));
                assert_eq!(mask.get(i, j), in_polygon(p, &poly), "cell ({i}, {j})");
            }
        }
    }
}

#[test]
fn axis_aligned_footprint_counts_cells() {
    let spec = VoxelGridSpec::new(Vec3::new(-8.0, -8.0, 0.0), 0.5, [32, 32, 16]).unwrap();
    // 3 m × 2 m footprint centred on a cell corner covers 6 × 4 cells exactly.
    let b = Box3D::new(Vec3::new(0.0, 0.0, 1.0), [3.0, 2.0, 2.0], 0.0, [0.5; 3]).unwrap();
    assert_eq!(boxes_to_maskbev(&[b.clone()], &spec).count(), 24);
    // A quarter turn swaps the extents.
    let turned = Box3D { yaw: std::f64::consts::FRAC_PI_2, ..b };
    let m = boxes_to_maskbev(&[turned], &spec);
    assert_eq!(m.count(), 24);
    assert!(m.get(17, 18) && !m.get(18, 17));
}

#[test]
fn masks_cover_every_ray_hit() {
    for seed in 0..6 {
        let cfg = SceneConfig {
            seed,
            width: 48,
            height: 48,
            focal: 48.0,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        for (v, cam) in scene.cameras.iter().enumerate() {
            let mask = &scene.masks2d[v];
            let mut hits = 0;
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let (o, d) = cam.pixel_ray(x, y);
                    if scene.boxes.iter().any(|b| b.intersect(&o, &d).is_some()) {
                        hits += 1;
                        assert!(mask.get(x, y), "seed {seed} view {v} pixel ({x}, {y}) hit outside mask");
                    }
                    if scene.gt_depth[v][y * cam.width + x] > 0.0 {
                        assert!(mask.get(x, y));
                    }
                }
            }
            assert!(hits > 0);
        }
    }
}

#[test]
fn occupancy_count_matches_box_volume() {
    let spec = VoxelGridSpec::new(Vec3::new(-8.0, -8.0, 0.0), 0.5, [32, 32, 16]).unwrap();
    let n = spec.count();
    // Aligned with the lattice: exactly (edge / voxel)^3 centers inside.
    let aligned = Box3D::new(Vec3::new(0.0, 0.0, 2.0), [2.0, 2.0, 2.0], 0.0, [0.5; 3]).unwrap();
    let raw = build_raw_grid(&[aligned], &spec, 0, 0.0);
    assert_eq!(raw[..n].iter().sum::<f64>(), 64.0);
    // Arbitrary placement is off by at most one boundary layer per face.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let b = random_box(&mut rng);
        let raw = build_raw_grid(std::slice::from_ref(&b), &spec, 0, 0.0);
        let count = raw[..n].iter().sum::<f64>();
        let exact = b.size.iter().product::<f64>() / spec.voxel_size.powi(3);
        let diag = b.size[0].hypot(b.size[1]);
        let outer = (diag / 0.5 + 2.0).powi(2) * (b.size[2] / 0.5 + 2.0);
        assert!(count <= outer && count >= 0.0, "count {count} vs volume {exact}");
        let inner = (b.size[2] / 0.5 - 2.0).max(0.0) * (b.size[0].min(b.size[1]) / 0.5 / 2f64.sqrt() - 2.0).max(0.0).powi(2);
        assert!(count >= inner, "count {count} below inscribed bound {inner}");
    }
}

#[test]
fn face_on_depth_equals_face_distance() {
    let b = Box3D::new(Vec3::new(0.0, 0.0, 1.0), [2.0, 2.0, 2.0], 0.0, [0.2, 0.4, 0.6]).unwrap();
    for dist in [3.0, 5.5, 9.25] {
        // Odd image: the central pixel ray is the optical axis.
        let cam = Camera::look_at(Vec3::new(0.0, -dist, 1.0), Vec3::new(0.0, 0.0, 1.0), 10.0, 9, 9).unwrap();
        let (rgb, depth) = raycast_reference(&[b.clone()], &Background::Flat([0.0; 3]), &cam);
        let centre = 4 * 9 + 4;
        assert!((depth[centre] - (dist - 1.0)).abs() < 1e-12);
        assert_eq!(&rgb[3 * centre..3 * centre + 3], &[0.2, 0.4, 0.6]);
    }
}

proptest! {
    #[test]
    fn unproject_inverts_project(
        angle in 0.0..std::f64::consts::TAU,
        height in -3.0..6.0f64,
        u in 0.0..64.0f64,
        v in 0.0..48.0f64,
        d in 0.1..50.0f64,
    ) {
        let eye = Vec3::new(10.0 * angle.cos(), 10.0 * angle.sin(), height);
        let cam = Camera::look_at(eye, Vec3::new(0.0, 0.0, 1.0), 55.0, 64, 48).unwrap();
        let p = cam.unproject(u, v, d);
        let q = cam.project(&p);
        prop_assert!(!q.behind);
        prop_assert!((q.u - u).abs() < 1e-9 && (q.v - v).abs() < 1e-9);
        prop_assert!((q.depth - d).abs() < 1e-9 * d.max(1.0));
    }
}
