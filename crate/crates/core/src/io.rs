//! Binary PPM/PGM writers and the synthetic-scene directory layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Background, SyntheticScene};

/// Binary P6 bytes, channel values `round(255·v)` after clamping to [0, 1].
pub fn ppm_bytes(width: usize, height: usize, rgb: &[f64]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!("ppm: {} values for {width}x{height}x3", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Binary 16-bit P5 bytes, samples big-endian.
pub fn pgm16_bytes(width: usize, height: usize, samples: &[u16]) -> Result<Vec<u8>> {
    if samples.len() != width * height {
        return Err(Error::Shape(format!("pgm: {} samples for {width}x{height}", samples.len())));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

/// Rounds `v·scale` into `[0, 65535]`; NaN maps to 0.
pub fn to_u16(values: &[f64], scale: f64) -> Vec<u16> {
    values
        .iter()
        .map(|v| {
            let s = (v * scale).round();
            if s.is_nan() {
                0
            } else {
                s.clamp(0.0, 65535.0) as u16
            }
        })
        .collect()
}

/// Depth in meters as millimeters, saturating.
pub fn depth_samples(depth: &[f64]) -> Vec<u16> {
    to_u16(depth, 1000.0)
}

/// Values in [0, 1] spread over the full 16-bit range.
pub fn heatmap_samples(values: &[f64]) -> Vec<u16> {
    to_u16(values, 65535.0)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    fs::write(path, ppm_bytes(width, height, rgb)?)?;
    Ok(())
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    fs::write(path, pgm16_bytes(width, height, samples)?)?;
    Ok(())
}

pub fn f64_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, f64_le_bytes(values))?;
    Ok(())
}

fn fmt3(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// Manifest text: config lines, then boxes, cameras and blob names.
pub fn scene_manifest(scene: &SyntheticScene, config_text: &str) -> String {
    let mut m = String::new();
    let (w, h) = (scene.width(), scene.height());
    writeln!(m, "[config]").unwrap();
    m.push_str(config_text);
    writeln!(m, "[scene]").unwrap();
    writeln!(m, "seed = {}", scene.seed).unwrap();
    writeln!(m, "image = {w} {h}").unwrap();
    let g = &scene.grid;
    writeln!(m, "grid = {} {} {} voxel {:?} origin {}", g.dims[0], g.dims[1], g.dims[2], g.voxel_size, fmt3(g.origin.as_slice())).unwrap();
    match &scene.background {
        Background::Flat(c) => writeln!(m, "background = flat {}", fmt3(c)).unwrap(),
        Background::Checker { cell, dark, light, sky } => writeln!(
            m,
            "background = checker cell {cell:?} dark {} light {} sky {}",
            fmt3(dark),
            fmt3(light),
            fmt3(sky)
        )
        .unwrap(),
    }
    for (i, b) in scene.boxes.iter().enumerate() {
        writeln!(
            m,
            "box {i} center {} size {} yaw {:?} color {}",
            fmt3(b.center.as_slice()),
            fmt3(&b.size),
            b.yaw,
            fmt3(&b.color)
        )
        .unwrap();
    }
    for (i, c) in scene.cameras.iter().enumerate() {
        let r: Vec<f64> = (0..3).flat_map(|row| (0..3).map(move |col| (row, col))).map(|(r, c_)| c.rotation[(r, c_)]).collect();
        writeln!(
            m,
            "camera {i} fx {:?} fy {:?} cx {:?} cy {:?} rotation {} translation {}",
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            fmt3(&r),
            fmt3(c.translation.as_slice())
        )
        .unwrap();
    }
    writeln!(m, "[blobs]").unwrap();
    for v in 0..scene.cameras.len() {
        writeln!(m, "rgb_{v}.f64 = {h} {w} 3").unwrap();
        writeln!(m, "depth_{v}.f64 = {h} {w}").unwrap();
        writeln!(m, "mask2d_{v}.f64 = {h} {w}").unwrap();
    }
    writeln!(m, "mask_bev.f64 = {} {}", g.dims[0], g.dims[1]).unwrap();
    writeln!(m, "raw_grid.f64 = {} {} {} {}", crate::scene::RAW_CHANNELS, g.dims[0], g.dims[1], g.dims[2]).unwrap();
    m
}

/// Writes one scene: `manifest.txt`, little-endian f64 blobs and PPM previews.
pub fn write_scene_dir(dir: &Path, scene: &SyntheticScene, config_text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), scene_manifest(scene, config_text))?;
    let (w, h) = (scene.width(), scene.height());
    for v in 0..scene.cameras.len() {
        write_blob(&dir.join(format!("rgb_{v}.f64")), &scene.gt_rgb[v])?;
        write_blob(&dir.join(format!("depth_{v}.f64")), &scene.gt_depth[v])?;
        write_blob(&dir.join(format!("mask2d_{v}.f64")), &scene.masks2d[v].to_f64())?;
        write_ppm(&dir.join(format!("rgb_{v}.ppm")), w, h, &scene.gt_rgb[v])?;
    }
    write_blob(&dir.join("mask_bev.f64"), &scene.mask_bev.to_f64())?;
    write_blob(&dir.join("raw_grid.f64"), &scene.raw_grid)?;
    Ok(())
}
