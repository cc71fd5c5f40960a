//! Pinhole cameras, the voxel lattice, oriented boxes and the mask
//! rasterizers that define foreground regions in the image and in BEV.
//!
//! Camera frame: x right, y down, z forward. World frame: z up.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Points closer than this to the image plane count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z.
    pub depth: f64,
    pub behind: bool,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image extent must be positive".into()));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target` with world +z as up; principal
    /// point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&Vec3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("view direction parallel to world up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let pc = self.to_camera(p);
        let behind = pc.z <= MIN_DEPTH;
        let z = if behind { MIN_DEPTH } else { pc.z };
        Projection {
            u: self.fx * pc.x / z + self.cx,
            v: self.fy * pc.y / z + self.cy,
            depth: pc.z,
            behind,
        }
    }

    /// Inverse of [`Camera::project`] for a point in front of the camera.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let pc = Vec3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth);
        self.rotation.transpose() * (pc - self.translation)
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel containing image coordinates `(u, v)`, pixel `(x, y)` covering `[x, x+1) × [y, y+1)`.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// World-space ray through the center of pixel `(x, y)`; unit direction.
    pub fn pixel_ray(&self, x: usize, y: usize) -> (Vec3, Vec3) {
        let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
        let dir_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dir = (self.rotation.transpose() * dir_cam).normalize();
        (self.center(), dir)
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridSpec {
    /// Minimum corner of the perception range, meters.
    pub origin: Vec3,
    pub voxel_size: f64,
    /// Voxel counts along X, Y, Z.
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidGrid(format!("voxel size must be positive, got {voxel_size}")));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be >= 1, got {dims:?}")));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    pub fn count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn columns(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Flat voxel index; Z varies fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn unflatten(&self, n: usize) -> (usize, usize, usize) {
        let k = n % self.dims[2];
        let j = (n / self.dims[2]) % self.dims[1];
        let i = n / (self.dims[2] * self.dims[1]);
        (i, j, k)
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    pub fn center_of(&self, n: usize) -> Vec3 {
        let (i, j, k) = self.unflatten(n);
        self.center(i, j, k)
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin + self.extent()
    }

    /// Length of the perception-range diagonal.
    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Voxel containing `p`, if inside the range.
    pub fn locate(&self, p: &Vec3) -> Option<usize> {
        let rel = (p - self.origin) / self.voxel_size;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            if !(rel[a] >= 0.0) || rel[a] >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = rel[a] as usize;
        }
        Some(self.index(idx[0], idx[1], idx[2]))
    }

    /// BEV cell center `(x, y)` for column `(i, j)`.
    pub fn bev_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin.x + (i as f64 + 0.5) * self.voxel_size,
            self.origin.y + (j as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Parameter interval of the ray inside the range's bounding box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        slab(origin, dir, &self.origin, &self.max_corner())
    }
}

/// Centers of all voxels in flat index order.
pub fn voxel_centers(spec: &VoxelGridSpec) -> Vec<Vec3> {
    (0..spec.count()).map(|n| spec.center_of(n)).collect()
}

/// Slab-method intersection with an axis-aligned box: `(t_enter, t_exit)`
/// clipped to `t >= 0`.
pub fn slab(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Box3D {
    pub center: Vec3,
    /// Length (local x), width (local y), height (z), meters.
    pub size: [f64; 3],
    pub yaw: f64,
    pub color: [f64; 3],
}

impl Box3D {
    pub fn new(center: Vec3, size: [f64; 3], yaw: f64, color: [f64; 3]) -> Result<Self> {
        if size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig(format!("box size must be positive, got {size:?}")));
        }
        Ok(Self {
            center,
            size,
            yaw,
            color,
        })
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    fn dir_to_local(&self, d: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    fn half(&self) -> Vec3 {
        Vec3::new(self.size[0], self.size[1], self.size[2]) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        let h = self.half();
        l.x.abs() <= h.x && l.y.abs() <= h.y && l.z.abs() <= h.z
    }

    /// Whether `(x, y)` lies inside the yaw-rotated footprint rectangle.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let l = self.to_local(&Vec3::new(x, y, self.center.z));
        let h = self.half();
        l.x.abs() <= h.x && l.y.abs() <= h.y
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half();
        let (s, c) = self.yaw.sin_cos();
        let mut out = [Vec3::zeros(); 8];
        for (n, corner) in out.iter_mut().enumerate() {
            let lx = if n & 1 == 0 { -h.x } else { h.x };
            let ly = if n & 2 == 0 { -h.y } else { h.y };
            let lz = if n & 4 == 0 { -h.z } else { h.z };
            *corner = self.center + Vec3::new(c * lx - s * ly, s * lx + c * ly, lz);
        }
        out
    }

    /// Nearest positive hit distance along a unit-direction ray.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let o = self.to_local(origin);
        let d = self.dir_to_local(dir);
        let h = self.half();
        let (t0, _) = slab(&o, &d, &-h, &h)?;
        (t0 > 0.0).then_some(t0)
    }

    /// Radius of the circle circumscribing the footprint.
    pub fn footprint_radius(&self) -> f64 {
        0.5 * (self.size[0].hypot(self.size[1]))
    }
}

/// Binary image mask, row-major `height × width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Mask2D {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.data[y * self.width + x] = 1;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    pub fn union_with(&mut self, other: &Mask2D) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Binary BEV occupancy over the grid's `X × Y` columns, column `(i, j)` at `i·Y + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBEV {
    pub nx: usize,
    pub ny: usize,
    data: Vec<u8>,
}

impl MaskBEV {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            data: vec![0; nx * ny],
        }
    }

    pub fn from_bits(nx: usize, ny: usize, bits: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<u8> = bits.into_iter().map(u8::from).collect();
        assert_eq!(data.len(), nx * ny, "BEV mask length");
        Self { nx, ny, data }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.ny + j] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

fn cross2(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_ccw(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-9)
}

/// Pixels whose centers fall inside the convex hull of the box's projected
/// corners; corners behind the camera are dropped first.
pub fn box_to_mask2d(b: &Box3D, cam: &Camera) -> Mask2D {
    let mut mask = Mask2D::zeros(cam.width, cam.height);
    let projected: Vec<(f64, f64)> = b
        .corners()
        .iter()
        .map(|c| cam.project(c))
        .filter(|p| !p.behind)
        .map(|p| (p.u, p.v))
        .collect();
    let hull = convex_hull(&projected);
    if hull.len() < 3 {
        return mask;
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v) in &hull {
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let x0 = (umin - 0.5).floor().max(0.0) as usize;
    let y0 = (vmin - 0.5).floor().max(0.0) as usize;
    let x1 = ((umax - 0.5).ceil().max(-1.0) as isize).min(cam.width as isize - 1);
    let y1 = ((vmax - 0.5).ceil().max(-1.0) as isize).min(cam.height as isize - 1);
    if x1 < 0 || y1 < 0 {
        return mask;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            if inside_ccw(&hull, (x as f64 + 0.5, y as f64 + 0.5)) {
                mask.set(x, y);
            }
        }
    }
    mask
}

/// Union of the box masks of `boxes` in `cam`.
pub fn boxes_to_mask2d(boxes: &[Box3D], cam: &Camera) -> Mask2D {
    let mut mask = Mask2D::zeros(cam.width, cam.height);
    for b in boxes {
        mask.union_with(&box_to_mask2d(b, cam));
    }
    mask
}

/// BEV cells whose centers lie inside any box footprint.
pub fn boxes_to_maskbev(boxes: &[Box3D], spec: &VoxelGridSpec) -> MaskBEV {
    let (nx, ny) = (spec.dims[0], spec.dims[1]);
    MaskBEV::from_bits(
        nx,
        ny,
        (0..nx).flat_map(|i| (0..ny).map(move |j| (i, j))).map(|(i, j)| {
            let (x, y) = spec.bev_center(i, j);
            boxes.iter().any(|b| b.footprint_contains(x, y))
        }),
    )
}
