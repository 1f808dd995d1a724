//! Dense 3D grids with physical spacing, plus the preprocessing and
//! augmentation operations applied to PET/CT before prompting.
//!
//! All volumes use (z, y, x) axis order with x varying fastest, so the linear
//! index of voxel `[z, y, x]` is `(z * ny + y) * nx + x`. This is also the
//! on-disk NIfTI-1 order, which keeps file I/O free of permutations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel index in (z, y, x) order.
pub type VoxelIndex = [usize; 3];

/// Resampling target used by the challenge pipeline, in millimetres (z, y, x).
pub const CHALLENGE_SPACING: [f64; 3] = [3.0, 2.04, 2.04];

/// Patch edge length used for training crops.
pub const DEFAULT_PATCH_SIZE: [usize; 3] = [192, 192, 192];

/// Offsets closer than this to an integer voxel count are snapped to it when
/// sampling, so voxel-aligned shifts reproduce exact integer rolls.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Shape {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Result<Self> {
        if nz == 0 || ny == 0 || nx == 0 {
            return Err(Error::invalid(format!(
                "shape components must be >= 1, got ({nz}, {ny}, {nx})"
            )));
        }
        Ok(Self { nz, ny, nx })
    }

    pub fn from_array(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims[0], dims[1], dims[2])
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nz, self.ny, self.nx]
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    #[inline]
    pub fn index(&self, [z, y, x]: VoxelIndex) -> usize {
        debug_assert!(z < self.nz && y < self.ny && x < self.nx);
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn coords(&self, linear: usize) -> VoxelIndex {
        let x = linear % self.nx;
        let yz = linear / self.nx;
        [yz / self.ny, yz % self.ny, x]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        p.iter()
            .zip(self.as_array())
            .all(|(&c, n)| c >= 0 && (c as u64) < n as u64)
    }

    /// Converts a signed position to an index when it lies inside the grid.
    pub fn checked(&self, p: [i64; 3]) -> Option<VoxelIndex> {
        self.contains(p)
            .then(|| [p[0] as usize, p[1] as usize, p[2] as usize])
    }
}

/// Millimetres per voxel along (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub dz: f64,
    pub dy: f64,
    pub dx: f64,
}

impl Spacing {
    pub const UNIT: Spacing = Spacing {
        dz: 1.0,
        dy: 1.0,
        dx: 1.0,
    };

    pub fn new(dz: f64, dy: f64, dx: f64) -> Result<Self> {
        for (name, v) in [("dz", dz), ("dy", dy), ("dx", dx)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "spacing {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { dz, dy, dx })
    }

    pub fn from_array(s: [f64; 3]) -> Result<Self> {
        Self::new(s[0], s[1], s[2])
    }

    pub fn challenge() -> Self {
        Self::from_array(CHALLENGE_SPACING).expect("constant spacing is valid")
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dz, self.dy, self.dx]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.dz * self.dy * self.dx
    }
}

/// Geometry of a volume without its data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: Shape,
    pub spacing: Spacing,
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(shape: Shape, spacing: Spacing) -> Self {
        Self {
            shape,
            spacing,
            origin: [0.0; 3],
        }
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.spacing.as_array();
        std::array::from_fn(|a| self.origin[a] + p[a] * s[a])
    }

    pub fn world_to_voxel(&self, w: [f64; 3]) -> [f64; 3] {
        let s = self.spacing.as_array();
        std::array::from_fn(|a| (w[a] - self.origin[a]) / s[a])
    }
}

/// A dense scalar grid.
///
/// `Volume3` (f32) carries images and prompt channels, `MaskVolume` (bool)
/// carries segmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    shape: Shape,
    spacing: Spacing,
    origin: [f64; 3],
    data: Vec<T>,
}

pub type Volume3 = Volume<f32>;
pub type MaskVolume = Volume<bool>;

impl<T: Copy> Volume<T> {
    pub fn new(shape: Shape, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} ({} voxels)",
                data.len(),
                shape.as_array(),
                shape.len()
            )));
        }
        Ok(Self {
            shape,
            spacing,
            origin: [0.0; 3],
            data,
        })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: T) -> Self {
        Self {
            shape,
            spacing,
            origin: [0.0; 3],
            data: vec![value; shape.len()],
        }
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// World position of voxel `[0, 0, 0]` in millimetres, (z, y, x).
    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, p: VoxelIndex) -> T {
        self.data[self.shape.index(p)]
    }

    #[inline]
    pub fn set(&mut self, p: VoxelIndex, value: T) {
        let i = self.shape.index(p);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            origin: self.origin,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// New volume on the same grid with the given data.
    pub fn with_data<U: Copy>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Ok(Volume::new(self.shape, self.spacing, data)?.with_origin(self.origin))
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.shape == other.shape && self.spacing == other.spacing
    }

    pub fn ensure_same_grid<U>(&self, other: &Volume<U>, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: grid mismatch, shape {:?} spacing {:?} vs shape {:?} spacing {:?}",
                self.shape.as_array(),
                self.spacing.as_array(),
                other.shape.as_array(),
                other.spacing.as_array()
            )))
        }
    }

    pub fn grid(&self) -> Grid {
        Grid {
            shape: self.shape,
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        self.grid().voxel_to_world(p)
    }

    pub fn world_to_voxel(&self, w: [f64; 3]) -> [f64; 3] {
        self.grid().world_to_voxel(w)
    }
}

impl Volume3 {
    pub fn zeros(shape: Shape, spacing: Spacing) -> Self {
        Self::filled(shape, spacing, 0.0)
    }

    pub fn zeros_on(grid: Grid) -> Self {
        Self::filled(grid.shape, grid.spacing, 0.0).with_origin(grid.origin)
    }

    /// (min, max) over all voxels, ignoring NaN.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .filter(|v| !v.is_nan())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

impl MaskVolume {
    pub fn empty(shape: Shape, spacing: Spacing) -> Self {
        Self::filled(shape, spacing, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn to_volume(&self) -> Volume3 {
        self.map(|b| if b { 1.0 } else { 0.0 })
    }

    /// Iterator over the linear indices of foreground voxels.
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

fn resampled_shape(shape: Shape, from: Spacing, to: Spacing) -> Shape {
    let n = shape.as_array();
    let s = from.as_array();
    let t = to.as_array();
    let dims: [usize; 3] =
        std::array::from_fn(|a| ((n[a] as f64 * s[a] / t[a]).round() as usize).max(1));
    Shape::from_array(dims).expect("clamped to >= 1")
}

/// Source coordinate (in input voxels) of each output voxel centre along one
/// axis, aligning the outer voxel faces of the two grids.
fn source_coords(n_out: usize, ratio: f64) -> Vec<f64> {
    (0..n_out)
        .map(|i| (i as f64 + 0.5) * ratio - 0.5)
        .collect()
}

/// Resamples an image onto `target` spacing. Masks should go through
/// [`resample_mask`], which is always nearest-neighbour.
pub fn resample(v: &Volume3, target: Spacing, mode: Interpolation) -> Result<Volume3> {
    let target = Spacing::from_array(target.as_array())?;
    if target == v.spacing {
        return Ok(v.clone());
    }
    match mode {
        Interpolation::Nearest => Ok(resample_nearest(v, target)),
        Interpolation::Trilinear => Ok(resample_trilinear(v, target)),
    }
}

pub fn resample_mask(m: &MaskVolume, target: Spacing) -> Result<MaskVolume> {
    let target = Spacing::from_array(target.as_array())?;
    if target == m.spacing {
        return Ok(m.clone());
    }
    Ok(resample_nearest(m, target))
}

fn resampled_origin<T>(v: &Volume<T>, target: Spacing) -> [f64; 3] {
    let s = v.spacing.as_array();
    let t = target.as_array();
    std::array::from_fn(|a| v.origin[a] + 0.5 * (t[a] - s[a]))
}

fn resample_nearest<T: Copy>(v: &Volume<T>, target: Spacing) -> Volume<T> {
    let out_shape = resampled_shape(v.shape, v.spacing, target);
    let n_in = v.shape.as_array();
    let s = v.spacing.as_array();
    let t = target.as_array();
    let maps: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            source_coords(out_shape.as_array()[a], t[a] / s[a])
                .into_iter()
                .map(|c| (c.round().max(0.0) as usize).min(n_in[a] - 1))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(out_shape.len());
    for &z in &maps[0] {
        for &y in &maps[1] {
            let row = (z * v.shape.ny + y) * v.shape.nx;
            data.extend(maps[2].iter().map(|&x| v.data[row + x]));
        }
    }
    Volume {
        shape: out_shape,
        spacing: target,
        origin: resampled_origin(v, target),
        data,
    }
}

/// Lower sample index and fractional weight for a clamped source coordinate.
fn lerp_weights(coords: &[f64], n: usize) -> Vec<(usize, usize, f64)> {
    coords
        .iter()
        .map(|&c| {
            let c = c.clamp(0.0, (n - 1) as f64);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn trilinear_at(v: &Volume3, (z0, z1, fz): (usize, usize, f64), (y0, y1, fy): (usize, usize, f64), (x0, x1, fx): (usize, usize, f64)) -> f32 {
    let at = |z: usize, y: usize, x: usize| v.data[(z * v.shape.ny + y) * v.shape.nx + x] as f64;
    let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
    let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
    let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
    let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
    let value = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
    // Keep the result inside the convex hull of the corners despite rounding.
    let (lo, hi) = [
        at(z0, y0, x0),
        at(z0, y0, x1),
        at(z0, y1, x0),
        at(z0, y1, x1),
        at(z1, y0, x0),
        at(z1, y0, x1),
        at(z1, y1, x0),
        at(z1, y1, x1),
    ]
    .iter()
    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    value.clamp(lo, hi) as f32
}

fn resample_trilinear(v: &Volume3, target: Spacing) -> Volume3 {
    let out_shape = resampled_shape(v.shape, v.spacing, target);
    let n_in = v.shape.as_array();
    let s = v.spacing.as_array();
    let t = target.as_array();
    let w: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| lerp_weights(&source_coords(out_shape.as_array()[a], t[a] / s[a]), n_in[a]))
        .collect();
    let mut data = Vec::with_capacity(out_shape.len());
    for &wz in &w[0] {
        for &wy in &w[1] {
            data.extend(w[2].iter().map(|&wx| trilinear_at(v, wz, wy, wx)));
        }
    }
    Volume {
        shape: out_shape,
        spacing: target,
        origin: resampled_origin(v, target),
        data,
    }
}

/// Clamp-then-standardise CT normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtNormalization {
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub mean: f64,
    pub std: f64,
}

impl Default for CtNormalization {
    fn default() -> Self {
        Self {
            clip_lo: -1024.0,
            clip_hi: 1024.0,
            mean: 0.0,
            std: 250.0,
        }
    }
}

impl CtNormalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.std.is_finite() && self.std > 0.0) {
            return Err(Error::invalid(format!("CT std must be > 0, got {}", self.std)));
        }
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::invalid(format!(
                "CT clip_lo ({}) must be below clip_hi ({})",
                self.clip_lo, self.clip_hi
            )));
        }
        Ok(())
    }
}

pub fn normalize_ct(v: &Volume3, scheme: &CtNormalization) -> Result<Volume3> {
    scheme.validate()?;
    let s = *scheme;
    Ok(v.map(|hu| (((hu as f64).clamp(s.clip_lo, s.clip_hi) - s.mean) / s.std) as f32))
}

/// A crop of a larger volume. `offset` is the source index of patch voxel
/// `[0, 0, 0]`, so `source = patch + offset`.
#[derive(Debug, Clone)]
pub struct Patch<T> {
    pub volume: Volume<T>,
    pub offset: [i64; 3],
}

impl<T> Patch<T> {
    pub fn to_patch(&self, source: VoxelIndex) -> [i64; 3] {
        std::array::from_fn(|a| source[a] as i64 - self.offset[a])
    }

    pub fn to_source(&self, patch: VoxelIndex) -> [i64; 3] {
        std::array::from_fn(|a| patch[a] as i64 + self.offset[a])
    }
}

/// Crops a `size` window whose centre voxel (`size / 2` per axis) sits on
/// `center`. Voxels outside the source get `pad_value`.
pub fn extract_patch<T: Copy>(
    v: &Volume<T>,
    center: VoxelIndex,
    size: [usize; 3],
    pad_value: T,
) -> Result<Patch<T>> {
    let c = [center[0] as i64, center[1] as i64, center[2] as i64];
    if !v.shape.contains(c) {
        return Err(Error::invalid(format!(
            "patch centre {center:?} outside volume of shape {:?}",
            v.shape.as_array()
        )));
    }
    let out_shape = Shape::from_array(size)?;
    let offset: [i64; 3] = std::array::from_fn(|a| c[a] - (size[a] / 2) as i64);
    let mut data = vec![pad_value; out_shape.len()];
    let n = v.shape.as_array();
    // Overlap range in patch coordinates per axis.
    let range: [(usize, usize); 3] = std::array::from_fn(|a| {
        let lo = (-offset[a]).clamp(0, size[a] as i64) as usize;
        let hi = (n[a] as i64 - offset[a]).clamp(0, size[a] as i64) as usize;
        (lo, hi.max(lo))
    });
    for pz in range[0].0..range[0].1 {
        let sz = (pz as i64 + offset[0]) as usize;
        for py in range[1].0..range[1].1 {
            let sy = (py as i64 + offset[1]) as usize;
            let (x0, x1) = range[2];
            if x0 == x1 {
                continue;
            }
            let sx0 = (x0 as i64 + offset[2]) as usize;
            let src = v.shape.index([sz, sy, sx0]);
            let dst = out_shape.index([pz, py, x0]);
            data[dst..dst + (x1 - x0)].copy_from_slice(&v.data[src..src + (x1 - x0)]);
        }
    }
    let s = v.spacing.as_array();
    let origin = std::array::from_fn(|a| v.origin[a] + offset[a] as f64 * s[a]);
    Ok(Patch {
        volume: Volume {
            shape: out_shape,
            spacing: v.spacing,
            origin,
            data,
        },
        offset,
    })
}

/// Rigidly translates PET content by `offset_mm` (z, y, x) on its own grid:
/// `out[p] = pet(p - offset)`. Samples falling outside the field of view take
/// the PET minimum.
pub fn misalign(pet: &Volume3, offset_mm: [f64; 3]) -> Result<Volume3> {
    if offset_mm.iter().any(|o| !o.is_finite()) {
        return Err(Error::invalid(format!("misalignment offset {offset_mm:?} is not finite")));
    }
    if offset_mm == [0.0; 3] {
        return Ok(pet.clone());
    }
    let (fill, _) = pet.min_max();
    let s = pet.spacing.as_array();
    let n = pet.shape.as_array();
    let shift: [f64; 3] = std::array::from_fn(|a| {
        let v = offset_mm[a] / s[a];
        if (v - v.round()).abs() < SNAP_EPS {
            v.round()
        } else {
            v
        }
    });
    // Per-axis sampling table; None marks out-of-field positions.
    let table: Vec<Vec<Option<(usize, usize, f64)>>> = (0..3)
        .map(|a| {
            (0..n[a])
                .map(|i| {
                    let c = i as f64 - shift[a];
                    if c < 0.0 || c > (n[a] - 1) as f64 {
                        return None;
                    }
                    let lo = c.floor() as usize;
                    let f = c - lo as f64;
                    let hi = if f > 0.0 { lo + 1 } else { lo };
                    Some((lo, hi.min(n[a] - 1), f))
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(pet.shape.len());
    for wz in &table[0] {
        for wy in &table[1] {
            for wx in &table[2] {
                data.push(match (wz, wy, wx) {
                    (Some(wz), Some(wy), Some(wx)) => trilinear_at(pet, *wz, *wy, *wx),
                    _ => fill,
                });
            }
        }
    }
    pet.with_data(data)
}
