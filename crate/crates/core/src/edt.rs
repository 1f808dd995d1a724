//! Exact anisotropic Euclidean distance transforms.
//!
//! Squared distances are accumulated in integer fixed point: each spacing is
//! quantised to [`FIXED_UNITS_PER_MM`] units and the three separable
//! lower-envelope passes (Felzenszwalb & Huttenlocher) compare parabola
//! intersections as exact rationals in `i128`. The only rounding happens in
//! the final square root, so results do not depend on pass order or on how
//! scanlines are scheduled across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Shape, Spacing, Volume, Volume3};

/// Fixed-point resolution for spacings (1 unit = 1 nm).
pub const FIXED_UNITS_PER_MM: f64 = 1e6;

/// Squared distance marker for "no source on this line yet".
const INF: i128 = i128::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceSemantics {
    /// Distance from every voxel to the nearest source voxel.
    DistanceToForeground,
    /// Distance from a foreground voxel to the nearest background (or
    /// out-of-volume) voxel; zero on background.
    InteriorDepth,
}

#[derive(Debug, Clone)]
pub struct DistanceField {
    pub values: Volume3,
    pub semantics: DistanceSemantics,
}

impl DistanceField {
    pub fn get(&self, p: crate::volume::VoxelIndex) -> f32 {
        self.values.get(p)
    }

    pub fn data(&self) -> &[f32] {
        self.values.data()
    }
}

/// Per-axis spacing in fixed-point units.
pub fn quantize_spacing(spacing: Spacing) -> [i128; 3] {
    spacing
        .as_array()
        .map(|s| ((s * FIXED_UNITS_PER_MM).round() as i128).max(1))
}

/// Converts a fixed-point squared distance back to millimetres.
pub fn fixed_to_mm(d2: i128) -> f32 {
    ((d2 as f64).sqrt() / FIXED_UNITS_PER_MM) as f32
}

/// Exact rational x-coordinate of a parabola intersection, `num / den`, with
/// `den > 0`.
#[derive(Clone, Copy)]
enum Boundary {
    NegInf,
    At(i128, i128),
}

impl Boundary {
    /// `self <= other`
    fn le(self, other: Boundary) -> bool {
        match (self, other) {
            (Boundary::NegInf, _) => true,
            (_, Boundary::NegInf) => false,
            (Boundary::At(n1, d1), Boundary::At(n2, d2)) => n1 * d2 <= n2 * d1,
        }
    }

    /// `self < x` for an integer sample position.
    fn lt_int(self, x: i128) -> bool {
        match self {
            Boundary::NegInf => true,
            Boundary::At(n, d) => n < x * d,
        }
    }
}

/// One 1-D pass in place: `f[x] <- min_q f[q] + w * (x - q)^2`.
fn envelope_1d(f: &mut [i128], w: i128, vertices: &mut Vec<usize>, bounds: &mut Vec<Boundary>, out: &mut Vec<i128>) {
    vertices.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if fq == INF {
            continue;
        }
        let qi = q as i128;
        loop {
            let Some(&p) = vertices.last() else {
                vertices.push(q);
                bounds.push(Boundary::NegInf);
                break;
            };
            let pi = p as i128;
            let num = (fq + w * qi * qi) - (f[p] + w * pi * pi);
            let den = 2 * w * (qi - pi);
            let s = Boundary::At(num, den);
            if s.le(*bounds.last().expect("paired with vertices")) {
                vertices.pop();
                bounds.pop();
            } else {
                vertices.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if vertices.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for x in 0..f.len() {
        let xi = x as i128;
        while k + 1 < vertices.len() && bounds[k + 1].lt_int(xi) {
            k += 1;
        }
        let v = vertices[k] as i128;
        out.push(w * (xi - v) * (xi - v) + f[vertices[k]]);
    }
    f.copy_from_slice(out);
}

#[derive(Default)]
struct Scratch {
    line: Vec<i128>,
    vertices: Vec<usize>,
    bounds: Vec<Boundary>,
    out: Vec<i128>,
}

/// Squared distance (fixed-point units²) from every voxel to the nearest
/// voxel where `is_source` holds. Voxels are `INF` when no source exists.
fn squared_field(shape: Shape, spacing: Spacing, is_source: impl Fn(usize) -> bool + Sync) -> Vec<i128> {
    let [nz, ny, nx] = shape.as_array();
    let [wz, wy, wx] = quantize_spacing(spacing).map(|q| q * q);
    let mut d: Vec<i128> = (0..shape.len())
        .into_par_iter()
        .map(|i| if is_source(i) { 0 } else { INF })
        .collect();
    let slice = ny * nx;

    // x and y lines stay inside one z-slice, so slices are independent.
    d.par_chunks_mut(slice).for_each_init(Scratch::default, |s, plane| {
        for row in plane.chunks_mut(nx) {
            envelope_1d(row, wx, &mut s.vertices, &mut s.bounds, &mut s.out);
        }
        for x in 0..nx {
            s.line.clear();
            s.line.extend((0..ny).map(|y| plane[y * nx + x]));
            envelope_1d(&mut s.line, wy, &mut s.vertices, &mut s.bounds, &mut s.out);
            for (y, &v) in s.line.iter().enumerate() {
                plane[y * nx + x] = v;
            }
        }
    });

    // z lines: compute column-wise into a transposed buffer, then scatter.
    let columns: Vec<Vec<i128>> = (0..slice)
        .into_par_iter()
        .map_init(Scratch::default, |s, c| {
            let mut line: Vec<i128> = (0..nz).map(|z| d[z * slice + c]).collect();
            envelope_1d(&mut line, wz, &mut s.vertices, &mut s.bounds, &mut s.out);
            line
        })
        .collect();
    for (c, col) in columns.into_iter().enumerate() {
        for (z, v) in col.into_iter().enumerate() {
            d[z * slice + c] = v;
        }
    }
    d
}

/// Fixed-point squared distances to the nearest foreground voxel of `src`.
pub fn squared_edt_fixed(src: &MaskVolume, spacing: Spacing) -> Result<Vec<i128>> {
    if src.is_empty() {
        return Err(Error::EmptySource("distance transform needs at least one foreground voxel".into()));
    }
    let data = src.data();
    Ok(squared_field(src.shape(), spacing, |i| data[i]))
}

/// Distance in millimetres (per `spacing`) to the nearest foreground voxel.
pub fn edt_to_set(src: &MaskVolume, spacing: Spacing) -> Result<DistanceField> {
    let d2 = squared_edt_fixed(src, spacing)?;
    let values = Volume::new(src.shape(), src.spacing(), d2.into_iter().map(fixed_to_mm).collect())?
        .with_origin(src.origin());
    Ok(DistanceField {
        values,
        semantics: DistanceSemantics::DistanceToForeground,
    })
}

/// Fixed-point squared interior depth; the volume border counts as background.
pub fn squared_depth_fixed(mask: &MaskVolume, spacing: Spacing) -> Vec<i128> {
    if mask.is_empty() {
        return vec![0; mask.shape().len()];
    }
    // Embed in a one-voxel background frame so the border acts as background.
    let [nz, ny, nx] = mask.shape().as_array();
    let padded = Shape::new(nz + 2, ny + 2, nx + 2).expect("non-zero");
    let data = mask.data();
    let inner = mask.shape();
    let d2 = squared_field(padded, spacing, |i| {
        let [z, y, x] = padded.coords(i);
        let interior = (1..=nz).contains(&z) && (1..=ny).contains(&y) && (1..=nx).contains(&x);
        !(interior && data[inner.index([z - 1, y - 1, x - 1])])
    });
    (0..inner.len())
        .map(|i| {
            let [z, y, x] = inner.coords(i);
            d2[padded.index([z + 1, y + 1, x + 1])]
        })
        .collect()
}

/// Distance from each foreground voxel to the nearest background or outside
/// voxel; zero on background. An empty mask yields all zeros.
pub fn interior_depth(mask: &MaskVolume, spacing: Spacing) -> DistanceField {
    let d2 = squared_depth_fixed(mask, spacing);
    let values = mask
        .with_data(d2.into_iter().map(fixed_to_mm).collect())
        .expect("same grid");
    DistanceField {
        values,
        semantics: DistanceSemantics::InteriorDepth,
    }
}
