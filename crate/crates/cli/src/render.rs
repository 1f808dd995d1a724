//! Slice extraction, windowing and PNG encoding.
//!
//! Image rows and columns per axis: `z` slices are (y, x), `y` slices are
//! (z, x), `x` slices are (z, y).

use lesionprompt_core::{Shape, Volume};

pub const OVERLAY_ALPHA: f32 = 0.4;
pub const OVERLAY_COLOR: [u8; 3] = [255, 64, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Z,
    Y,
    X,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "z" | "axial" => Ok(Axis::Z),
            "y" | "coronal" => Ok(Axis::Y),
            "x" | "sagittal" => Ok(Axis::X),
            other => Err(format!("unknown axis {other:?}, expected z, y or x")),
        }
    }
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }

    /// (rows, cols) of a slice.
    pub fn slice_dims(self, shape: Shape) -> (usize, usize) {
        let [nz, ny, nx] = shape.as_array();
        match self {
            Axis::Z => (ny, nx),
            Axis::Y => (nz, nx),
            Axis::X => (nz, ny),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f32,
    pub hi: f32,
}

impl Window {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| format!("window {s:?} is not lo,hi"))?;
        let parse = |v: &str| v.trim().parse::<f32>().map_err(|_| format!("window bound {v:?} is not a number"));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(format!("window needs finite lo < hi, got {lo},{hi}"));
        }
        Ok(Self { lo, hi })
    }

    /// Full value range of `v` (one unit wide for constant volumes).
    pub fn full(range: (f32, f32)) -> Self {
        let (lo, hi) = range;
        if hi > lo {
            Self { lo, hi }
        } else {
            Self { lo, hi: lo + 1.0 }
        }
    }

    pub fn apply(&self, v: f32) -> u8 {
        let t = ((v as f64 - self.lo as f64) / (self.hi as f64 - self.lo as f64) * 255.0).round();
        t.clamp(0.0, 255.0) as u8
    }
}

/// Row-major values of slice `index` along `axis`; None if out of range.
pub fn slice_values<T: Copy>(v: &Volume<T>, axis: Axis, index: usize) -> Option<Vec<T>> {
    let shape = v.shape();
    if index >= shape.as_array()[axis.index()] {
        return None;
    }
    let (rows, cols) = axis.slice_dims(shape);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = match axis {
                Axis::Z => [index, r, c],
                Axis::Y => [r, index, c],
                Axis::X => [r, c, index],
            };
            out.push(v.get(p));
        }
    }
    Some(out)
}

pub fn grayscale(values: &[f32], window: Window) -> Vec<u8> {
    values.iter().map(|&v| window.apply(v)).collect()
}

/// RGBA composite of a grayscale slice and an optional mask.
pub fn overlay(gray: &[u8], mask: Option<&[bool]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(gray.len() * 4);
    for (i, &g) in gray.iter().enumerate() {
        if mask.is_some_and(|m| m[i]) {
            for c in OVERLAY_COLOR {
                let v = (1.0 - OVERLAY_ALPHA) * g as f32 + OVERLAY_ALPHA * c as f32;
                out.push(v.round() as u8);
            }
        } else {
            out.extend([g, g, g]);
        }
        out.push(255);
    }
    out
}

pub fn encode_png(width: usize, height: usize, rgba: bool, data: &[u8]) -> Result<Vec<u8>, png::EncodingError> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(if rgba { png::ColorType::Rgba } else { png::ColorType::Grayscale });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(data)?;
        w.finish()?;
    }
    Ok(bytes)
}
