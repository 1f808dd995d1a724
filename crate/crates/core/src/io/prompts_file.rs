//! Click prompt interchange files (JSON).
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "case_id": "case_000",
//!   "space": "voxel",
//!   "foreground": [[12, 40, 33]],
//!   "background": [],
//!   "grid": {"shape": [64, 96, 96], "spacing": [3.0, 2.04, 2.04]}
//! }
//! ```
//!
//! Coordinates are (z, y, x). World coordinates are millimetres along the
//! same axes, mapped to voxels through the grid origin and spacing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::{ClickSet, Polarity};
use crate::volume::{Grid, VoxelIndex};

pub const PROMPTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateSpace {
    #[default]
    Voxel,
    World,
}

/// Shape and spacing the prompts were placed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFingerprint {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
}

impl GridFingerprint {
    pub fn of(grid: &Grid) -> Self {
        Self {
            shape: grid.shape.as_array(),
            spacing: grid.spacing.as_array(),
        }
    }

    /// Spacings compare with a relative tolerance of 1e-6 because NIfTI
    /// stores them as f32.
    pub fn matches(&self, grid: &Grid) -> bool {
        let sp = grid.spacing.as_array();
        self.shape == grid.shape.as_array()
            && self
                .spacing
                .iter()
                .zip(sp)
                .all(|(&a, b)| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsFile {
    pub format_version: u32,
    pub case_id: String,
    #[serde(default)]
    pub space: CoordinateSpace,
    #[serde(default)]
    pub foreground: Vec<[f64; 3]>,
    #[serde(default)]
    pub background: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridFingerprint>,
}

impl PromptsFile {
    /// Voxel-space file for `clicks`, with the grid fingerprint attached.
    pub fn from_clicks(case_id: &str, clicks: &ClickSet, grid: Option<&Grid>) -> Self {
        let conv = |ps: &[VoxelIndex]| ps.iter().map(|p| p.map(|c| c as f64)).collect();
        Self {
            format_version: PROMPTS_FORMAT_VERSION,
            case_id: case_id.to_string(),
            space: CoordinateSpace::Voxel,
            foreground: conv(clicks.foreground()),
            background: conv(clicks.background()),
            grid: grid.map(GridFingerprint::of),
        }
    }

    /// Resolves the file against `grid` into voxel clicks.
    pub fn to_clicks(&self, grid: &Grid) -> Result<ClickSet> {
        if self.format_version != PROMPTS_FORMAT_VERSION {
            return Err(Error::Unsupported(format!(
                "prompts format_version {} (expected {PROMPTS_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if let Some(fp) = &self.grid {
            if !fp.matches(grid) {
                return Err(Error::invalid(format!(
                    "prompts for case {:?} were placed on shape {:?} spacing {:?}, image has shape {:?} spacing {:?}",
                    self.case_id,
                    fp.shape,
                    fp.spacing,
                    grid.shape.as_array(),
                    grid.spacing.as_array()
                )));
            }
        }
        let mut out = ClickSet::default();
        for (polarity, coords) in [(Polarity::Foreground, &self.foreground), (Polarity::Background, &self.background)] {
            for (index, &c) in coords.iter().enumerate() {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{polarity} click {index} has non-finite coordinate {c:?}")));
                }
                let v = match self.space {
                    CoordinateSpace::Voxel => {
                        if c.iter().any(|v| v.fract() != 0.0) {
                            return Err(Error::invalid(format!(
                                "{polarity} click {index} has non-integer voxel coordinate {c:?}"
                            )));
                        }
                        c
                    }
                    // f64::round rounds half away from zero
                    CoordinateSpace::World => grid.world_to_voxel(c).map(f64::round),
                };
                let signed = v.map(|x| x.clamp(i64::MIN as f64, i64::MAX as f64) as i64);
                let Some(pos) = grid.shape.checked(signed) else {
                    return Err(Error::ClickOutOfBounds {
                        index,
                        polarity,
                        position: signed,
                        shape: grid.shape.as_array(),
                    });
                };
                out.push(polarity, pos)
                    .map_err(|e| Error::invalid(format!("{polarity} click {index}: {e}")))?;
            }
        }
        Ok(out)
    }
}

pub fn parse_prompts(text: &str) -> Result<PromptsFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_prompts_file(path: impl AsRef<Path>) -> Result<PromptsFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_prompts(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_prompts(path: impl AsRef<Path>, grid: &Grid) -> Result<ClickSet> {
    read_prompts_file(path)?.to_clicks(grid)
}

pub fn write_prompts(path: impl AsRef<Path>, file: &PromptsFile) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}
