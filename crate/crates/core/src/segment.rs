//! The promptable segmenter contract and its backends.
//!
//! A backend maps an image plus prompt channels to a probability map and
//! must return a valid map when no clicks are given (automatic mode). The
//! built-in reference backend is deterministic region growing on PET:
//!
//! 1. components of `PET >= auto_threshold` at least `min_component_vol_mm3`
//!    large get probability 0.9;
//! 2. every foreground click grows a region over voxels with
//!    `PET >= grow_fraction * reference`, raised to at least 0.95;
//! 3. every component of `{p >= 0.5}` that holds a background click drops
//!    to 0.05.
//!
//! Everything else is 0.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{connected_components, Connectivity};
use crate::prompts::ClickSet;
use crate::volume::{MaskVolume, Volume3, VoxelIndex};

pub const AUTO_PROBABILITY: f32 = 0.9;
pub const GROWN_PROBABILITY: f32 = 0.95;
pub const SUPPRESSED_PROBABILITY: f32 = 0.05;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// A voxelwise foreground probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(Volume3);

impl ProbabilityMap {
    pub fn new(v: Volume3) -> Result<Self> {
        if let Some((i, p)) = v.data().iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!(
                "probability at voxel {:?} is {p}, outside [0, 1]",
                v.shape().coords(i)
            )));
        }
        Ok(Self(v))
    }

    pub fn volume(&self) -> &Volume3 {
        &self.0
    }

    pub fn into_volume(self) -> Volume3 {
        self.0
    }

    pub fn get(&self, p: VoxelIndex) -> f32 {
        self.0.get(p)
    }
}

pub struct SegmenterInput<'a> {
    pub pet: &'a Volume3,
    pub ct: Option<&'a Volume3>,
    pub fg_channel: &'a Volume3,
    pub bg_channel: &'a Volume3,
    /// Raw click coordinates, for backends that prefer them over channels.
    pub clicks: &'a ClickSet,
}

impl SegmenterInput<'_> {
    pub fn validate(&self) -> Result<()> {
        if let Some(ct) = self.ct {
            self.pet.ensure_same_grid(ct, "segmenter input (ct)")?;
        }
        self.pet.ensure_same_grid(self.fg_channel, "segmenter input (fg channel)")?;
        self.pet.ensure_same_grid(self.bg_channel, "segmenter input (bg channel)")?;
        self.clicks.check_bounds(&self.pet.grid())
    }
}

pub trait PromptableSegmenter: Send + Sync {
    fn name(&self) -> &str;

    /// `case_id` lets file-backed segmenters locate their outputs; others
    /// ignore it.
    fn segment(&self, case_id: &str, input: &SegmenterInput<'_>) -> Result<ProbabilityMap>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefSegParams {
    /// PET value at or above which automatic mode marks uptake.
    pub auto_threshold: f64,
    /// Fraction of the seed reference intensity a grown voxel must reach.
    pub grow_fraction: f64,
    pub min_component_vol_mm3: f64,
    /// Chebyshev radius around a click used to find its reference intensity.
    pub seed_radius_vox: usize,
    pub connectivity: Connectivity,
}

impl Default for RefSegParams {
    fn default() -> Self {
        Self {
            auto_threshold: 2.5,
            grow_fraction: 0.41,
            min_component_vol_mm3: 50.0,
            seed_radius_vox: 1,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl RefSegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.grow_fraction > 0.0 && self.grow_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "grow_fraction must lie in (0, 1), got {}",
                self.grow_fraction
            )));
        }
        if !self.auto_threshold.is_finite() {
            return Err(Error::invalid("auto_threshold must be finite"));
        }
        if !(self.min_component_vol_mm3 >= 0.0) {
            return Err(Error::invalid("min_component_vol_mm3 must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceSegmenter {
    pub params: RefSegParams,
}

impl ReferenceSegmenter {
    pub fn new(params: RefSegParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    fn seed_reference(&self, pet: &Volume3, c: VoxelIndex) -> f32 {
        let r = self.params.seed_radius_vox as i64;
        let shape = pet.shape();
        let mut best = pet.get(c);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let q = [c[0] as i64 + dz, c[1] as i64 + dy, c[2] as i64 + dx];
                    if let Some(q) = shape.checked(q) {
                        best = best.max(pet.get(q));
                    }
                }
            }
        }
        best
    }

    /// Voxels reached from `c` through voxels at or above the growth
    /// threshold; always contains `c`.
    pub fn grow(&self, pet: &Volume3, c: VoxelIndex) -> Vec<usize> {
        let shape = pet.shape();
        let start = shape.index(c);
        let reference = self.seed_reference(pet, c);
        if !(reference > 0.0) {
            return vec![start];
        }
        let floor = self.params.grow_fraction * reference as f64;
        let offsets = self.params.connectivity.offsets();
        let mut seen = vec![false; shape.len()];
        let mut region = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            region.push(i);
            let p = shape.coords(i);
            for o in &offsets {
                let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
                if let Some(q) = shape.checked(q) {
                    let j = shape.index(q);
                    if !seen[j] && pet.data()[j] as f64 >= floor {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        region
    }

    /// Automatic-mode probability: qualifying uptake components at 0.9.
    pub fn auto_map(&self, pet: &Volume3) -> Vec<f32> {
        let hot = pet.map(|v| v as f64 >= self.params.auto_threshold);
        let lab = connected_components(&hot, self.params.connectivity);
        let keep: Vec<bool> = std::iter::once(false)
            .chain(lab.components.iter().map(|c| c.volume_mm3 >= self.params.min_component_vol_mm3))
            .collect();
        lab.labels
            .data()
            .iter()
            .map(|&l| if keep[l as usize] { AUTO_PROBABILITY } else { 0.0 })
            .collect()
    }

    /// Reference segmentation from PET and raw clicks.
    pub fn run(&self, pet: &Volume3, clicks: &ClickSet) -> Result<ProbabilityMap> {
        clicks.check_bounds(&pet.grid())?;
        let shape = pet.shape();
        let mut prob = self.auto_map(pet);

        for &c in clicks.foreground() {
            for i in self.grow(pet, c) {
                prob[i] = prob[i].max(GROWN_PROBABILITY);
            }
        }

        if !clicks.background().is_empty() {
            let above = pet.with_data(prob.iter().map(|&p| p as f64 >= DEFAULT_THRESHOLD).collect())?;
            let lab = connected_components(&above, self.params.connectivity);
            let mut suppress = vec![false; lab.components.len() + 1];
            for &b in clicks.background() {
                suppress[lab.label_at(shape.index(b)) as usize] = true;
            }
            suppress[0] = false;
            for (p, &l) in prob.iter_mut().zip(lab.labels.data()) {
                if suppress[l as usize] {
                    *p = SUPPRESSED_PROBABILITY;
                }
            }
        }
        ProbabilityMap::new(pet.with_data(prob)?)
    }
}

impl PromptableSegmenter for ReferenceSegmenter {
    fn name(&self) -> &str {
        "reference"
    }

    fn segment(&self, _case_id: &str, input: &SegmenterInput<'_>) -> Result<ProbabilityMap> {
        input.validate()?;
        self.run(input.pet, input.clicks)
    }
}

/// Reads precomputed probability maps from
/// `<dir>/<case_id>/prob_b<n>.nii[.gz]`, where `n` is the larger of the
/// foreground and background click counts.
#[derive(Debug, Clone)]
pub struct ExternalSegmenter {
    pub dir: PathBuf,
}

impl ExternalSegmenter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn map_path(dir: &Path, case_id: &str, clicks: usize) -> Option<PathBuf> {
        ["nii.gz", "nii"]
            .iter()
            .map(|ext| dir.join(case_id).join(format!("prob_b{clicks}.{ext}")))
            .find(|p| p.is_file())
    }
}

impl PromptableSegmenter for ExternalSegmenter {
    fn name(&self) -> &str {
        "external"
    }

    fn segment(&self, case_id: &str, input: &SegmenterInput<'_>) -> Result<ProbabilityMap> {
        input.validate()?;
        let n = input.clicks.foreground().len().max(input.clicks.background().len());
        let path = Self::map_path(&self.dir, case_id, n).ok_or_else(|| {
            Error::invalid(format!(
                "no precomputed probability map for case {case_id} at {n} clicks under {}",
                self.dir.display()
            ))
        })?;
        let v = crate::io::nifti::read_nifti(&path)?;
        input.pet.ensure_same_grid(&v, "external probability map")?;
        ProbabilityMap::new(v.with_origin(input.pet.origin()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum BackendConfig {
    Reference(RefSegParams),
    External { dir: PathBuf },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Reference(RefSegParams::default())
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn PromptableSegmenter>> {
        Ok(match self {
            BackendConfig::Reference(p) => Box::new(ReferenceSegmenter::new(*p)?),
            BackendConfig::External { dir } => Box::new(ExternalSegmenter::new(dir.clone())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Reference(_) => "reference",
            BackendConfig::External { .. } => "external",
        }
    }
}

/// `prob >= t` (voxels exactly at `t` are foreground).
pub fn threshold(prob: &ProbabilityMap, t: f64) -> Result<MaskVolume> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {t}")));
    }
    Ok(prob.0.map(|p| p as f64 >= t))
}

/// Voxelwise mean of probability maps on one grid.
pub fn ensemble(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("ensemble needs at least one map"))?;
    for m in &maps[1..] {
        first.0.ensure_same_grid(&m.0, "ensemble")?;
    }
    let n = maps.len() as f64;
    let data = (0..first.0.shape().len())
        .map(|i| {
            let sum: f64 = maps.iter().map(|m| m.0.data()[i] as f64).sum();
            ((sum / n) as f32).clamp(0.0, 1.0)
        })
        .collect();
    ProbabilityMap::new(first.0.with_data(data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fp_volume;
    use crate::volume::{Shape, Spacing};

    fn blob_pet(shape: Shape, spacing: Spacing, blobs: &[([usize; 3], usize, f32)]) -> Volume3 {
        let mut v = Volume3::zeros(shape, spacing);
        for i in 0..shape.len() {
            let p = shape.coords(i);
            for &(c, r, val) in blobs {
                if (0..3).all(|a| p[a].abs_diff(c[a]) <= r) {
                    v.data_mut()[i] = val;
                }
            }
        }
        v
    }

    fn seg() -> ReferenceSegmenter {
        ReferenceSegmenter::default()
    }

    #[test]
    fn zero_pet_zero_clicks_is_zero() {
        let pet = Volume3::zeros(Shape::cube(6).unwrap(), Spacing::UNIT);
        let p = seg().run(&pet, &ClickSet::default()).unwrap();
        assert!(p.volume().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn auto_mode_finds_blob_above_threshold() {
        let pet = blob_pet(Shape::cube(16).unwrap(), Spacing::challenge(), &[([8, 8, 8], 2, 5.0)]);
        let p = seg().run(&pet, &ClickSet::default()).unwrap();
        let on = p.volume().data().iter().filter(|&&v| v == AUTO_PROBABILITY).count();
        assert_eq!(on, 125);
        assert!(p.volume().data().iter().all(|&v| v == 0.0 || v == AUTO_PROBABILITY));
    }

    #[test]
    fn tiny_components_are_dropped() {
        let pet = blob_pet(Shape::cube(10).unwrap(), Spacing::UNIT, &[([5, 5, 5], 0, 9.0)]);
        let p = seg().run(&pet, &ClickSet::default()).unwrap();
        assert_eq!(p.volume().sum(), 0.0);
    }

    #[test]
    fn fg_click_is_always_included() {
        let pet = Volume3::zeros(Shape::cube(6).unwrap(), Spacing::UNIT);
        let clicks = ClickSet::new(vec![[2, 3, 4]], vec![]).unwrap();
        let p = seg().run(&pet, &clicks).unwrap();
        assert!(p.get([2, 3, 4]) >= 0.5);
        assert_eq!(p.volume().data().iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn fg_click_grows_faint_lesion() {
        let pet = blob_pet(Shape::cube(16).unwrap(), Spacing::UNIT, &[([8, 8, 8], 2, 1.5)]);
        assert_eq!(seg().run(&pet, &ClickSet::default()).unwrap().volume().sum(), 0.0);
        let clicks = ClickSet::new(vec![[8, 8, 8]], vec![]).unwrap();
        let p = seg().run(&pet, &clicks).unwrap();
        let grown = p.volume().data().iter().filter(|&&v| v == GROWN_PROBABILITY).count();
        assert_eq!(grown, 125);
    }

    #[test]
    fn bg_click_removes_component_and_its_fp_volume() {
        let sp = Spacing::challenge();
        let shape = Shape::cube(20).unwrap();
        let pet = blob_pet(shape, sp, &[([5, 5, 5], 2, 6.0), ([14, 14, 14], 2, 6.0)]);
        let gt = pet.map(|v| v > 0.0);
        let mut gt_only_first = gt.clone();
        for i in 0..shape.len() {
            if shape.coords(i)[0] > 10 {
                gt_only_first.data_mut()[i] = false;
            }
        }
        let before = threshold(&seg().run(&pet, &ClickSet::default()).unwrap(), 0.5).unwrap();
        let clicks = ClickSet::new(vec![], vec![[14, 14, 14]]).unwrap();
        let after_map = seg().run(&pet, &clicks).unwrap();
        assert_eq!(after_map.get([13, 13, 13]), SUPPRESSED_PROBABILITY);
        assert_eq!(after_map.get([5, 5, 5]), AUTO_PROBABILITY);
        let after = threshold(&after_map, 0.5).unwrap();
        let c = Connectivity::TwentySix;
        let fp_before = fp_volume(&before, &gt_only_first, sp, c).unwrap();
        let fp_after = fp_volume(&after, &gt_only_first, sp, c).unwrap();
        // removed component: a 5^3 block
        let comp = connected_components(&before, c);
        let removed = comp.components.iter().find(|k| k.label == comp.label_at(shape.index([14, 14, 14]))).unwrap();
        assert!((fp_before - fp_after - removed.volume_mm3).abs() < 1e-9);
        assert_eq!(removed.voxels, 125);
    }

    #[test]
    fn bg_click_on_background_changes_nothing() {
        let pet = blob_pet(Shape::cube(16).unwrap(), Spacing::UNIT, &[([8, 8, 8], 2, 5.0)]);
        let base = seg().run(&pet, &ClickSet::default()).unwrap();
        let clicks = ClickSet::new(vec![], vec![[0, 0, 0]]).unwrap();
        assert_eq!(seg().run(&pet, &clicks).unwrap(), base);
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let shape = Shape::cube(2).unwrap();
        let m = |v| ProbabilityMap::new(Volume3::filled(shape, Spacing::UNIT, v)).unwrap();
        assert!(threshold(&m(0.9), 0.5).unwrap().data().iter().all(|&b| b));
        assert!(threshold(&m(0.05), 0.5).unwrap().data().iter().all(|&b| !b));
        assert!(threshold(&m(0.5), 0.5).unwrap().data().iter().all(|&b| b));
        assert!(threshold(&m(0.5), 1.0).is_err());
    }

    #[test]
    fn ensemble_examples() {
        let shape = Shape::new(1, 1, 3).unwrap();
        let a = ProbabilityMap::new(Volume3::new(shape, Spacing::UNIT, vec![0.2, 0.3, 0.7]).unwrap()).unwrap();
        let b = ProbabilityMap::new(Volume3::new(shape, Spacing::UNIT, vec![0.8, 0.3, 0.1]).unwrap()).unwrap();
        assert_eq!(ensemble(&[a.clone()]).unwrap(), a);
        assert_eq!(ensemble(&[a.clone(), b.clone()]).unwrap().get([0, 0, 0]), 0.5);
        assert_eq!(ensemble(&[a.clone(), b.clone()]).unwrap(), ensemble(&[b.clone(), a.clone()]).unwrap());
        let ten = vec![b.clone(); 10];
        assert_eq!(ensemble(&ten).unwrap(), b);
        assert!(ensemble(&[]).is_err());
        let other = ProbabilityMap::new(Volume3::zeros(Shape::cube(1).unwrap(), Spacing::UNIT)).unwrap();
        assert!(ensemble(&[a, other]).is_err());
    }

    #[test]
    fn probability_map_rejects_out_of_range() {
        let v = Volume3::filled(Shape::cube(1).unwrap(), Spacing::UNIT, 1.5);
        assert!(ProbabilityMap::new(v).is_err());
    }

    #[test]
    fn segment_contract_checks_grids() {
        let pet = Volume3::zeros(Shape::cube(4).unwrap(), Spacing::UNIT);
        let bad = Volume3::zeros(Shape::cube(3).unwrap(), Spacing::UNIT);
        let clicks = ClickSet::default();
        let input = SegmenterInput { pet: &pet, ct: None, fg_channel: &bad, bg_channel: &pet, clicks: &clicks };
        assert!(matches!(seg().segment("c", &input), Err(Error::InvalidArgument(_))));
    }
}
