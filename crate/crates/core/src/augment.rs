//! Training-sample pipeline: PET/CT misalignment, patch sampling with
//! foreground oversampling, then click simulation inside the patch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::LoadedCase;
use crate::prompts::{build_prompt_channels, ClickSet, EncodingSpec};
use crate::simulate::{simulate_clicks, SimConfig};
use crate::volume::{extract_patch, misalign, MaskVolume, Volume3, DEFAULT_PATCH_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// PET shift drawn uniformly from `[-max, max]` mm per axis.
    pub misalign_max_mm: f64,
    /// Chance of centring the patch on a ground-truth voxel.
    pub fg_oversample: f64,
    pub patch_size: [usize; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            misalign_max_mm: 6.0,
            fg_oversample: 0.33,
            patch_size: DEFAULT_PATCH_SIZE,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.misalign_max_mm.is_finite() && self.misalign_max_mm >= 0.0) {
            return Err(Error::invalid(format!("misalign_max_mm must be >= 0, got {}", self.misalign_max_mm)));
        }
        if !(0.0..=1.0).contains(&self.fg_oversample) {
            return Err(Error::invalid(format!("fg_oversample must lie in [0, 1], got {}", self.fg_oversample)));
        }
        if self.patch_size.contains(&0) {
            return Err(Error::invalid("patch_size components must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub pet: Volume3,
    pub ct: Option<Volume3>,
    pub gt: MaskVolume,
    pub fg_channel: Volume3,
    pub bg_channel: Volume3,
    /// Clicks in patch coordinates.
    pub clicks: ClickSet,
    /// Source index of patch voxel `[0, 0, 0]`.
    pub offset: [i64; 3],
    pub misalign_mm: [f64; 3],
    pub centred_on_foreground: bool,
}

pub fn sample_training_patch<R: Rng + ?Sized>(
    case: &LoadedCase,
    aug: &AugmentConfig,
    sim: &SimConfig,
    encoding: &EncodingSpec,
    rng: &mut R,
) -> Result<TrainingSample> {
    aug.validate()?;
    let gt = case
        .gt
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("case {} has no ground truth", case.case_id)))?;
    let m = aug.misalign_max_mm;
    let misalign_mm: [f64; 3] = std::array::from_fn(|_| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 });
    let pet = misalign(&case.pet, misalign_mm)?;

    let shape = pet.shape();
    let fg: Vec<usize> = gt.foreground().collect();
    let centred_on_foreground = !fg.is_empty() && rng.random_bool(aug.fg_oversample);
    let centre = if centred_on_foreground {
        shape.coords(fg[rng.random_range(0..fg.len())])
    } else {
        shape.coords(rng.random_range(0..shape.len()))
    };

    let pet_patch = extract_patch(&pet, centre, aug.patch_size, pet.min_max().0)?;
    let ct = match &case.ct {
        Some(ct) => Some(extract_patch(ct, centre, aug.patch_size, ct.min_max().0)?.volume),
        None => None,
    };
    let gt_patch = extract_patch(gt, centre, aug.patch_size, false)?.volume;
    let clicks = simulate_clicks(&gt_patch, sim, rng)?;
    let grid = pet_patch.volume.grid();
    let (fg_channel, bg_channel) = build_prompt_channels(&clicks, encoding, grid)?;
    Ok(TrainingSample {
        pet: pet_patch.volume,
        ct,
        gt: gt_patch,
        fg_channel,
        bg_channel,
        clicks,
        offset: pet_patch.offset,
        misalign_mm,
        centred_on_foreground,
    })
}
