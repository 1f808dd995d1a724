//! Synthetic PET/CT cases for demos, benches and trend checks.
//!
//! A phantom holds multi-blob lesions (the ground truth) and distractor
//! uptake that is not lesion, on a noisy low background. Lesion peaks span
//! the automatic threshold of the reference backend, so automatic mode both
//! misses lesions and picks up distractors. Distractors sit a few voxels off
//! a lesion, where background clicks tend to land, separated from it by at
//! least one background voxel in every direction.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edt::edt_to_set;
use crate::error::{Error, Result};
use crate::harness::LoadedCase;
use crate::io::nifti::{write_mask, write_nifti, NiftiDtype};
use crate::simulate::case_rng;
use crate::volume::{normalize_ct, CtNormalization, MaskVolume, Shape, Spacing, Volume3, CHALLENGE_SPACING};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background: f32,
    pub noise: f32,
    pub lesions: [usize; 2],
    pub blobs_per_lesion: [usize; 2],
    pub lesion_radius_mm: [f64; 2],
    pub lesion_peak: [f32; 2],
    pub distractors: [usize; 2],
    pub distractor_radius_mm: [f64; 2],
    pub distractor_peak: [f32; 2],
    /// Euclidean voxel distance between distractor and lesion voxels.
    pub distractor_gap_vox: [f64; 2],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [24, 40, 40],
            spacing: CHALLENGE_SPACING,
            background: 0.3,
            noise: 0.05,
            lesions: [1, 3],
            blobs_per_lesion: [1, 3],
            lesion_radius_mm: [4.0, 9.0],
            lesion_peak: [1.2, 6.0],
            distractors: [1, 2],
            distractor_radius_mm: [5.0, 8.0],
            distractor_peak: [3.0, 6.0],
            distractor_gap_vox: [2.0, 4.0],
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        Shape::from_array(self.shape)?;
        Spacing::from_array(self.spacing)?;
        let range = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("phantom {name} range is empty or invalid")))
            }
        };
        range("lesions", 1 <= self.lesions[0] && self.lesions[0] <= self.lesions[1])?;
        range("blobs_per_lesion", 1 <= self.blobs_per_lesion[0] && self.blobs_per_lesion[0] <= self.blobs_per_lesion[1])?;
        range("distractors", self.distractors[0] <= self.distractors[1])?;
        range("lesion_radius_mm", 0.0 < self.lesion_radius_mm[0] && self.lesion_radius_mm[0] <= self.lesion_radius_mm[1])?;
        range(
            "distractor_radius_mm",
            0.0 < self.distractor_radius_mm[0] && self.distractor_radius_mm[0] <= self.distractor_radius_mm[1],
        )?;
        range("lesion_peak", 0.0 < self.lesion_peak[0] && self.lesion_peak[0] <= self.lesion_peak[1])?;
        range("distractor_peak", 0.0 < self.distractor_peak[0] && self.distractor_peak[0] <= self.distractor_peak[1])?;
        range(
            "distractor_gap_vox",
            2.0 <= self.distractor_gap_vox[0] && self.distractor_gap_vox[0] <= self.distractor_gap_vox[1],
        )?;
        range("noise", self.noise >= 0.0 && self.noise < self.background)
    }
}

/// One generated case; CT is in Hounsfield units.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub case_id: String,
    pub pet: Volume3,
    pub ct_hu: Volume3,
    pub gt: MaskVolume,
}

impl Phantom {
    pub fn into_loaded(self, ct_norm: &CtNormalization) -> Result<LoadedCase> {
        Ok(LoadedCase {
            ct: Some(normalize_ct(&self.ct_hu, ct_norm)?),
            case_id: self.case_id,
            pet: self.pet,
            gt: Some(self.gt),
            prompts: None,
        })
    }

    /// Writes `<root>/<case_id>/{pet,ct,gt}.nii.gz`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = root.join(&self.case_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        write_nifti(&self.pet, dir.join("pet.nii.gz"), NiftiDtype::F32, false)?;
        write_nifti(&self.ct_hu, dir.join("ct.nii.gz"), NiftiDtype::I16, false)?;
        write_mask(&self.gt, dir.join("gt.nii.gz"))
    }
}

struct Blob {
    center: [f64; 3],
    radius_mm: f64,
    peak: f32,
}

impl Blob {
    /// Quadratic dome, 1 at the centre down to 0.6 at the rim; None outside.
    fn profile(&self, p: [f64; 3], spacing: [f64; 3]) -> Option<f32> {
        let r2: f64 = (0..3).map(|a| ((p[a] - self.center[a]) * spacing[a]).powi(2)).sum();
        let u = r2 / (self.radius_mm * self.radius_mm);
        (u <= 1.0).then(|| self.peak * (1.0 - 0.4 * u as f32))
    }
}

fn uniform_f64(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn uniform_f32(rng: &mut ChaCha8Rng, r: [f32; 2]) -> f32 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn paint(values: &mut [f32], shape: Shape, spacing: [f64; 3], blob: &Blob, mut hit: impl FnMut(usize)) {
    for i in 0..shape.len() {
        let p = shape.coords(i).map(|c| c as f64);
        if let Some(v) = blob.profile(p, spacing) {
            if v > values[i] {
                values[i] = v;
            }
            hit(i);
        }
    }
}

const MAX_PLACEMENT_TRIES: usize = 200;

pub fn generate_phantom(cfg: &PhantomConfig, seed: u64, case_id: &str) -> Result<Phantom> {
    cfg.validate()?;
    let shape = Shape::from_array(cfg.shape)?;
    let spacing = Spacing::from_array(cfg.spacing)?;
    let sp = cfg.spacing;
    let dims = cfg.shape.map(|d| d as f64);
    let mut rng = case_rng(seed, case_id);

    // lesion blobs, kept one radius inside the volume where possible
    let mut lesion_vals = vec![0.0f32; shape.len()];
    let mut gt = vec![false; shape.len()];
    let n_lesions = rng.random_range(cfg.lesions[0]..=cfg.lesions[1]);
    for _ in 0..n_lesions {
        let radius = uniform_f64(&mut rng, cfg.lesion_radius_mm);
        let peak = uniform_f32(&mut rng, cfg.lesion_peak);
        let margin: [f64; 3] = std::array::from_fn(|a| (radius / sp[a]).min(dims[a] / 2.0 - 0.5));
        let center: [f64; 3] = std::array::from_fn(|a| uniform_f64(&mut rng, [margin[a], dims[a] - 1.0 - margin[a]]));
        let blobs = rng.random_range(cfg.blobs_per_lesion[0]..=cfg.blobs_per_lesion[1]);
        for b in 0..blobs {
            let c = if b == 0 {
                center
            } else {
                std::array::from_fn(|a| {
                    let off = rng.random_range(-0.7..0.7) * radius / sp[a];
                    (center[a] + off).clamp(0.0, dims[a] - 1.0)
                })
            };
            let blob = Blob {
                center: c,
                radius_mm: radius * if b == 0 { 1.0 } else { rng.random_range(0.5..0.9) },
                peak,
            };
            paint(&mut lesion_vals, shape, sp, &blob, |i| gt[i] = true);
        }
    }
    let gt = MaskVolume::new(shape, spacing, gt)?;

    // distractor uptake a few voxels away from every lesion voxel
    let mut distractor_vals = vec![0.0f32; shape.len()];
    if !gt.is_empty() {
        let dist = edt_to_set(&gt, Spacing::UNIT)?;
        let n = rng.random_range(cfg.distractors[0]..=cfg.distractors[1]);
        for _ in 0..n {
            for _ in 0..MAX_PLACEMENT_TRIES {
                let radius = uniform_f64(&mut rng, cfg.distractor_radius_mm);
                let center: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.0..dims[a] - 1.0));
                let blob = Blob {
                    center,
                    radius_mm: radius,
                    peak: uniform_f32(&mut rng, cfg.distractor_peak),
                };
                let nearest = (0..shape.len())
                    .filter(|&i| blob.profile(shape.coords(i).map(|c| c as f64), sp).is_some())
                    .map(|i| dist.data()[i] as f64)
                    .fold(f64::INFINITY, f64::min);
                let [gap_lo, gap_hi] = cfg.distractor_gap_vox;
                if (gap_lo..=gap_hi).contains(&nearest) {
                    paint(&mut distractor_vals, shape, sp, &blob, |_| {});
                    break;
                }
            }
        }
    }

    let noise = cfg.noise;
    let pet: Vec<f32> = (0..shape.len())
        .map(|i| {
            let base = cfg.background + if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
            base.max(lesion_vals[i]).max(distractor_vals[i])
        })
        .collect();
    let pet = Volume3::new(shape, spacing, pet)?;

    // CT: soft-tissue ellipse in air, lesions slightly denser
    let [_, ny, nx] = cfg.shape;
    let ct: Vec<f32> = (0..shape.len())
        .map(|i| {
            let [_, y, x] = shape.coords(i);
            let u = (y as f64 + 0.5 - ny as f64 / 2.0) / (0.45 * ny as f64);
            let v = (x as f64 + 0.5 - nx as f64 / 2.0) / (0.45 * nx as f64);
            if u * u + v * v > 1.0 {
                -1000.0
            } else if gt.data()[i] {
                60.0
            } else {
                20.0
            }
        })
        .collect();
    let ct_hu = Volume3::new(shape, spacing, ct)?;
    Ok(Phantom {
        case_id: case_id.to_string(),
        pet,
        ct_hu,
        gt,
    })
}

pub fn generate_case(cfg: &PhantomConfig, seed: u64, case_id: &str) -> Result<LoadedCase> {
    generate_phantom(cfg, seed, case_id)?.into_loaded(&CtNormalization::default())
}

pub fn cohort_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("phantom_{i:03}")).collect()
}

pub fn generate_cohort(cfg: &PhantomConfig, seed: u64, n: usize) -> Result<Vec<LoadedCase>> {
    cohort_ids(n).iter().map(|id| generate_case(cfg, seed, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{connected_components, Connectivity};

    #[test]
    fn deterministic_per_seed_and_id() {
        let cfg = PhantomConfig::default();
        let a = generate_phantom(&cfg, 1, "x").unwrap();
        let b = generate_phantom(&cfg, 1, "x").unwrap();
        assert_eq!(a.pet, b.pet);
        assert_eq!(a.gt, b.gt);
        let c = generate_phantom(&cfg, 2, "x").unwrap();
        assert_ne!(a.pet, c.pet);
    }

    #[test]
    fn lesions_are_gt_and_distractors_are_separated() {
        let cfg = PhantomConfig::default();
        for id in cohort_ids(10) {
            let p = generate_phantom(&cfg, 0, &id).unwrap();
            assert!(!p.gt.is_empty());
            let hot = p.pet.map(|v| v > cfg.background + cfg.noise);
            // no hot component mixes lesion and non-lesion voxels
            let lab = connected_components(&hot, Connectivity::TwentySix);
            let mut kind = vec![None; lab.components.len() + 1];
            for (i, &l) in lab.labels.data().iter().enumerate() {
                if l == 0 {
                    continue;
                }
                let g = p.gt.data()[i];
                match kind[l as usize] {
                    None => kind[l as usize] = Some(g),
                    Some(k) => assert_eq!(k, g, "{id}: component {l} mixes lesion and distractor"),
                }
            }
            // every lesion voxel is hot
            assert!(p.gt.data().iter().zip(hot.data()).all(|(&g, &h)| !g || h));
        }
    }

    #[test]
    fn cohort_has_distractors_and_missed_lesions() {
        let cfg = PhantomConfig::default();
        let cases = generate_cohort(&cfg, 0, 20).unwrap();
        let distractor = cases.iter().any(|c| {
            let gt = c.gt.as_ref().unwrap();
            c.pet.data().iter().zip(gt.data()).any(|(&v, &g)| !g && v >= 2.5)
        });
        assert!(distractor);
        let quiet = cases.iter().any(|c| {
            let gt = c.gt.as_ref().unwrap();
            gt.foreground().any(|i| c.pet.data()[i] < 2.5)
        });
        assert!(quiet);
    }

    #[test]
    fn write_layout() {
        let dir = tempfile::tempdir().unwrap();
        generate_phantom(&PhantomConfig::default(), 0, "c").unwrap().write(dir.path()).unwrap();
        for f in ["pet.nii.gz", "ct.nii.gz", "gt.nii.gz"] {
            assert!(dir.path().join("c").join(f).is_file());
        }
    }
}
