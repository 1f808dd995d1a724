//! Click simulation against a ground-truth mask.
//!
//! Two placement strategies are mixed per polarity: an "official-style"
//! sampler that puts foreground clicks on lesion centres or borders and
//! background clicks in a near-miss band around the lesions, and a custom
//! sampler that draws foreground clicks anywhere inside the mask with
//! probability growing with interior depth.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::edt::{edt_to_set, interior_depth, DistanceField};
use crate::error::{Error, Result};
use crate::metrics::{connected_components, Connectivity};
use crate::prompts::{ClickPoint, ClickSet, Polarity, MAX_CLICKS_PER_POLARITY};
use crate::volume::{MaskVolume, Spacing};

/// Attempts per click before giving up on finding an unused position.
pub const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLaw {
    /// `P(k) ∝ 1 / (k + 1)` for `k = 0..=max`.
    #[default]
    LogFavorFew,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub max_clicks_per_polarity: usize,
    pub count_law: CountLaw,
    /// Probability of using the official-style sampler for a polarity.
    pub mix_official_fraction: f64,
    /// Exponent on interior depth for custom foreground sampling.
    pub core_weight_exponent: f64,
    /// Official-style sampler: chance of a centre (vs border) placement.
    pub center_probability: f64,
    /// Official-style background band, in voxels from the mask.
    pub bg_band_min_vox: f64,
    pub bg_band_max_vox: f64,
    /// Custom background sampler radius around the mask, in voxels.
    pub custom_bg_radius_vox: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_clicks_per_polarity: MAX_CLICKS_PER_POLARITY,
            count_law: CountLaw::LogFavorFew,
            mix_official_fraction: 0.8,
            core_weight_exponent: 1.0,
            center_probability: 0.5,
            bg_band_min_vox: 2.0,
            bg_band_max_vox: 10.0,
            custom_bg_radius_vox: 10.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("mix_official_fraction", self.mix_official_fraction)?;
        unit("center_probability", self.center_probability)?;
        if !(self.core_weight_exponent.is_finite() && self.core_weight_exponent > 0.0) {
            return Err(Error::invalid(format!(
                "core_weight_exponent must be > 0, got {}",
                self.core_weight_exponent
            )));
        }
        if !(0.0 <= self.bg_band_min_vox && self.bg_band_min_vox <= self.bg_band_max_vox) {
            return Err(Error::invalid(format!(
                "background band [{}, {}] is not a valid range",
                self.bg_band_min_vox, self.bg_band_max_vox
            )));
        }
        if !(self.custom_bg_radius_vox > 0.0) {
            return Err(Error::invalid("custom_bg_radius_vox must be > 0"));
        }
        Ok(())
    }
}

/// Independent random stream for one case, derived from the run seed and
/// the case id so results do not depend on evaluation order.
pub fn case_rng(seed: u64, case_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(case_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Probabilities of drawing `k = 0..=max` clicks.
pub fn count_probabilities(law: CountLaw, max: usize) -> Vec<f64> {
    match law {
        CountLaw::LogFavorFew => {
            let w: Vec<f64> = (0..=max).map(|k| 1.0 / (k as f64 + 1.0)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        }
    }
}

pub fn sample_click_count<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> usize {
    if cfg.max_clicks_per_polarity == 0 {
        return 0;
    }
    let p = count_probabilities(cfg.count_law, cfg.max_clicks_per_polarity);
    WeightedIndex::new(&p).expect("positive weights").sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Official,
    Custom,
}

/// Which sampler each polarity used in one call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimTrace {
    pub foreground: Placement,
    pub background: Placement,
}

struct ComponentSites {
    /// Voxels ranked by interior depth, deepest first.
    by_depth: Vec<usize>,
    /// Voxels within one voxel step of the background.
    border: Vec<usize>,
}

/// Precomputed geometry for drawing clicks against one mask.
pub struct ClickSampler<'a> {
    mask: &'a MaskVolume,
    depth: DistanceField,
    components: Vec<ComponentSites>,
    /// Euclidean distance to the mask in voxel units (None for empty masks).
    dist_vox: Option<DistanceField>,
    cfg: SimConfig,
}

impl<'a> ClickSampler<'a> {
    pub fn new(mask: &'a MaskVolume, cfg: &SimConfig) -> Result<Self> {
        let depth = interior_depth(mask, mask.spacing());
        Self::with_depth(mask, depth, cfg)
    }

    pub fn with_depth(mask: &'a MaskVolume, depth: DistanceField, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        mask.ensure_same_grid(&depth.values, "click sampler depth")?;
        let labeling = connected_components(mask, Connectivity::TwentySix);
        let border_depth = mask.spacing().as_array().into_iter().fold(0.0f64, f64::max) as f32;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); labeling.components.len()];
        for i in mask.foreground() {
            members[labeling.label_at(i) as usize - 1].push(i);
        }
        let d = depth.data();
        let components = members
            .into_iter()
            .map(|mut voxels| {
                let border = voxels.iter().copied().filter(|&i| d[i] <= border_depth).collect();
                voxels.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
                ComponentSites { by_depth: voxels, border }
            })
            .collect();
        let dist_vox = if mask.is_empty() {
            None
        } else {
            Some(edt_to_set(mask, Spacing::UNIT)?)
        };
        Ok(Self {
            mask,
            depth,
            components,
            dist_vox,
            cfg: *cfg,
        })
    }

    pub fn depth(&self) -> &DistanceField {
        &self.depth
    }

    fn to_points(&self, picked: Vec<usize>, polarity: Polarity) -> Vec<ClickPoint> {
        let shape = self.mask.shape();
        picked
            .into_iter()
            .map(|i| ClickPoint {
                pos: shape.coords(i),
                polarity,
            })
            .collect()
    }

    fn require_foreground(&self, k: usize) -> Result<()> {
        if k > 0 && self.mask.is_empty() {
            return Err(Error::EmptySource(format!(
                "cannot place {k} foreground clicks on an empty mask"
            )));
        }
        Ok(())
    }

    /// Background voxels whose voxel-unit distance to the mask lies in `[lo, hi]`.
    /// With an empty mask every voxel qualifies.
    fn background_band(&self, lo: f64, hi: f64) -> Vec<usize> {
        match &self.dist_vox {
            None => (0..self.mask.shape().len()).collect(),
            Some(dist) => dist
                .data()
                .iter()
                .enumerate()
                .filter(|&(i, &d)| !self.mask.data()[i] && (d as f64) >= lo && (d as f64) <= hi)
                .map(|(i, _)| i)
                .collect(),
        }
    }

    fn uniform_unique<R: Rng + ?Sized>(candidates: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        if candidates.is_empty() {
            return out;
        }
        for _ in 0..k {
            for _ in 0..MAX_REJECTIONS {
                let c = candidates[rng.random_range(0..candidates.len())];
                if !out.contains(&c) {
                    out.push(c);
                    break;
                }
            }
        }
        out
    }

    /// Centre-or-border foreground placement over round-robin components;
    /// near-miss band placement for background.
    pub fn official<R: Rng + ?Sized>(&self, k: usize, polarity: Polarity, rng: &mut R) -> Result<Vec<ClickPoint>> {
        let picked = match polarity {
            Polarity::Foreground => {
                self.require_foreground(k)?;
                let mut out: Vec<usize> = Vec::with_capacity(k);
                for i in 0..k {
                    let comp = &self.components[i % self.components.len()];
                    for _ in 0..MAX_REJECTIONS {
                        let candidate = if rng.random_bool(self.cfg.center_probability) {
                            comp.by_depth.iter().copied().find(|v| !out.contains(v))
                        } else {
                            Some(comp.border[rng.random_range(0..comp.border.len())])
                                .filter(|v| !out.contains(v))
                        };
                        if let Some(v) = candidate {
                            out.push(v);
                            break;
                        }
                    }
                }
                out
            }
            Polarity::Background => {
                let mut band = self.background_band(self.cfg.bg_band_min_vox, self.cfg.bg_band_max_vox);
                if band.is_empty() {
                    band = self.background_band(0.0, f64::INFINITY);
                }
                Self::uniform_unique(&band, k, rng)
            }
        };
        Ok(self.to_points(picked, polarity))
    }

    /// Depth-weighted foreground placement; uniform background placement in
    /// a radius around the mask.
    pub fn custom<R: Rng + ?Sized>(&self, k: usize, polarity: Polarity, rng: &mut R) -> Result<Vec<ClickPoint>> {
        let picked = match polarity {
            Polarity::Foreground => {
                self.require_foreground(k)?;
                let mut out = Vec::with_capacity(k);
                if k > 0 {
                    let sites: Vec<usize> = self.mask.foreground().collect();
                    let weights: Vec<f64> = sites
                        .iter()
                        .map(|&i| (self.depth.data()[i] as f64).powf(self.cfg.core_weight_exponent))
                        .collect();
                    let dist = WeightedIndex::new(&weights)
                        .map_err(|e| Error::invalid(format!("depth weights: {e}")))?;
                    for _ in 0..k {
                        for _ in 0..MAX_REJECTIONS {
                            let c = sites[dist.sample(rng)];
                            if !out.contains(&c) {
                                out.push(c);
                                break;
                            }
                        }
                    }
                }
                out
            }
            Polarity::Background => {
                let band = self.background_band(f64::MIN_POSITIVE, self.cfg.custom_bg_radius_vox);
                Self::uniform_unique(&band, k, rng)
            }
        };
        Ok(self.to_points(picked, polarity))
    }

    pub fn place<R: Rng + ?Sized>(&self, placement: Placement, k: usize, polarity: Polarity, rng: &mut R) -> Result<Vec<ClickPoint>> {
        match placement {
            Placement::Official => self.official(k, polarity, rng),
            Placement::Custom => self.custom(k, polarity, rng),
        }
    }

    fn draw_placement<R: Rng + ?Sized>(&self, rng: &mut R) -> Placement {
        if rng.random_bool(self.cfg.mix_official_fraction) {
            Placement::Official
        } else {
            Placement::Custom
        }
    }

    /// One simulated interaction: random counts per polarity, then one
    /// sampler choice per polarity.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ClickSet, SimTrace)> {
        let k_fg = if self.mask.is_empty() { 0 } else { sample_click_count(&self.cfg, rng) };
        let k_bg = sample_click_count(&self.cfg, rng);
        self.fixed_counts(k_fg, k_bg, rng)
    }

    /// Like [`ClickSampler::simulate`] but with fixed per-polarity counts;
    /// used to build nested click sequences for evaluation.
    pub fn fixed_counts<R: Rng + ?Sized>(&self, k_fg: usize, k_bg: usize, rng: &mut R) -> Result<(ClickSet, SimTrace)> {
        let k_fg = if self.mask.is_empty() { 0 } else { k_fg };
        let trace = SimTrace {
            foreground: self.draw_placement(rng),
            background: self.draw_placement(rng),
        };
        let fg = self.place(trace.foreground, k_fg, Polarity::Foreground, rng)?;
        let bg = self.place(trace.background, k_bg, Polarity::Background, rng)?;
        let set = ClickSet::new(fg.into_iter().map(|c| c.pos).collect(), bg.into_iter().map(|c| c.pos).collect())?;
        Ok((set, trace))
    }
}

pub fn simulate_clicks<R: Rng + ?Sized>(mask: &MaskVolume, cfg: &SimConfig, rng: &mut R) -> Result<ClickSet> {
    Ok(ClickSampler::new(mask, cfg)?.simulate(rng)?.0)
}

/// `n` clicks per polarity (fewer if the mask cannot host them), whose
/// prefixes serve as the click sets for smaller budgets.
pub fn simulate_sequence<R: Rng + ?Sized>(mask: &MaskVolume, n: usize, cfg: &SimConfig, rng: &mut R) -> Result<ClickSet> {
    Ok(ClickSampler::new(mask, cfg)?.fixed_counts(n, n, rng)?.0)
}
