//! Click prompts and their rendering into the two extra input channels.
//!
//! Each click is stamped with a precomputed kernel (a truncated normalised
//! Gaussian, or a linear distance falloff) and overlapping stamps combine by
//! voxelwise max, so every channel stays in `[0, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, Spacing, Volume3, VoxelIndex};

/// Upper bound on clicks per polarity handed out by the simulator.
pub const MAX_CLICKS_PER_POLARITY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Foreground,
    Background,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Foreground => "foreground",
            Polarity::Background => "background",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClickPoint {
    pub pos: VoxelIndex,
    pub polarity: Polarity,
}

/// Ordered foreground and background clicks for one case. Positions are
/// unique within each polarity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickSet {
    foreground: Vec<VoxelIndex>,
    background: Vec<VoxelIndex>,
}

impl ClickSet {
    pub fn new(foreground: Vec<VoxelIndex>, background: Vec<VoxelIndex>) -> Result<Self> {
        let mut set = Self::default();
        for p in foreground {
            set.push(Polarity::Foreground, p)?;
        }
        for p in background {
            set.push(Polarity::Background, p)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, polarity: Polarity, pos: VoxelIndex) -> Result<()> {
        let list = self.list_mut(polarity);
        if list.contains(&pos) {
            return Err(Error::invalid(format!("duplicate {polarity} click at {pos:?}")));
        }
        list.push(pos);
        Ok(())
    }

    fn list_mut(&mut self, polarity: Polarity) -> &mut Vec<VoxelIndex> {
        match polarity {
            Polarity::Foreground => &mut self.foreground,
            Polarity::Background => &mut self.background,
        }
    }

    pub fn positions(&self, polarity: Polarity) -> &[VoxelIndex] {
        match polarity {
            Polarity::Foreground => &self.foreground,
            Polarity::Background => &self.background,
        }
    }

    pub fn foreground(&self) -> &[VoxelIndex] {
        &self.foreground
    }

    pub fn background(&self) -> &[VoxelIndex] {
        &self.background
    }

    pub fn len(&self) -> usize {
        self.foreground.len() + self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All clicks, foreground first, each list in placement order.
    pub fn iter(&self) -> impl Iterator<Item = ClickPoint> + '_ {
        let fg = self.foreground.iter().map(|&pos| ClickPoint {
            pos,
            polarity: Polarity::Foreground,
        });
        let bg = self.background.iter().map(|&pos| ClickPoint {
            pos,
            polarity: Polarity::Background,
        });
        fg.chain(bg)
    }

    /// The first `n` clicks of each polarity (or all of them if fewer).
    pub fn prefix(&self, n: usize) -> ClickSet {
        ClickSet {
            foreground: self.foreground.iter().take(n).copied().collect(),
            background: self.background.iter().take(n).copied().collect(),
        }
    }

    pub fn check_bounds(&self, grid: &Grid) -> Result<()> {
        for polarity in [Polarity::Foreground, Polarity::Background] {
            for (index, p) in self.positions(polarity).iter().enumerate() {
                let signed = p.map(|c| c as i64);
                if !grid.shape.contains(signed) {
                    return Err(Error::ClickOutOfBounds {
                        index,
                        polarity,
                        position: signed,
                        shape: grid.shape.as_array(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodingKind {
    /// Truncated Gaussian normalised to unit voxel sum.
    Gaussian { sigma: f64 },
    /// Linear falloff from 1 at the click to 0 at distance `size`.
    Edt { size: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    #[serde(flatten)]
    pub kind: EncodingKind,
    /// Measure `sigma`/`size` and distances in millimetres instead of voxels.
    #[serde(default)]
    pub use_mm: bool,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        Self::edt(2.0)
    }
}

impl EncodingSpec {
    pub fn edt(size: f64) -> Self {
        Self {
            kind: EncodingKind::Edt { size },
            use_mm: false,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            kind: EncodingKind::Gaussian { sigma },
            use_mm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EncodingKind::Gaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            EncodingKind::Edt { size } if !(size.is_finite() && size > 0.0) => {
                Err(Error::invalid(format!("edt size must be > 0, got {size}")))
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `edt-2` or `gaussian-0.5`.
    pub fn label(&self) -> String {
        let unit = if self.use_mm { "mm" } else { "" };
        match self.kind {
            EncodingKind::Gaussian { sigma } => format!("gaussian-{sigma}{unit}"),
            EncodingKind::Edt { size } => format!("edt-{size}{unit}"),
        }
    }
}

/// Sparse stamp: integer offsets (z, y, x) and their values.
#[derive(Debug, Clone)]
pub struct Kernel {
    taps: Vec<([i64; 3], f32)>,
}

impl Kernel {
    pub fn taps(&self) -> &[([i64; 3], f32)] {
        &self.taps
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().map(|&(_, v)| v as f64).sum()
    }

    /// Enumerates offsets of the box `[-r, r]` per axis with their squared
    /// distance in the chosen units (voxel or mm).
    fn offsets(radius: [i64; 3], scale: [f64; 3]) -> impl Iterator<Item = ([i64; 3], f64)> {
        let [rz, ry, rx] = radius;
        (-rz..=rz).flat_map(move |dz| {
            (-ry..=ry).flat_map(move |dy| {
                (-rx..=rx).map(move |dx| {
                    let o = [dz, dy, dx];
                    let d2 = (0..3).map(|a| (o[a] as f64 * scale[a]).powi(2)).sum::<f64>();
                    (o, d2)
                })
            })
        })
    }

    fn scale(spacing: Spacing, use_mm: bool) -> [f64; 3] {
        if use_mm {
            spacing.as_array()
        } else {
            [1.0; 3]
        }
    }

    fn radius(extent: f64, scale: [f64; 3]) -> [i64; 3] {
        scale.map(|s| (extent / s).ceil() as i64)
    }

    pub fn gaussian(sigma: f64, spacing: Spacing, use_mm: bool) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        let scale = Self::scale(spacing, use_mm);
        let cutoff = 3.0 * sigma;
        let raw: Vec<([i64; 3], f64)> = Self::offsets(Self::radius(cutoff, scale), scale)
            .filter(|&(_, d2)| d2 <= cutoff * cutoff)
            .map(|(o, d2)| (o, (-d2 / (2.0 * sigma * sigma)).exp()))
            .collect();
        let total: f64 = raw.iter().map(|&(_, v)| v).sum();
        Ok(Self {
            taps: raw.into_iter().map(|(o, v)| (o, (v / total) as f32)).collect(),
        })
    }

    pub fn edt(size: f64, spacing: Spacing, use_mm: bool) -> Result<Self> {
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::invalid(format!("edt size must be > 0, got {size}")));
        }
        let scale = Self::scale(spacing, use_mm);
        let taps = Self::offsets(Self::radius(size, scale), scale)
            .filter_map(|(o, d2)| {
                let v = 1.0 - d2.sqrt() / size;
                (v > 0.0).then_some((o, v as f32))
            })
            .collect();
        Ok(Self { taps })
    }

    pub fn for_spec(spec: &EncodingSpec, spacing: Spacing) -> Result<Self> {
        match spec.kind {
            EncodingKind::Gaussian { sigma } => Self::gaussian(sigma, spacing, spec.use_mm),
            EncodingKind::Edt { size } => Self::edt(size, spacing, spec.use_mm),
        }
    }

    /// Max-combines the kernel at every position into `channel`.
    pub fn stamp(&self, channel: &mut Volume3, positions: &[VoxelIndex]) {
        let shape = channel.shape();
        let data = channel.data_mut();
        for p in positions {
            for &(o, v) in &self.taps {
                let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
                if let Some(q) = shape.checked(q) {
                    let i = shape.index(q);
                    if v > data[i] {
                        data[i] = v;
                    }
                }
            }
        }
    }
}

fn render(kernel: &Kernel, positions: &[VoxelIndex], grid: Grid) -> Volume3 {
    let mut channel = Volume3::zeros_on(grid);
    kernel.stamp(&mut channel, positions);
    channel
}

pub fn render_gaussian(positions: &[VoxelIndex], sigma: f64, use_mm: bool, grid: Grid) -> Result<Volume3> {
    Ok(render(&Kernel::gaussian(sigma, grid.spacing, use_mm)?, positions, grid))
}

pub fn render_edt(positions: &[VoxelIndex], size: f64, use_mm: bool, grid: Grid) -> Result<Volume3> {
    Ok(render(&Kernel::edt(size, grid.spacing, use_mm)?, positions, grid))
}

/// Renders the foreground and background channels for `clicks`.
pub fn build_prompt_channels(clicks: &ClickSet, spec: &EncodingSpec, grid: Grid) -> Result<(Volume3, Volume3)> {
    spec.validate()?;
    clicks.check_bounds(&grid)?;
    let kernel = Kernel::for_spec(spec, grid.spacing)?;
    Ok((
        render(&kernel, clicks.foreground(), grid),
        render(&kernel, clicks.background(), grid),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::new(Shape::cube(n).unwrap(), Spacing::UNIT)
    }

    #[test]
    fn zero_clicks_render_zero() {
        let g = grid(5);
        assert!(render_gaussian(&[], 1.0, false, g).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(render_edt(&[], 2.0, false, g).unwrap().data().iter().all(|&v| v == 0.0));
        let (fg, bg) = build_prompt_channels(&ClickSet::default(), &EncodingSpec::edt(2.0), g).unwrap();
        assert_eq!(fg.sum() + bg.sum(), 0.0);
    }

    #[test]
    fn gaussian_unit_sum_for_interior_click() {
        for sigma in [0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 3.0] {
            let ch = render_gaussian(&[[12, 12, 12]], sigma, false, grid(25)).unwrap();
            assert!((ch.sum() - 1.0).abs() <= 1e-6, "sigma {sigma}: {}", ch.sum());
        }
    }

    #[test]
    fn gaussian_small_sigma_concentrates_mass() {
        // Independent evaluation of the truncated kernel at sigma = 0.25:
        // the cutoff 0.75 keeps only the centre, so it carries all the mass.
        let ch = render_gaussian(&[[2, 2, 2]], 0.25, false, grid(5)).unwrap();
        assert!(ch.get([2, 2, 2]) > 0.99);
        // Without truncation the centre share would be 1 / (1 + 6e^-8 + ...)
        let untruncated_share = 1.0 / (1.0 + 6.0 * (-8.0f64).exp() + 12.0 * (-16.0f64).exp() + 8.0 * (-24.0f64).exp());
        assert!(untruncated_share > 0.99);
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        assert!(render_gaussian(&[], 0.0, false, grid(3)).is_err());
        assert!(render_edt(&[], -1.0, false, grid(3)).is_err());
    }

    /// Integer offsets strictly closer than `r` to the origin.
    fn offsets_within(r: f64) -> usize {
        let m = r.ceil() as i64;
        let mut n = 0;
        for dz in -m..=m {
            for dy in -m..=m {
                for dx in -m..=m {
                    if (((dz * dz + dy * dy + dx * dx) as f64).sqrt()) < r {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn edt_values() {
        let ch = render_edt(&[[3, 3, 3]], 2.0, false, grid(7)).unwrap();
        assert_eq!(ch.get([3, 3, 3]), 1.0);
        assert_eq!(ch.get([3, 3, 4]), 0.5);
        assert_eq!(ch.get([3, 3, 5]), 0.0);
        // d in {0, 1, sqrt2, sqrt3}: 1 + 6 + 12 + 8
        assert_eq!(offsets_within(2.0), 27);
        assert_eq!(ch.data().iter().filter(|&&v| v > 0.0).count(), offsets_within(2.0));
        let ch3 = render_edt(&[[5, 5, 5]], 3.0, false, grid(11)).unwrap();
        assert_eq!(ch3.data().iter().filter(|&&v| v > 0.0).count(), offsets_within(3.0));
    }

    #[test]
    fn edt_in_mm_respects_spacing() {
        let g = Grid::new(Shape::cube(7).unwrap(), Spacing::challenge());
        let spec = EncodingSpec { kind: EncodingKind::Edt { size: 4.0 }, use_mm: true };
        let clicks = ClickSet::new(vec![[3, 3, 3]], vec![]).unwrap();
        let (fg, _) = build_prompt_channels(&clicks, &spec, g).unwrap();
        assert_eq!(fg.get([4, 3, 3]), 0.25);
        assert_eq!(fg.get([3, 3, 4]), (1.0 - 2.04 / 4.0) as f32);
        assert_eq!(fg.get([3, 3, 5]), 0.0);
    }

    #[test]
    fn channels_are_independent() {
        let g = grid(9);
        let spec = EncodingSpec::edt(2.0);
        let one = ClickSet::new(vec![[4, 4, 4]], vec![]).unwrap();
        let (fg, bg) = build_prompt_channels(&one, &spec, g).unwrap();
        assert!(bg.data().iter().all(|&v| v == 0.0));
        assert_eq!(fg.data().iter().filter(|&&v| v > 0.0).count(), offsets_within(2.0));

        let both = ClickSet::new(vec![[4, 4, 4]], vec![[4, 4, 4]]).unwrap();
        let (fg2, bg2) = build_prompt_channels(&both, &spec, g).unwrap();
        assert_eq!(fg2, fg);
        assert_eq!(bg2, fg);
    }

    #[test]
    fn out_of_bounds_click_names_index() {
        let clicks = ClickSet::new(vec![[0, 0, 0], [1, 9, 0]], vec![]).unwrap();
        match build_prompt_channels(&clicks, &EncodingSpec::edt(2.0), grid(4)) {
            Err(Error::ClickOutOfBounds { index, polarity, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(polarity, Polarity::Foreground);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_clicks_rejected() {
        assert!(ClickSet::new(vec![[1, 1, 1], [1, 1, 1]], vec![]).is_err());
        assert!(ClickSet::new(vec![[1, 1, 1]], vec![[1, 1, 1]]).is_ok());
    }

    #[test]
    fn prefix_takes_leading_clicks() {
        let c = ClickSet::new(vec![[0, 0, 0], [0, 0, 1], [0, 0, 2]], vec![[1, 0, 0]]).unwrap();
        let p = c.prefix(2);
        assert_eq!(p.foreground(), &[[0, 0, 0], [0, 0, 1]]);
        assert_eq!(p.background(), &[[1, 0, 0]]);
        assert!(c.prefix(0).is_empty());
    }

    fn arb_spec() -> impl Strategy<Value = EncodingSpec> {
        prop_oneof![
            (0.1f64..3.0).prop_map(EncodingSpec::gaussian),
            (0.5f64..4.0).prop_map(EncodingSpec::edt),
        ]
    }

    proptest! {
        #[test]
        fn translation_equivariance(
            spec in arb_spec(),
            clicks in prop::collection::vec(prop::array::uniform3(10usize..14), 1..5),
            shift in prop::array::uniform3(-3i64..=3),
        ) {
            let g = grid(24);
            let mut uniq = clicks.clone();
            uniq.sort();
            uniq.dedup();
            let moved: Vec<VoxelIndex> = uniq.iter().map(|p| std::array::from_fn(|a| (p[a] as i64 + shift[a]) as usize)).collect();
            let a = build_prompt_channels(&ClickSet::new(uniq, vec![]).unwrap(), &spec, g).unwrap().0;
            let b = build_prompt_channels(&ClickSet::new(moved, vec![]).unwrap(), &spec, g).unwrap().0;
            let shape = g.shape;
            for i in 0..shape.len() {
                let p = shape.coords(i);
                let q = [p[0] as i64 + shift[0], p[1] as i64 + shift[1], p[2] as i64 + shift[2]];
                if let Some(q) = shape.checked(q) {
                    prop_assert_eq!(a.get(p).to_bits(), b.get(q).to_bits());
                }
            }
        }

        #[test]
        fn permutation_invariance_and_monotonicity(
            spec in arb_spec(),
            clicks in prop::collection::vec(prop::array::uniform3(0usize..12), 2..6),
        ) {
            let g = grid(12);
            let mut uniq = clicks.clone();
            uniq.sort();
            uniq.dedup();
            let mut rev = uniq.clone();
            rev.reverse();
            let kernel = Kernel::for_spec(&spec, g.spacing).unwrap();
            let fwd = render(&kernel, &uniq, g);
            prop_assert_eq!(&fwd, &render(&kernel, &rev, g));
            let fewer = render(&kernel, &uniq[..uniq.len() - 1], g);
            for (a, b) in fewer.data().iter().zip(fwd.data()) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn support_bound(spec in arb_spec(), p in prop::array::uniform3(0usize..11)) {
            let g = grid(11);
            let ch = render(&Kernel::for_spec(&spec, g.spacing).unwrap(), &[p], g);
            for i in 0..g.shape.len() {
                let q = g.shape.coords(i);
                let d = (0..3).map(|a| (q[a] as f64 - p[a] as f64).powi(2)).sum::<f64>().sqrt();
                let v = ch.get(q);
                match spec.kind {
                    EncodingKind::Gaussian { sigma } => if d > (3.0 * sigma).ceil() { prop_assert_eq!(v, 0.0) },
                    EncodingKind::Edt { size } => if d >= size { prop_assert_eq!(v, 0.0) } else { prop_assert!(v > 0.0) },
                }
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
