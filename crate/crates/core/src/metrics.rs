//! Lesion-level evaluation metrics.
//!
//! False-positive and false-negative volumes are component based: a
//! predicted component counts as false positive only if it shares no voxel
//! with the ground truth, and a ground-truth component counts as missed only
//! if no predicted voxel touches it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Spacing, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    /// Neighbour offsets (z, y, x), excluding the origin.
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let nonzero = [dz, dy, dx].iter().filter(|&&d| d != 0).count();
                    if nonzero > 0 && nonzero <= max_nonzero {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub label: u32,
    pub voxels: usize,
    pub volume_mm3: f64,
}

/// Labels are dense from 1; 0 marks background.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Volume<u32>,
    pub components: Vec<Component>,
}

impl Labeling {
    pub fn label_at(&self, linear: usize) -> u32 {
        self.labels.data()[linear]
    }
}

/// Breadth-first component labelling. Labels are assigned in order of each
/// component's first voxel in canonical order.
pub fn connected_components(mask: &MaskVolume, connectivity: Connectivity) -> Labeling {
    let shape = mask.shape();
    let offsets = connectivity.offsets();
    let voxel_volume = mask.spacing().voxel_volume();
    let mut labels = vec![0u32; shape.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.foreground() {
        if labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut voxels = 0usize;
        while let Some(i) = queue.pop_front() {
            voxels += 1;
            let p = shape.coords(i);
            for o in &offsets {
                let q = [p[0] as i64 + o[0], p[1] as i64 + o[1], p[2] as i64 + o[2]];
                if let Some(q) = shape.checked(q) {
                    let j = shape.index(q);
                    if labels[j] == 0 && mask.data()[j] {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        components.push(Component {
            label,
            voxels,
            volume_mm3: voxels as f64 * voxel_volume,
        });
    }
    Labeling {
        labels: mask.with_data(labels).expect("same grid"),
        components,
    }
}

pub fn dice(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    pred.ensure_same_grid(gt, "dice")?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Total voxel count of components of `of` that share no voxel with `against`.
fn unmatched_voxels(of: &MaskVolume, against: &MaskVolume, connectivity: Connectivity) -> usize {
    let lab = connected_components(of, connectivity);
    let mut touched = vec![false; lab.components.len() + 1];
    for (i, &b) in against.data().iter().enumerate() {
        if b {
            touched[lab.label_at(i) as usize] = true;
        }
    }
    lab.components
        .iter()
        .filter(|c| !touched[c.label as usize])
        .map(|c| c.voxels)
        .sum()
}

fn check_pair(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing, what: &str) -> Result<()> {
    pred.ensure_same_grid(gt, what)?;
    Spacing::from_array(spacing.as_array()).map(|_| ())
}

/// Volume (mm³) of predicted components with zero ground-truth overlap.
pub fn fp_volume(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing, connectivity: Connectivity) -> Result<f64> {
    check_pair(pred, gt, spacing, "fp_volume")?;
    Ok(unmatched_voxels(pred, gt, connectivity) as f64 * spacing.voxel_volume())
}

/// Volume (mm³) of ground-truth components with zero predicted overlap.
pub fn fn_volume(pred: &MaskVolume, gt: &MaskVolume, spacing: Spacing, connectivity: Connectivity) -> Result<f64> {
    check_pair(pred, gt, spacing, "fn_volume")?;
    Ok(unmatched_voxels(gt, pred, connectivity) as f64 * spacing.voxel_volume())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub dice: f64,
    pub fpvol_mm3: f64,
    pub fnvol_mm3: f64,
}

impl CaseMetrics {
    pub fn compute(pred: &MaskVolume, gt: &MaskVolume, connectivity: Connectivity) -> Result<Self> {
        let spacing = gt.spacing();
        Ok(Self {
            dice: dice(pred, gt)?,
            fpvol_mm3: fp_volume(pred, gt, spacing, connectivity)?,
            fnvol_mm3: fn_volume(pred, gt, spacing, connectivity)?,
        })
    }
}

/// Trapezoidal area under `values` over `budgets`, divided by the budget span
/// so that a constant curve integrates to that constant.
pub fn auc(budgets: &[usize], values: &[f64]) -> Result<f64> {
    if budgets.len() < 2 || budgets.len() != values.len() {
        return Err(Error::invalid(format!(
            "auc needs >= 2 matching points, got {} budgets and {} values",
            budgets.len(),
            values.len()
        )));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("budgets must be strictly increasing: {budgets:?}")));
    }
    let twice_area: f64 = budgets
        .windows(2)
        .zip(values.windows(2))
        .map(|(b, v)| (b[1] - b[0]) as f64 * (v[0] + v[1]))
        .sum();
    let span = (budgets[budgets.len() - 1] - budgets[0]) as f64;
    Ok(twice_area / (2.0 * span))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAuc {
    pub dice: f64,
    pub fpvol_mm3: f64,
    pub fnvol_mm3: f64,
}

/// Metrics at each click budget plus their AUCs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub budgets: Vec<usize>,
    pub rows: Vec<CaseMetrics>,
    pub auc: MetricAuc,
}

impl BudgetCurve {
    pub fn new(budgets: Vec<usize>, rows: Vec<CaseMetrics>) -> Result<Self> {
        let col = |f: fn(&CaseMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let auc = MetricAuc {
            dice: auc(&budgets, &col(|m| m.dice))?,
            fpvol_mm3: auc(&budgets, &col(|m| m.fpvol_mm3))?,
            fnvol_mm3: auc(&budgets, &col(|m| m.fnvol_mm3))?,
        };
        Ok(Self { budgets, rows, auc })
    }

    /// Metrics at the largest budget.
    pub fn last(&self) -> &CaseMetrics {
        self.rows.last().expect("curves have >= 2 rows")
    }
}
