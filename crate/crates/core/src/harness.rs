//! Interactive evaluation: per case and click budget, render prompts, run a
//! backend, threshold, score, then aggregate over the cohort.
//!
//! Every case gets one click sequence, `max(budgets)` clicks per polarity
//! from its own RNG stream (see [`case_rng`]). Budget `b` uses the first `b`
//! clicks of each polarity, so smaller budgets are prefixes of larger ones
//! and results do not depend on scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::nifti::{read_mask, read_nifti};
use crate::io::prompts_file::{read_prompts_file, PromptsFile};
use crate::metrics::{BudgetCurve, CaseMetrics, Connectivity, MetricAuc};
use crate::prompts::{build_prompt_channels, ClickSet, EncodingSpec, MAX_CLICKS_PER_POLARITY};
use crate::segment::{threshold, BackendConfig, PromptableSegmenter, SegmenterInput, DEFAULT_THRESHOLD};
use crate::simulate::{case_rng, simulate_sequence, SimConfig};
use crate::volume::{normalize_ct, resample, resample_mask, CtNormalization, Interpolation, MaskVolume, Spacing, Volume3};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_BUDGETS: [usize; 4] = [0, 3, 7, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSource {
    /// Simulate clicks against the ground truth.
    #[default]
    Simulate,
    /// Read `prompts.json` from each case directory.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub json: String,
    pub csv: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            json: "report.json".into(),
            csv: "report.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<usize>,
    pub encoding: EncodingSpec,
    pub sim: SimConfig,
    pub backend: BackendConfig,
    pub prompt_source: PromptSource,
    pub threshold: f64,
    pub connectivity: Connectivity,
    /// Worker threads; 0 uses all cores. Not echoed into reports, which are
    /// identical for every value.
    #[serde(skip_serializing)]
    pub workers: usize,
    pub seed: u64,
    /// Resample every case to this (z, y, x) spacing on load.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_spacing: Option<[f64; 3]>,
    pub ct_normalization: CtNormalization,
    pub output: OutputConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            budgets: DEFAULT_BUDGETS.to_vec(),
            encoding: EncodingSpec::default(),
            sim: SimConfig::default(),
            backend: BackendConfig::default(),
            prompt_source: PromptSource::Simulate,
            threshold: DEFAULT_THRESHOLD,
            connectivity: Connectivity::TwentySix,
            workers: 0,
            seed: 0,
            target_spacing: None,
            ct_normalization: CtNormalization::default(),
            output: OutputConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.budgets;
        if b.len() < 2 {
            return Err(Error::Config(format!("budgets needs at least two entries, got {b:?}")));
        }
        if b[0] != 0 {
            return Err(Error::Config(format!("budgets must start at 0, got {b:?}")));
        }
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("budgets must be strictly increasing, got {b:?}")));
        }
        if *b.last().unwrap() > MAX_CLICKS_PER_POLARITY {
            return Err(Error::Config(format!(
                "budgets must not exceed {MAX_CLICKS_PER_POLARITY}, got {b:?}"
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if let Some(s) = self.target_spacing {
            Spacing::from_array(s).map_err(|e| Error::Config(format!("target_spacing: {e}")))?;
        }
        fn ctx(what: &'static str) -> impl Fn(Error) -> Error {
            move |e| Error::Config(format!("{what}: {e}"))
        }
        self.encoding.validate().map_err(ctx("encoding"))?;
        self.sim.validate().map_err(ctx("sim"))?;
        self.ct_normalization.validate().map_err(ctx("ct_normalization"))?;
        if let BackendConfig::Reference(p) = &self.backend {
            p.validate().map_err(ctx("backend"))?;
        }
        Ok(())
    }

    pub fn max_budget(&self) -> usize {
        self.budgets.last().copied().unwrap_or(0)
    }
}

/// File locations for one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDescriptor {
    pub case_id: String,
    pub pet: PathBuf,
    pub ct: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
}

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.nii.gz"), format!("{stem}.nii")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

impl CaseDescriptor {
    /// Describes `<dir>` holding `pet.nii[.gz]` and optionally `ct`, `gt`
    /// images and `prompts.json`. Returns None without a PET image.
    pub fn from_dir(dir: &Path) -> Option<Self> {
        let case_id = dir.file_name()?.to_str()?.to_string();
        let prompts = dir.join("prompts.json");
        Some(Self {
            case_id,
            pet: find_image(dir, "pet")?,
            ct: find_image(dir, "ct"),
            gt: find_image(dir, "gt"),
            prompts: prompts.is_file().then_some(prompts),
        })
    }
}

/// Cases sorted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub cases: Vec<CaseDescriptor>,
}

impl Dataset {
    /// Every immediate subdirectory of `root` that holds a PET image.
    pub fn discover(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let entries = std::fs::read_dir(root).map_err(|e| Error::file(root, e))?;
        let mut cases = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::file(root, e))?.path();
            if path.is_dir() {
                cases.extend(CaseDescriptor::from_dir(&path));
            }
        }
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Ok(Self { cases })
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseDescriptor> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}

/// A case with its images on one grid.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case_id: String,
    pub pet: Volume3,
    /// Normalised CT.
    pub ct: Option<Volume3>,
    pub gt: Option<MaskVolume>,
    pub prompts: Option<PromptsFile>,
}

impl LoadedCase {
    /// Loads and aligns the images: PET is resampled to `target_spacing`
    /// when set, CT and ground truth are brought to the PET grid.
    pub fn load(desc: &CaseDescriptor, target_spacing: Option<[f64; 3]>, ct_norm: &CtNormalization) -> Result<Self> {
        let mut pet = read_nifti(&desc.pet)?;
        if let Some(t) = target_spacing {
            pet = resample(&pet, Spacing::from_array(t)?, Interpolation::Trilinear)?;
        }
        let grid = pet.grid();
        let ct = match &desc.ct {
            Some(p) => {
                let mut ct = read_nifti(p)?;
                if ct.spacing() != grid.spacing {
                    ct = resample(&ct, grid.spacing, Interpolation::Trilinear)?;
                }
                let ct = ct.with_origin(grid.origin);
                pet.ensure_same_grid(&ct, "ct")?;
                Some(normalize_ct(&ct, ct_norm)?)
            }
            None => None,
        };
        let gt = match &desc.gt {
            Some(p) => {
                let mut gt = read_mask(p)?;
                if gt.spacing() != grid.spacing {
                    gt = resample_mask(&gt, grid.spacing)?;
                }
                let gt = gt.with_origin(grid.origin);
                pet.ensure_same_grid(&gt, "ground truth")?;
                Some(gt)
            }
            None => None,
        };
        let prompts = desc.prompts.as_deref().map(read_prompts_file).transpose()?;
        Ok(Self {
            case_id: desc.case_id.clone(),
            pet,
            ct,
            gt,
            prompts,
        })
    }
}

/// Click sequence for a case: `max_budget` simulated clicks per polarity, or
/// the case's prompts file.
pub fn case_clicks(case: &LoadedCase, cfg: &EvalConfig) -> Result<ClickSet> {
    match cfg.prompt_source {
        PromptSource::Precomputed => {
            let file = case.prompts.as_ref().ok_or_else(|| {
                Error::invalid(format!("case {} has no prompts.json", case.case_id))
            })?;
            file.to_clicks(&case.pet.grid())
        }
        PromptSource::Simulate => {
            let gt = ground_truth(case)?;
            let mut rng = case_rng(cfg.seed, &case.case_id);
            simulate_sequence(gt, cfg.max_budget(), &cfg.sim, &mut rng)
        }
    }
}

fn ground_truth(case: &LoadedCase) -> Result<&MaskVolume> {
    case.gt
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("case {} has no ground truth", case.case_id)))
}

/// Thresholded prediction for one click set.
pub fn predict(case: &LoadedCase, clicks: &ClickSet, cfg: &EvalConfig, segmenter: &dyn PromptableSegmenter) -> Result<MaskVolume> {
    let (fg, bg) = build_prompt_channels(clicks, &cfg.encoding, case.pet.grid())?;
    let input = SegmenterInput {
        pet: &case.pet,
        ct: case.ct.as_ref(),
        fg_channel: &fg,
        bg_channel: &bg,
        clicks,
    };
    threshold(&segmenter.segment(&case.case_id, &input)?, cfg.threshold)
}

pub fn evaluate_case(case: &LoadedCase, cfg: &EvalConfig, segmenter: &dyn PromptableSegmenter) -> Result<BudgetCurve> {
    let gt = ground_truth(case)?;
    let clicks = case_clicks(case, cfg)?;
    let rows = cfg
        .budgets
        .iter()
        .map(|&b| {
            let pred = predict(case, &clicks.prefix(b), cfg, segmenter)?;
            CaseMetrics::compute(&pred, gt, cfg.connectivity)
        })
        .collect::<Result<Vec<_>>>()?;
    BudgetCurve::new(cfg.budgets.clone(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub curve: BudgetCurve,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cases: usize,
    /// Unweighted per-case mean at each budget.
    pub means: Vec<CaseMetrics>,
    /// AUC of the mean curve (equal to the mean of per-case AUCs up to
    /// rounding).
    pub auc: MetricAuc,
}

impl CohortSummary {
    pub fn from_curves(budgets: &[usize], curves: &[&BudgetCurve]) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::invalid("cohort summary needs at least one case"));
        }
        let n = curves.len() as f64;
        let means = (0..budgets.len())
            .map(|i| {
                let mut s = [0.0f64; 3];
                for c in curves {
                    let r = &c.rows[i];
                    s[0] += r.dice;
                    s[1] += r.fpvol_mm3;
                    s[2] += r.fnvol_mm3;
                }
                CaseMetrics {
                    dice: s[0] / n,
                    fpvol_mm3: s[1] / n,
                    fnvol_mm3: s[2] / n,
                }
            })
            .collect::<Vec<_>>();
        let curve = BudgetCurve::new(budgets.to_vec(), means)?;
        Ok(Self {
            cases: curves.len(),
            means: curve.rows,
            auc: curve.auc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub toolkit_version: String,
    pub seed: u64,
    pub config: EvalConfig,
    pub budgets: Vec<usize>,
    pub cases: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
    pub cohort: CohortSummary,
}

impl EvalReport {
    /// Cohort values recomputed from the per-case rows agree with the stored
    /// ones within `rel` relative error.
    pub fn check_consistency(&self, rel: f64) -> Result<()> {
        let curves: Vec<&BudgetCurve> = self.cases.iter().map(|c| &c.curve).collect();
        if curves.iter().any(|c| c.budgets != self.budgets || c.rows.len() != self.budgets.len()) {
            return Err(Error::Format("case curve budgets differ from report budgets".into()));
        }
        let again = CohortSummary::from_curves(&self.budgets, &curves)?;
        let close = |a: f64, b: f64| (a - b).abs() <= rel * a.abs().max(b.abs());
        let triple = |m: &CaseMetrics| [m.dice, m.fpvol_mm3, m.fnvol_mm3];
        let auc = |m: &MetricAuc| [m.dice, m.fpvol_mm3, m.fnvol_mm3];
        let pairs = again
            .means
            .iter()
            .zip(&self.cohort.means)
            .flat_map(|(a, b)| triple(a).into_iter().zip(triple(b)))
            .chain(auc(&again.auc).into_iter().zip(auc(&self.cohort.auc)));
        for (a, b) in pairs {
            if !close(a, b) {
                return Err(Error::Format(format!(
                    "cohort value {b} does not match {a} recomputed from case rows"
                )));
            }
        }
        if again.means.len() != self.cohort.means.len() || again.cases != self.cohort.cases {
            return Err(Error::Format("cohort summary shape does not match case rows".into()));
        }
        Ok(())
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Evaluates every case. Cases that fail are listed in `failures`; the call
/// itself fails only on bad configuration or when no case succeeds.
pub fn evaluate_cohort(dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if dataset.cases.is_empty() {
        return Err(Error::invalid("dataset has no cases"));
    }
    let segmenter = cfg.backend.build()?;
    let outcomes: Vec<Result<BudgetCurve>> = pool(cfg.workers)?.install(|| {
        dataset
            .cases
            .par_iter()
            .map(|d| {
                let case = LoadedCase::load(d, cfg.target_spacing, &cfg.ct_normalization)?;
                evaluate_case(&case, cfg, segmenter.as_ref())
            })
            .collect()
    });
    assemble(&dataset.cases, outcomes, cfg)
}

/// Same as [`evaluate_cohort`] for cases already in memory.
pub fn evaluate_loaded(cases: &[LoadedCase], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::invalid("dataset has no cases"));
    }
    let segmenter = cfg.backend.build()?;
    let outcomes: Vec<Result<BudgetCurve>> = pool(cfg.workers)?
        .install(|| cases.par_iter().map(|c| evaluate_case(c, cfg, segmenter.as_ref())).collect());
    let ids: Vec<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    assemble_ids(&ids, outcomes, cfg)
}

fn assemble(descs: &[CaseDescriptor], outcomes: Vec<Result<BudgetCurve>>, cfg: &EvalConfig) -> Result<EvalReport> {
    let ids: Vec<&str> = descs.iter().map(|d| d.case_id.as_str()).collect();
    assemble_ids(&ids, outcomes, cfg)
}

fn assemble_ids(ids: &[&str], outcomes: Vec<Result<BudgetCurve>>, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut cases = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in ids.iter().zip(outcomes) {
        match outcome {
            Ok(curve) => cases.push(CaseResult {
                case_id: id.to_string(),
                curve,
            }),
            Err(e) => failures.push(CaseFailure {
                case_id: id.to_string(),
                error: e.to_string(),
            }),
        }
    }
    if cases.is_empty() {
        let list: Vec<String> = failures.iter().map(|f| format!("{}: {}", f.case_id, f.error)).collect();
        return Err(Error::invalid(format!("every case failed:\n  {}", list.join("\n  "))));
    }
    let curves: Vec<&BudgetCurve> = cases.iter().map(|c| &c.curve).collect();
    let cohort = CohortSummary::from_curves(&cfg.budgets, &curves)?;
    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        budgets: cfg.budgets.clone(),
        cases,
        failures,
        cohort,
    })
}
