//! Command line definitions. Flags mirror config keys; a flag that is given
//! overrides the matching key from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionprompt_core::io::config::read_config;
use lesionprompt_core::segment::RefSegParams;
use lesionprompt_core::{BackendConfig, Connectivity, EncodingKind, EncodingSpec, EvalConfig, PromptSource, SimConfig};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "lesionprompt", version, about = "Promptable 3D lesion segmentation toolkit")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render foreground/background prompt channels for an image.
    Encode(EncodeArgs),
    /// Simulate clicks on a ground-truth mask and write a prompts file.
    Simulate(SimulateArgs),
    /// Evaluate a dataset over click budgets and write JSON + CSV reports.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP API for the interactive viewer.
    Serve(ServeArgs),
    /// Write a synthetic PET/CT cohort.
    Phantom(PhantomArgs),
    /// Print the merged configuration as TOML.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Gaussian,
    Edt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Simulate,
    Precomputed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Reference,
    External,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EncodingFlags {
    /// encoding.kind
    #[arg(long, value_enum)]
    pub encoding: Option<KindArg>,
    /// encoding.sigma (gaussian)
    #[arg(long)]
    pub sigma: Option<f64>,
    /// encoding.size (edt)
    #[arg(long)]
    pub size: Option<f64>,
    /// encoding.use_mm
    #[arg(long, value_name = "BOOL")]
    pub use_mm: Option<bool>,
}

impl EncodingFlags {
    pub fn apply(&self, spec: EncodingSpec) -> Result<EncodingSpec, CliError> {
        let kind = match self.encoding {
            Some(k) => k,
            None => match spec.kind {
                EncodingKind::Gaussian { .. } => KindArg::Gaussian,
                EncodingKind::Edt { .. } => KindArg::Edt,
            },
        };
        let kind = match kind {
            KindArg::Gaussian => {
                if self.size.is_some() {
                    return Err(CliError::usage("--size applies to the edt encoding"));
                }
                let sigma = match (self.sigma, spec.kind) {
                    (Some(s), _) => s,
                    (None, EncodingKind::Gaussian { sigma }) => sigma,
                    (None, _) => return Err(CliError::usage("the gaussian encoding needs --sigma")),
                };
                EncodingKind::Gaussian { sigma }
            }
            KindArg::Edt => {
                if self.sigma.is_some() {
                    return Err(CliError::usage("--sigma applies to the gaussian encoding"));
                }
                let size = match (self.size, spec.kind) {
                    (Some(s), _) => s,
                    (None, EncodingKind::Edt { size }) => size,
                    (None, _) => return Err(CliError::usage("the edt encoding needs --size")),
                };
                EncodingKind::Edt { size }
            }
        };
        let out = EncodingSpec {
            kind,
            use_mm: self.use_mm.unwrap_or(spec.use_mm),
        };
        out.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimFlags {
    /// sim.max_clicks_per_polarity
    #[arg(long, visible_alias = "max")]
    pub max_clicks_per_polarity: Option<usize>,
    /// sim.mix_official_fraction
    #[arg(long)]
    pub mix_official_fraction: Option<f64>,
    /// sim.core_weight_exponent
    #[arg(long)]
    pub core_weight_exponent: Option<f64>,
    /// sim.center_probability
    #[arg(long)]
    pub center_probability: Option<f64>,
    /// sim.bg_band_min_vox
    #[arg(long)]
    pub bg_band_min_vox: Option<f64>,
    /// sim.bg_band_max_vox
    #[arg(long)]
    pub bg_band_max_vox: Option<f64>,
    /// sim.custom_bg_radius_vox
    #[arg(long)]
    pub custom_bg_radius_vox: Option<f64>,
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl SimFlags {
    pub fn apply(&self, mut s: SimConfig) -> Result<SimConfig, CliError> {
        set(&mut s.max_clicks_per_polarity, self.max_clicks_per_polarity);
        set(&mut s.mix_official_fraction, self.mix_official_fraction);
        set(&mut s.core_weight_exponent, self.core_weight_exponent);
        set(&mut s.center_probability, self.center_probability);
        set(&mut s.bg_band_min_vox, self.bg_band_min_vox);
        set(&mut s.bg_band_max_vox, self.bg_band_max_vox);
        set(&mut s.custom_bg_radius_vox, self.custom_bg_radius_vox);
        s.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// budgets (comma separated)
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    /// prompt_source
    #[arg(long, value_enum)]
    pub prompt_source: Option<SourceArg>,
    /// threshold
    #[arg(long)]
    pub threshold: Option<f64>,
    /// connectivity (6, 18 or 26)
    #[arg(long)]
    pub connectivity: Option<u8>,
    /// workers (0 = all cores)
    #[arg(long)]
    pub workers: Option<usize>,
    /// seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// target_spacing as z,y,x millimetres
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub target_spacing: Option<Vec<f64>>,
    /// backend.name
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// backend.dir (external)
    #[arg(long)]
    pub backend_dir: Option<PathBuf>,
    /// backend.auto_threshold (reference)
    #[arg(long)]
    pub auto_threshold: Option<f64>,
    /// backend.grow_fraction (reference)
    #[arg(long)]
    pub grow_fraction: Option<f64>,
    /// backend.min_component_vol_mm3 (reference)
    #[arg(long)]
    pub min_component_vol_mm3: Option<f64>,
    /// backend.seed_radius_vox (reference)
    #[arg(long)]
    pub seed_radius_vox: Option<usize>,
    /// backend.connectivity (reference)
    #[arg(long)]
    pub backend_connectivity: Option<u8>,
    /// ct_normalization.clip_lo
    #[arg(long, allow_hyphen_values = true)]
    pub ct_clip_lo: Option<f64>,
    /// ct_normalization.clip_hi
    #[arg(long, allow_hyphen_values = true)]
    pub ct_clip_hi: Option<f64>,
    /// ct_normalization.mean
    #[arg(long, allow_hyphen_values = true)]
    pub ct_mean: Option<f64>,
    /// ct_normalization.std
    #[arg(long)]
    pub ct_std: Option<f64>,
    /// output.json (file name inside --out)
    #[arg(long)]
    pub output_json: Option<String>,
    /// output.csv (file name inside --out)
    #[arg(long)]
    pub output_csv: Option<String>,

    #[command(flatten)]
    pub encoding: EncodingFlags,
    #[command(flatten)]
    pub sim: SimFlags,
}

fn connectivity(v: u8) -> Result<Connectivity, CliError> {
    Connectivity::try_from(v).map_err(|e| CliError::usage(e.to_string()))
}

impl ConfigFlags {
    /// Reads `--config` (or defaults) and applies every given flag.
    pub fn resolve(&self) -> Result<EvalConfig, CliError> {
        let base = match &self.config {
            Some(p) => read_config(p).map_err(|e| CliError::usage(e.to_string()))?,
            None => EvalConfig::default(),
        };
        self.apply(base)
    }

    pub fn apply(&self, mut cfg: EvalConfig) -> Result<EvalConfig, CliError> {
        if let Some(b) = &self.budgets {
            cfg.budgets = b.clone();
        }
        if let Some(s) = self.prompt_source {
            cfg.prompt_source = match s {
                SourceArg::Simulate => PromptSource::Simulate,
                SourceArg::Precomputed => PromptSource::Precomputed,
            };
        }
        set(&mut cfg.threshold, self.threshold);
        if let Some(c) = self.connectivity {
            cfg.connectivity = connectivity(c)?;
        }
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.seed, self.seed);
        if let Some(t) = &self.target_spacing {
            cfg.target_spacing = Some([t[0], t[1], t[2]]);
        }

        match self.backend {
            Some(BackendArg::Reference) if !matches!(cfg.backend, BackendConfig::Reference(_)) => {
                cfg.backend = BackendConfig::Reference(RefSegParams::default());
            }
            Some(BackendArg::External) => {
                let dir = match (&self.backend_dir, &cfg.backend) {
                    (Some(d), _) => d.clone(),
                    (None, BackendConfig::External { dir }) => dir.clone(),
                    (None, _) => return Err(CliError::usage("the external backend needs --backend-dir")),
                };
                cfg.backend = BackendConfig::External { dir };
            }
            _ => {}
        }
        let reference_flags = self.auto_threshold.is_some()
            || self.grow_fraction.is_some()
            || self.min_component_vol_mm3.is_some()
            || self.seed_radius_vox.is_some()
            || self.backend_connectivity.is_some();
        match &mut cfg.backend {
            BackendConfig::Reference(p) => {
                if self.backend_dir.is_some() {
                    return Err(CliError::usage("--backend-dir applies to the external backend"));
                }
                set(&mut p.auto_threshold, self.auto_threshold);
                set(&mut p.grow_fraction, self.grow_fraction);
                set(&mut p.min_component_vol_mm3, self.min_component_vol_mm3);
                set(&mut p.seed_radius_vox, self.seed_radius_vox);
                if let Some(c) = self.backend_connectivity {
                    p.connectivity = connectivity(c)?;
                }
            }
            BackendConfig::External { dir } => {
                if reference_flags {
                    return Err(CliError::usage("reference backend flags given with the external backend"));
                }
                if let Some(d) = &self.backend_dir {
                    *dir = d.clone();
                }
            }
        }

        let ct = &mut cfg.ct_normalization;
        set(&mut ct.clip_lo, self.ct_clip_lo);
        set(&mut ct.clip_hi, self.ct_clip_hi);
        set(&mut ct.mean, self.ct_mean);
        set(&mut ct.std, self.ct_std);
        if let Some(j) = &self.output_json {
            cfg.output.json = j.clone();
        }
        if let Some(c) = &self.output_csv {
            cfg.output.csv = c.clone();
        }
        cfg.encoding = self.encoding.apply(cfg.encoding)?;
        cfg.sim = self.sim.apply(cfg.sim)?;
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Image (NIfTI) whose grid the channels are rendered on.
    #[arg(long)]
    pub image: PathBuf,
    /// Prompts JSON.
    #[arg(long)]
    pub prompts: PathBuf,
    /// Output directory for fg.nii.gz and bg.nii.gz.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config; only its [encoding] table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub encoding: EncodingFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground-truth mask (NIfTI).
    #[arg(long)]
    pub gt: PathBuf,
    /// Output prompts JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Case id written to the file and mixed into the seed. Defaults to the
    /// mask's parent directory for `gt.nii[.gz]`, else the file stem.
    #[arg(long)]
    pub case_id: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML config; only its [sim] table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory with one subdirectory per case.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the reports.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Allowed browser origin (repeatable).
    #[arg(long = "cors-origin", default_values_t = ["http://localhost:5173".to_string(), "http://127.0.0.1:5173".to_string()])]
    pub cors_origins: Vec<String>,
    #[command(flatten)]
    pub cfg: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write prompts.json per case (default simulator, 10 + 10
    /// clicks) for precomputed-prompt evaluation.
    #[arg(long)]
    pub with_prompts: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
}
