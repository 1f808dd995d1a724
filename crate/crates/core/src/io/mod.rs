//! File formats: NIfTI-1 volumes, prompt JSON, TOML config, reports.

pub mod config;
pub mod nifti;
pub mod prompts_file;
pub mod report;

pub use config::{parse_config, read_config};
pub use nifti::{read_mask, read_nifti, write_mask, write_nifti, NiftiDtype};
pub use prompts_file::{read_prompts, write_prompts, CoordinateSpace, PromptsFile};
pub use report::{read_report_json, write_report_csv, write_report_json};
