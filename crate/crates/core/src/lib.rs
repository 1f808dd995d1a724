//! Promptable 3D lesion segmentation toolkit.
//!
//! Clicks are encoded as extra input channels (Gaussian or distance-based),
//! simulated against ground-truth masks, fed to a promptable segmenter, and
//! scored with Dice and component-level false-positive/false-negative volumes
//! over increasing click budgets.

pub mod augment;
pub mod edt;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod prompts;
pub mod segment;
pub mod simulate;
pub mod volume;

pub use edt::{edt_to_set, interior_depth, DistanceField, DistanceSemantics};
pub use error::{Error, Result};
pub use harness::{evaluate_case, evaluate_cohort, CaseDescriptor, Dataset, EvalConfig, EvalReport, LoadedCase, PromptSource};
pub use metrics::{BudgetCurve, CaseMetrics, Connectivity};
pub use prompts::{build_prompt_channels, ClickPoint, ClickSet, EncodingKind, EncodingSpec, Polarity};
pub use segment::{BackendConfig, ProbabilityMap, PromptableSegmenter, ReferenceSegmenter, SegmenterInput};
pub use simulate::{case_rng, simulate_clicks, simulate_sequence, SimConfig};
pub use volume::{Grid, Interpolation, MaskVolume, Shape, Spacing, Volume, Volume3, VoxelIndex};
