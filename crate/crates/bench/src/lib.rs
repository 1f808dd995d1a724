//! Shared fixtures for the benchmarks.

use lesionprompt_core::phantom::{cohort_ids, generate_phantom, PhantomConfig};
use lesionprompt_core::{EvalConfig, LoadedCase, MaskVolume};

/// A phantom cohort loaded in memory with default CT normalisation.
pub fn cohort(n: usize, seed: u64) -> Vec<LoadedCase> {
    let norm = EvalConfig::default().ct_normalization;
    cohort_ids(n)
        .iter()
        .map(|id| generate_phantom(&PhantomConfig::default(), seed, id).and_then(|p| p.into_loaded(&norm)))
        .collect::<Result<_, _>>()
        .expect("phantom generation")
}

/// Ground truth of the first phantom, enlarged to `shape` if given.
pub fn phantom_mask(shape: Option<[usize; 3]>) -> MaskVolume {
    let mut cfg = PhantomConfig::default();
    if let Some(s) = shape {
        cfg.shape = s;
    }
    generate_phantom(&cfg, 0, "bench").expect("phantom").gt
}
