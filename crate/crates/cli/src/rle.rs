//! Run-length transport of masks over the canonical (z, y, x) voxel order.

use lesionprompt_core::MaskVolume;
use serde::{Deserialize, Serialize};

/// Alternating run lengths, starting with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub shape: [usize; 3],
    pub counts: Vec<u64>,
}

pub fn encode_bits(bits: &[bool]) -> Vec<u64> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &b in bits {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    counts.push(run);
    counts
}

pub fn decode_bits(counts: &[u64], len: usize) -> Result<Vec<bool>, String> {
    let total: u64 = counts.iter().sum();
    if total != len as u64 {
        return Err(format!("run lengths sum to {total}, expected {len}"));
    }
    let mut out = Vec::with_capacity(len);
    for (i, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat(i % 2 == 1).take(c as usize));
    }
    Ok(out)
}

impl MaskRle {
    pub fn encode(mask: &MaskVolume) -> Self {
        Self {
            shape: mask.shape().as_array(),
            counts: encode_bits(mask.data()),
        }
    }

    pub fn decode(&self) -> Result<Vec<bool>, String> {
        decode_bits(&self.counts, self.shape.iter().product())
    }
}
