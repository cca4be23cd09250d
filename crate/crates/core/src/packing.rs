//! Offline sequence packing: assigns samples to fixed-cap packs, emits
//! per-pack segment layouts, block-diagonal attention mask descriptors,
//! reset position ids, and throughput accounting.
//!
//! The default policy is first-fit decreasing: deterministic, O(n * packs),
//! and within 11/9 of optimal. Packs are emitted in the order their first
//! sample was placed; shuffling across packs belongs to the scheduler, not
//! here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stable_hash64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackPolicy {
    #[default]
    FirstFitDecreasing,
    /// First-fit in input order, no sorting.
    FirstFit,
    BestFitDecreasing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    /// Sequence cap per pack.
    pub max_len: u64,
    pub policy: PackPolicy,
    /// Reserved for randomized tie shuffling; the built-in policies are
    /// fully deterministic and ignore it.
    pub seed: u64,
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            max_len: 4096,
            policy: PackPolicy::FirstFitDecreasing,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pack {
    pub pack_id: u64,
    /// Samples in placement order.
    pub segments: Vec<Segment>,
    pub total_len: u64,
    pub pad_len: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PackingError {
    /// A single sample exceeds the cap; it must be truncated or
    /// re-budgeted upstream.
    #[error("sample {id} has length {len}, above the pack cap {max_len}")]
    OversizedSample { id: String, len: u64, max_len: u64 },
    #[error("dense mask requested for {total_len} tokens, above the {limit}-token limit")]
    DenseTooLarge { total_len: u64, limit: u64 },
}

fn order_indices(lengths: &[(String, u64)], cfg: &PackConfig) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..lengths.len()).collect();
    match cfg.policy {
        PackPolicy::FirstFit => {}
        PackPolicy::FirstFitDecreasing | PackPolicy::BestFitDecreasing => {
            // Length descending, ties by id ascending.
            indices.sort_by(|&a, &b| {
                lengths[b]
                    .1
                    .cmp(&lengths[a].1)
                    .then_with(|| lengths[a].0.cmp(&lengths[b].0))
            });
        }
    }
    indices
}

/// Assigns every sample to exactly one pack without exceeding the cap.
///
/// Returns packs in order of first placement. Fails on any single length
/// above the cap; an empty input yields no packs.
pub fn plan_packs(lengths: &[(String, u64)], cfg: &PackConfig) -> Result<Vec<Pack>, PackingError> {
    for (id, len) in lengths {
        if *len > cfg.max_len {
            return Err(PackingError::OversizedSample {
                id: id.clone(),
                len: *len,
                max_len: cfg.max_len,
            });
        }
    }

    let best_fit = matches!(cfg.policy, PackPolicy::BestFitDecreasing);
    let mut loads: Vec<u64> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();

    for index in order_indices(lengths, cfg) {
        let len = lengths[index].1;
        let chosen = if best_fit {
            // Tightest remaining space that still fits; ties to the
            // earliest pack.
            loads
                .iter()
                .enumerate()
                .filter(|(_, &load)| load + len <= cfg.max_len)
                .min_by_key(|(_, &load)| cfg.max_len - load - len)
                .map(|(i, _)| i)
        } else {
            loads.iter().position(|&load| load + len <= cfg.max_len)
        };
        match chosen {
            Some(i) => {
                loads[i] += len;
                members[i].push(index);
            }
            None => {
                loads.push(len);
                members.push(vec![index]);
            }
        }
    }

    Ok(members
        .into_iter()
        .zip(loads)
        .enumerate()
        .map(|(pack_id, (indices, total_len))| Pack {
            pack_id: pack_id as u64,
            segments: indices
                .into_iter()
                .map(|i| Segment {
                    id: lengths[i].0.clone(),
                    len: lengths[i].1,
                })
                .collect(),
            total_len,
            pad_len: cfg.max_len - total_len,
        })
        .collect())
}

/// Partitions the input into `shards` by stable id hash and plans each
/// shard independently. Per-shard planning is pure, so shards can run on
/// any number of workers; the concatenated result (shard order, pack ids
/// reassigned) is identical regardless.
pub fn plan_packs_sharded(
    lengths: &[(String, u64)],
    cfg: &PackConfig,
    shards: u32,
) -> Result<Vec<Pack>, PackingError> {
    let shards = shards.max(1);
    let mut partitions: Vec<Vec<(String, u64)>> = vec![Vec::new(); shards as usize];
    for (id, len) in lengths {
        let shard = (stable_hash64(id.as_bytes()) % shards as u64) as usize;
        partitions[shard].push((id.clone(), *len));
    }

    let mut packs = Vec::new();
    for partition in &partitions {
        for mut pack in plan_packs(partition, cfg)? {
            pack.pack_id = packs.len() as u64;
            packs.push(pack);
        }
    }
    Ok(packs)
}

/// Compact attention-mask descriptor for one pack: attention is confined
/// to each segment, optionally causal within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDescriptor {
    pub segment_lengths: Vec<u64>,
    pub causal: bool,
}

/// Tokens beyond this count refuse dense expansion; the compact form is
/// the production representation.
pub const DENSE_MASK_LIMIT: u64 = 64;

impl MaskDescriptor {
    /// Expands to a dense boolean matrix (tests and inspection only).
    /// `mask[i][j]` is true iff tokens i and j share a segment and, in
    /// causal mode, j does not follow i.
    pub fn dense(&self) -> Result<Vec<Vec<bool>>, PackingError> {
        let total: u64 = self.segment_lengths.iter().sum();
        if total > DENSE_MASK_LIMIT {
            return Err(PackingError::DenseTooLarge {
                total_len: total,
                limit: DENSE_MASK_LIMIT,
            });
        }
        let n = total as usize;

        let mut segment_of = Vec::with_capacity(n);
        for (seg, &len) in self.segment_lengths.iter().enumerate() {
            segment_of.extend(std::iter::repeat_n(seg, len as usize));
        }

        let mut mask = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                mask[i][j] = segment_of[i] == segment_of[j] && (!self.causal || j <= i);
            }
        }
        Ok(mask)
    }
}

/// Mask descriptor of a pack's segment layout.
pub fn mask_descriptor(pack: &Pack, causal: bool) -> MaskDescriptor {
    MaskDescriptor {
        segment_lengths: pack.segments.iter().map(|s| s.len).collect(),
        causal,
    }
}

/// Position ids restart at zero at each segment boundary.
pub fn position_ids(pack: &Pack) -> Vec<u64> {
    let mut ids = Vec::with_capacity(pack.total_len as usize);
    for segment in &pack.segments {
        ids.extend(0..segment.len);
    }
    ids
}

/// Throughput accounting for a packing run. The baseline pads every
/// sample to the cap, so the speedup estimate is the ratio of padded
/// token counts before and after packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingStats {
    pub packs: u64,
    pub avg_cases_per_pack: f64,
    pub padded_tokens_before: u64,
    pub padded_tokens_after: u64,
    pub est_speedup: f64,
}

pub fn packing_stats(lengths: &[(String, u64)], packs: &[Pack], cfg: &PackConfig) -> PackingStats {
    let n_samples = lengths.len() as u64;
    let n_packs = packs.len() as u64;
    let padded_tokens_before = n_samples * cfg.max_len;
    let padded_tokens_after = n_packs * cfg.max_len;
    // An empty run packs nothing and speeds nothing up.
    let (avg_cases_per_pack, est_speedup) = if n_packs == 0 {
        (0.0, 1.0)
    } else {
        (
            n_samples as f64 / n_packs as f64,
            padded_tokens_before as f64 / padded_tokens_after as f64,
        )
    };
    PackingStats {
        packs: n_packs,
        avg_cases_per_pack,
        padded_tokens_before,
        padded_tokens_after,
        est_speedup,
    }
}
