//! Per-sample sequence-length budgeting and corpus-level token
//! statistics.
//!
//! A budget decomposes a sample's sequence length into vision, parallel
//! branch (eagle), text, and overhead tokens. Statistics over a corpus of
//! budgets use exact nearest-rank percentiles and mergeable accumulators
//! so shards can be aggregated in any order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EagleConfig, Modality, ModalityKind, Sample, VisionConfig};
use crate::projector::{eagle_infer_tokens, eagle_train_cap, EagleBudget};
use crate::tiling::{effective_tokens_letterboxed, plan_tiling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
pub struct BudgetOptions {
    pub mode: BudgetMode,
    /// Count untiled (multi-image/video) frames at their letterboxed
    /// effective token count instead of the full per-tile count.
    pub letterbox_untiled: bool,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        BudgetOptions {
            mode: BudgetMode::Train,
            letterbox_untiled: false,
        }
    }
}

/// Token-count breakdown of one sample's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub sample_id: String,
    pub modality: ModalityKind,
    pub vision_tokens: u64,
    pub eagle_tokens: u64,
    pub text_tokens: u64,
    pub overhead_tokens: u64,
    pub total: u64,
    pub mode: BudgetMode,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("corpus statistics need at least one budget")]
    EmptyCorpus,
}

/// Computes the token budget of a valid sample.
///
/// Vision tokens come from the tiling plans; the eagle contribution is the
/// flexible inference count, clamped in train mode to the tiling branch
/// output. Overhead is the configured per-tile and per-sample constants.
pub fn budget_sample(
    sample: &Sample,
    vision: &VisionConfig,
    eagle: &EagleConfig,
    opts: &BudgetOptions,
) -> TokenBudget {
    let plans = plan_tiling(sample, vision);

    let untiled = matches!(
        sample.modality,
        Modality::MultiImage { .. } | Modality::Video { .. }
    );
    let vision_tokens: u64 = if untiled && opts.letterbox_untiled {
        sample
            .image_dims
            .iter()
            .map(|&(w, h)| effective_tokens_letterboxed(w, h, vision).0)
            .sum()
    } else {
        plans.iter().map(|p| p.total_vision_tokens).sum()
    };

    let eagle_tokens = if eagle.enabled {
        let eagle_budget = EagleBudget {
            train_cap: eagle_train_cap(vision_tokens),
            infer_tokens: sample
                .image_dims
                .iter()
                .map(|&(w, h)| eagle_infer_tokens(w, h, eagle))
                .sum(),
        };
        match opts.mode {
            BudgetMode::Train => eagle_budget.train_tokens(),
            BudgetMode::Infer => eagle_budget.infer_tokens,
        }
    } else {
        0
    };

    let tiles: u64 = plans.iter().map(|p| p.tile_count()).sum();
    let overhead_tokens = tiles * vision.tile_overhead_tokens + vision.sample_overhead_tokens;

    let total = vision_tokens + eagle_tokens + sample.text_tokens + overhead_tokens;
    TokenBudget {
        sample_id: sample.id.clone(),
        modality: sample.modality.kind(),
        vision_tokens,
        eagle_tokens,
        text_tokens: sample.text_tokens,
        overhead_tokens,
        total,
        mode: opts.mode,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub start: u64,
    pub end: u64,
    pub count: u64,
}

/// Corpus-level distribution of sequence totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: u64,
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    /// Non-empty fixed-width buckets, ascending.
    pub histogram: Vec<HistogramBucket>,
    pub per_modality: BTreeMap<ModalityKind, SummaryStats>,
}

/// Mergeable partial aggregate over budget totals. Merging is associative
/// and commutative, so shard aggregates can be combined in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsAccumulator {
    totals: BTreeMap<u64, u64>,
    per_modality: BTreeMap<ModalityKind, BTreeMap<u64, u64>>,
}

fn nearest_rank(totals: &BTreeMap<u64, u64>, count: u64, percentile: u64) -> u64 {
    // Nearest-rank: the value at 1-indexed position ceil(p/100 * count).
    let rank = (percentile * count).div_ceil(100).max(1);
    let mut seen = 0;
    for (&value, &n) in totals {
        seen += n;
        if seen >= rank {
            return value;
        }
    }
    unreachable!("rank {rank} beyond population {count}")
}

fn summarize(totals: &BTreeMap<u64, u64>) -> SummaryStats {
    let count: u64 = totals.values().sum();
    let sum: u128 = totals.iter().map(|(&v, &n)| v as u128 * n as u128).sum();
    SummaryStats {
        count,
        mean: sum as f64 / count as f64,
        p50: nearest_rank(totals, count, 50),
        p90: nearest_rank(totals, count, 90),
        p99: nearest_rank(totals, count, 99),
    }
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, budget: &TokenBudget) {
        *self.totals.entry(budget.total).or_insert(0) += 1;
        *self
            .per_modality
            .entry(budget.modality)
            .or_default()
            .entry(budget.total)
            .or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        for (&value, &n) in &other.totals {
            *self.totals.entry(value).or_insert(0) += n;
        }
        for (&kind, hist) in &other.per_modality {
            let mine = self.per_modality.entry(kind).or_default();
            for (&value, &n) in hist {
                *mine.entry(value).or_insert(0) += n;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    /// Finalizes into corpus statistics with the given histogram bucket
    /// width. Empty buckets are omitted.
    pub fn finalize(&self, bucket_width: u64) -> Result<CorpusStats, BudgetError> {
        if self.totals.is_empty() {
            return Err(BudgetError::EmptyCorpus);
        }
        let bucket_width = bucket_width.max(1);
        let global = summarize(&self.totals);

        let mut buckets: BTreeMap<u64, u64> = BTreeMap::new();
        for (&value, &n) in &self.totals {
            *buckets.entry(value / bucket_width).or_insert(0) += n;
        }
        let histogram = buckets
            .into_iter()
            .map(|(index, count)| HistogramBucket {
                start: index * bucket_width,
                end: (index + 1) * bucket_width,
                count,
            })
            .collect();

        let per_modality = self
            .per_modality
            .iter()
            .map(|(&kind, hist)| (kind, summarize(hist)))
            .collect();

        Ok(CorpusStats {
            count: global.count,
            mean: global.mean,
            p50: global.p50,
            p90: global.p90,
            p99: global.p99,
            histogram,
            per_modality,
        })
    }
}

/// One-shot statistics over a stream of budgets.
pub fn corpus_stats<'a, I>(budgets: I, bucket_width: u64) -> Result<CorpusStats, BudgetError>
where
    I: IntoIterator<Item = &'a TokenBudget>,
{
    let mut acc = StatsAccumulator::new();
    for budget in budgets {
        acc.add(budget);
    }
    acc.finalize(bucket_width)
}
