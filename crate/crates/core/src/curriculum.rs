//! Stage configuration, annealed data ordering, cosine learning-rate
//! schedule, and reasoning/direct instruction mixing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Sample;

/// Training stages, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    S1,
    S1_5,
    S2,
    S3,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S1_5, Stage::S2, Stage::S3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::S1 => "s1",
            Stage::S1_5 => "s1_5",
            Stage::S2 => "s2",
            Stage::S3 => "s3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    ProjectorOnly,
    ProjectorAndLlm,
}

/// Per-stage hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub lr_max: f64,
    pub batch_size: u32,
    pub epochs: u32,
    pub trainable: Trainable,
    pub dataset_size_hint: u64,
}

impl StageConfig {
    /// Built-in defaults for each stage.
    pub fn for_stage(stage: Stage) -> StageConfig {
        match stage {
            Stage::S1 => StageConfig {
                stage,
                lr_max: 1e-4,
                batch_size: 96,
                epochs: 1,
                trainable: Trainable::ProjectorOnly,
                dataset_size_hint: 7_500_000,
            },
            Stage::S1_5 => StageConfig {
                stage,
                lr_max: 1e-5,
                batch_size: 96,
                epochs: 1,
                trainable: Trainable::ProjectorAndLlm,
                dataset_size_hint: 8_000_000,
            },
            Stage::S2 => StageConfig {
                stage,
                lr_max: 1e-5,
                batch_size: 192,
                epochs: 1,
                trainable: Trainable::ProjectorAndLlm,
                dataset_size_hint: 11_500_000,
            },
            Stage::S3 => StageConfig {
                stage,
                lr_max: 2e-6,
                batch_size: 192,
                epochs: 1,
                trainable: Trainable::ProjectorAndLlm,
                dataset_size_hint: 200_000,
            },
        }
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
/// Both endpoints are returned exactly; `step` is clamped to the stage.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    let total_steps = total_steps.max(1);
    let step = step.min(total_steps);
    if step == 0 {
        return lr_max;
    }
    if step == total_steps {
        return lr_min;
    }
    let progress = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub step: u64,
    pub sample_id: String,
    pub lr: f64,
}

/// Ordered, learning-rate-annotated sample stream for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    /// Index of the first tier-2 entry when annealing is enabled.
    pub tier_boundary: Option<usize>,
}

/// Orders a stage's samples and attaches the per-step learning rate.
///
/// With annealing enabled, tier-1 samples are shuffled and emitted first,
/// then tier-2 samples: the higher-quality subset lands on the decayed
/// tail of the cosine schedule. Disabled, the whole set is shuffled
/// uniformly. Both modes are deterministic in `seed`.
pub fn annealed_order(
    samples: &[Sample],
    enabled: bool,
    seed: u64,
    lr_max: f64,
    lr_min: f64,
) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ordered: Vec<&Sample>;
    let tier_boundary;
    if enabled {
        let mut tier1: Vec<&Sample> = samples.iter().filter(|s| s.quality_tier == 1).collect();
        let mut tier2: Vec<&Sample> = samples.iter().filter(|s| s.quality_tier != 1).collect();
        tier1.shuffle(&mut rng);
        tier2.shuffle(&mut rng);
        tier_boundary = Some(tier1.len());
        ordered = tier1;
        ordered.extend(tier2);
    } else {
        ordered = samples.iter().collect();
        ordered.shuffle(&mut rng);
        tier_boundary = None;
    }

    let total = ordered.len() as u64;
    let entries = ordered
        .into_iter()
        .enumerate()
        .map(|(i, sample)| ScheduleEntry {
            step: i as u64,
            sample_id: sample.id.clone(),
            lr: cosine_lr(i as u64, total, lr_max, lr_min),
        })
        .collect();

    Schedule {
        entries,
        tier_boundary,
    }
}

/// Configuration for mixing reasoning (CoT) and direct-answer data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTMixConfig {
    /// Appended once to every CoT query.
    pub cot_prompt: String,
    /// CoT : non-CoT draw ratio per round.
    pub ratio: (u32, u32),
    /// Section names every CoT response must carry, in order. Each name
    /// `x` is matched as the tag pair `<x>...</x>`.
    pub required_steps: Vec<String>,
    pub seed: u64,
    /// Emit rounds in strict alternation; disable to shuffle the mixed
    /// output globally instead.
    pub strict_alternation: bool,
}

pub const DEFAULT_COT_PROMPT: &str = "Please think step by step.";

impl Default for CoTMixConfig {
    fn default() -> Self {
        CoTMixConfig {
            cot_prompt: DEFAULT_COT_PROMPT.to_string(),
            ratio: (1, 1),
            required_steps: ["summary", "caption", "reasoning", "conclusion"]
                .map(String::from)
                .to_vec(),
            seed: 0,
            strict_alternation: true,
        }
    }
}

/// An instruction-tuning record: a core sample plus the query/response
/// text the mixer operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    #[serde(flatten)]
    pub sample: Sample,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub response: String,
    #[serde(default)]
    pub cot_prompt_applied: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CurriculumError {
    #[error("{which} pool is empty")]
    EmptyPool { which: &'static str },
    #[error("{} responses are missing required sections: {}", ids.len(), ids.join(", "))]
    StructureViolation { ids: Vec<String> },
}

/// Structure check result for one CoT response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotStructure {
    /// Required sections with no complete `<x>...</x>` pair.
    pub missing: Vec<String>,
    /// Present sections appear in the required order.
    pub ordered: bool,
}

impl CotStructure {
    pub fn is_valid(&self) -> bool {
        self.missing.is_empty() && self.ordered
    }
}

/// Checks that a response carries every required section tag pair, in
/// order. Tags are literal and case-sensitive.
pub fn validate_cot_structure(response: &str, required_steps: &[String]) -> CotStructure {
    let mut missing = Vec::new();
    let mut ordered = true;
    let mut cursor = 0usize;

    for step in required_steps {
        let open = format!("<{step}>");
        let close = format!("</{step}>");
        let open_at = response.find(&open);
        let close_at = open_at.and_then(|start| {
            response[start + open.len()..]
                .find(&close)
                .map(|offset| start + open.len() + offset)
        });
        match (open_at, close_at) {
            (Some(start), Some(end)) => {
                if start < cursor {
                    ordered = false;
                }
                cursor = cursor.max(end + close.len());
            }
            _ => missing.push(step.clone()),
        }
    }

    CotStructure { missing, ordered }
}

fn append_prompt_once(query: &mut String, prompt: &str) {
    if query.ends_with(prompt) {
        return;
    }
    if query.is_empty() {
        query.push_str(prompt);
    } else {
        query.push(' ');
        query.push_str(prompt);
    }
}

/// Mixes CoT and non-CoT records at the configured ratio.
///
/// Both pools are shuffled with the seed, then drawn in rounds of
/// `ratio.0` CoT + `ratio.1` non-CoT until either pool cannot fill a
/// round. Every emitted CoT query carries the prompt suffix exactly once;
/// CoT responses failing the structure check abort the mix with their
/// ids.
pub fn mix_cot(
    cot: &[InstructionRecord],
    non_cot: &[InstructionRecord],
    cfg: &CoTMixConfig,
) -> Result<Vec<InstructionRecord>, CurriculumError> {
    if cot.is_empty() {
        return Err(CurriculumError::EmptyPool { which: "cot" });
    }
    if non_cot.is_empty() {
        return Err(CurriculumError::EmptyPool { which: "non_cot" });
    }

    let mut bad_ids: Vec<String> = cot
        .iter()
        .filter(|r| !validate_cot_structure(&r.response, &cfg.required_steps).is_valid())
        .map(|r| r.sample.id.clone())
        .collect();
    if !bad_ids.is_empty() {
        bad_ids.sort();
        return Err(CurriculumError::StructureViolation { ids: bad_ids });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cot_order: Vec<&InstructionRecord> = cot.iter().collect();
    let mut non_cot_order: Vec<&InstructionRecord> = non_cot.iter().collect();
    cot_order.shuffle(&mut rng);
    non_cot_order.shuffle(&mut rng);

    let (per_round_cot, per_round_non) = (cfg.ratio.0 as usize, cfg.ratio.1 as usize);
    let rounds = (cot_order.len() / per_round_cot).min(non_cot_order.len() / per_round_non);

    let mut mixed = Vec::with_capacity(rounds * (per_round_cot + per_round_non));
    for round in 0..rounds {
        for &record in &cot_order[round * per_round_cot..(round + 1) * per_round_cot] {
            let mut out = record.clone();
            append_prompt_once(&mut out.query, &cfg.cot_prompt);
            out.cot_prompt_applied = true;
            out.sample.is_cot = true;
            mixed.push(out);
        }
        for &record in &non_cot_order[round * per_round_non..(round + 1) * per_round_non] {
            let mut out = record.clone();
            out.cot_prompt_applied = false;
            out.sample.is_cot = false;
            mixed.push(out);
        }
    }

    if !cfg.strict_alternation {
        mixed.shuffle(&mut rng);
    }
    Ok(mixed)
}
