//! Shared data model: samples, modalities, and the vision/eagle
//! configuration blocks consumed by every pipeline stage.
//!
//! All types here are immutable values and safe to share across threads.

use serde::{Deserialize, Serialize};

/// Input modality of a sample. The number of `image_dims` entries a sample
/// must carry is tied to the variant: none for text, one for a single
/// image, one per image for multi-image, one per frame for video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Modality {
    Text,
    SingleImage,
    MultiImage {
        count: u32,
    },
    Video {
        #[serde(rename = "count")]
        frames: u32,
    },
}

impl Modality {
    /// Number of `image_dims` entries this modality requires.
    pub fn expected_dims(&self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::SingleImage => 1,
            Modality::MultiImage { count } => *count as usize,
            Modality::Video { frames } => *frames as usize,
        }
    }

    pub fn kind(&self) -> ModalityKind {
        match self {
            Modality::Text => ModalityKind::Text,
            Modality::SingleImage => ModalityKind::SingleImage,
            Modality::MultiImage { .. } => ModalityKind::MultiImage,
            Modality::Video { .. } => ModalityKind::Video,
        }
    }
}

/// Variant-only view of [`Modality`], used for grouping and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Text,
    SingleImage,
    MultiImage,
    Video,
}

impl ModalityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModalityKind::Text => "text",
            ModalityKind::SingleImage => "single_image",
            ModalityKind::MultiImage => "multi_image",
            ModalityKind::Video => "video",
        }
    }
}

/// One training/eval instance. Text content is pre-tokenized upstream;
/// only the token count travels through the pipeline. Image payloads are
/// referenced by opaque path, never decoded here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub modality: Modality,
    /// One `(width, height)` entry per image/frame, empty for text.
    #[serde(default)]
    pub image_dims: Vec<(u32, u32)>,
    #[serde(default)]
    pub text_tokens: u64,
    /// 1 = base quality, 2 = deferred high-quality subset.
    #[serde(default = "default_quality_tier")]
    pub quality_tier: u8,
    #[serde(default)]
    pub is_cot: bool,
    #[serde(default)]
    pub payload_path: Option<String>,
}

fn default_quality_tier() -> u8 {
    1
}

/// Deterministic token-count stand-in for test fixtures: whitespace-split
/// word count. Real corpora arrive pre-tokenized; nothing in the pipeline
/// calls this on production data.
pub fn whitespace_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Geometry and token constants for the tiling vision branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    /// Side of one square tile in pixels.
    pub base_resolution: u32,
    /// Tokens per side emitted by the vision encoder for one tile.
    pub patch_grid: u32,
    /// Spatial reduction factor of the adapter (per axis).
    pub downsample: u32,
    /// Upper bound on grid tiles for a single image (thumbnail excluded).
    pub max_slices: u32,
    /// Append a full-image thumbnail tile when an image is split.
    pub use_thumbnail: bool,
    pub tile_overhead_tokens: u64,
    pub sample_overhead_tokens: u64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig {
            base_resolution: 384,
            patch_grid: 27,
            downsample: 2,
            max_slices: 9,
            use_thumbnail: true,
            tile_overhead_tokens: 0,
            sample_overhead_tokens: 0,
        }
    }
}

impl VisionConfig {
    /// Token grid side after the adapter's spatial reduction.
    pub fn downsampled_side(&self) -> u32 {
        self.patch_grid.div_ceil(self.downsample)
    }

    /// Tokens one tile contributes to the sequence.
    pub fn tokens_per_tile(&self) -> u64 {
        let side = self.downsampled_side() as u64;
        side * side
    }
}

/// Parallel vision branch configuration. During training its token count
/// is clamped to the tiling branch output; at inference only the optional
/// pixel budget applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EagleConfig {
    pub enabled: bool,
    pub patch_size: u32,
    pub spatial_merge: u32,
    /// Optional inference pixel budget; images above it are downscaled
    /// with preserved aspect ratio. The training cap is derived from the
    /// tiling branch, not stored here.
    pub max_pixels_infer: Option<u64>,
}

impl Default for EagleConfig {
    fn default() -> Self {
        EagleConfig {
            enabled: false,
            patch_size: 14,
            spatial_merge: 2,
            max_pixels_infer: None,
        }
    }
}

/// A single invariant violation found by [`validate_sample`]. The serde
/// tag doubles as the machine-readable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Violation {
    /// `image_dims` length does not match the modality.
    DimCountMismatch { expected: usize, actual: usize },
    /// An image dimension is zero.
    NonPositiveDimension {
        index: usize,
        width: u32,
        height: u32,
    },
    /// MultiImage requires count >= 2, Video requires frames >= 1.
    InvalidModalityCount { minimum: u32, actual: u32 },
    /// Only tiers 1 and 2 exist.
    InvalidQualityTier { actual: u8 },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::DimCountMismatch { .. } => "DimCountMismatch",
            Violation::NonPositiveDimension { .. } => "NonPositiveDimension",
            Violation::InvalidModalityCount { .. } => "InvalidModalityCount",
            Violation::InvalidQualityTier { .. } => "InvalidQualityTier",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimCountMismatch { expected, actual } => {
                write!(
                    f,
                    "image_dims has {actual} entries, modality requires {expected}"
                )
            }
            Violation::NonPositiveDimension {
                index,
                width,
                height,
            } => {
                write!(f, "image_dims[{index}] = {width}x{height} has a zero side")
            }
            Violation::InvalidModalityCount { minimum, actual } => {
                write!(f, "modality count {actual} is below the minimum {minimum}")
            }
            Violation::InvalidQualityTier { actual } => {
                write!(f, "quality_tier {actual} is not 1 or 2")
            }
        }
    }
}

/// Reports every invariant violation in `sample`. Pure and deterministic;
/// an empty result means the sample is valid. Validation never aborts.
pub fn validate_sample(sample: &Sample) -> Vec<Violation> {
    let mut violations = Vec::new();

    match sample.modality {
        Modality::MultiImage { count } if count < 2 => {
            violations.push(Violation::InvalidModalityCount {
                minimum: 2,
                actual: count,
            });
        }
        Modality::Video { frames } if frames < 1 => {
            violations.push(Violation::InvalidModalityCount {
                minimum: 1,
                actual: frames,
            });
        }
        _ => {}
    }

    let expected = sample.modality.expected_dims();
    if sample.image_dims.len() != expected {
        violations.push(Violation::DimCountMismatch {
            expected,
            actual: sample.image_dims.len(),
        });
    }

    for (index, &(width, height)) in sample.image_dims.iter().enumerate() {
        if width == 0 || height == 0 {
            violations.push(Violation::NonPositiveDimension {
                index,
                width,
                height,
            });
        }
    }

    if sample.quality_tier != 1 && sample.quality_tier != 2 {
        violations.push(Violation::InvalidQualityTier {
            actual: sample.quality_tier,
        });
    }

    violations
}
