//! Declarative pipeline configuration: one TOML file mapping 1:1 onto the
//! library config types. Unknown keys are errors and are all reported at
//! once, not one at a time.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use valleyforge_core::curriculum::CoTMixConfig;
use valleyforge_core::model::{EagleConfig, VisionConfig};
use valleyforge_core::packing::{PackConfig, PackPolicy};
use valleyforge_core::projector::{visual_vocab_dim, ProjectorSpec, ProjectorVariant};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    vision: VisionSection,
    eagle: EagleSection,
    pack: PackSection,
    stage: StageSection,
    cot_mix: CotMixSection,
    projector: ProjectorSection,
    eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VisionSection {
    base_resolution: u32,
    patch_grid: u32,
    downsample: u32,
    max_slices: u32,
    use_thumbnail: bool,
    tile_overhead_tokens: u64,
    sample_overhead_tokens: u64,
}

impl Default for VisionSection {
    fn default() -> Self {
        let v = VisionConfig::default();
        VisionSection {
            base_resolution: v.base_resolution,
            patch_grid: v.patch_grid,
            downsample: v.downsample,
            max_slices: v.max_slices,
            use_thumbnail: v.use_thumbnail,
            tile_overhead_tokens: v.tile_overhead_tokens,
            sample_overhead_tokens: v.sample_overhead_tokens,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EagleSection {
    enabled: bool,
    patch_size: u32,
    spatial_merge: u32,
    max_pixels_infer: Option<u64>,
}

impl Default for EagleSection {
    fn default() -> Self {
        let e = EagleConfig::default();
        EagleSection {
            enabled: e.enabled,
            patch_size: e.patch_size,
            spatial_merge: e.spatial_merge,
            max_pixels_infer: e.max_pixels_infer,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PackSection {
    max_len: u64,
    policy: PackPolicy,
}

impl Default for PackSection {
    fn default() -> Self {
        let p = PackConfig::default();
        PackSection {
            max_len: p.max_len,
            policy: p.policy,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StageSection {
    /// Floor of the cosine schedule.
    lr_min: f64,
    /// Defer tier-2 data to the tail of the stage.
    annealed: bool,
    /// Optional overrides of the built-in per-stage defaults.
    lr_max: Option<f64>,
    batch_size: Option<u32>,
    epochs: Option<u32>,
}

impl Default for StageSection {
    fn default() -> Self {
        StageSection {
            lr_min: 0.0,
            annealed: true,
            lr_max: None,
            batch_size: None,
            epochs: None,
        }
    }
}

/// Per-stage hyperparameter overrides from the config file.
#[derive(Debug, Clone, Serialize)]
pub struct StageOverrides {
    pub lr_max: Option<f64>,
    pub batch_size: Option<u32>,
    pub epochs: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CotMixSection {
    cot_prompt: String,
    ratio: (u32, u32),
    required_steps: Vec<String>,
    strict_alternation: bool,
}

impl Default for CotMixSection {
    fn default() -> Self {
        let c = CoTMixConfig::default();
        CotMixSection {
            cot_prompt: c.cot_prompt,
            ratio: c.ratio,
            required_steps: c.required_steps,
            strict_alternation: c.strict_alternation,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProjectorSection {
    variant: String,
    /// Spatial factor: conv stride or pixelshuffle ratio.
    factor: u32,
    d_vis: u64,
    /// Defaults to one fifth of `llm_vocab_size`.
    d_h: Option<u64>,
    d_llm: u64,
    llm_vocab_size: u64,
    softmax_vocab: bool,
}

impl Default for ProjectorSection {
    fn default() -> Self {
        ProjectorSection {
            variant: "conv_adapter".to_string(),
            factor: 2,
            d_vis: 1152,
            d_h: None,
            d_llm: 3584,
            llm_vocab_size: 151_936,
            softmax_vocab: true,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    /// Accept only a bare leading answer letter.
    strict_choice: bool,
}

/// Fully resolved configuration: file values over defaults, hashed for
/// manifest headers.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub vision: VisionConfig,
    pub eagle: EagleConfig,
    pub pack: PackConfig,
    pub lr_min: f64,
    pub annealed: bool,
    pub stage_overrides: StageOverrides,
    pub cot_mix: CoTMixConfig,
    pub projector: ProjectorSpec,
    pub llm_vocab_size: u64,
    pub strict_choice: bool,
    #[serde(skip)]
    pub hash: String,
}

// Known keys per section, used to report every unknown key at once.
const SECTIONS: &[(&str, &[&str])] = &[
    (
        "vision",
        &[
            "base_resolution",
            "patch_grid",
            "downsample",
            "max_slices",
            "use_thumbnail",
            "tile_overhead_tokens",
            "sample_overhead_tokens",
        ],
    ),
    (
        "eagle",
        &["enabled", "patch_size", "spatial_merge", "max_pixels_infer"],
    ),
    ("pack", &["max_len", "policy"]),
    (
        "stage",
        &["lr_min", "annealed", "lr_max", "batch_size", "epochs"],
    ),
    (
        "cot_mix",
        &[
            "cot_prompt",
            "ratio",
            "required_steps",
            "strict_alternation",
        ],
    ),
    (
        "projector",
        &[
            "variant",
            "factor",
            "d_vis",
            "d_h",
            "d_llm",
            "llm_vocab_size",
            "softmax_vocab",
        ],
    ),
    ("eval", &["strict_choice"]),
];

/// All unknown key paths in the parsed document.
fn unknown_keys(value: &toml::Value) -> Vec<String> {
    let mut unknown = Vec::new();
    let Some(table) = value.as_table() else {
        return vec!["<root is not a table>".to_string()];
    };
    for (section, entry) in table {
        match SECTIONS.iter().find(|(name, _)| name == section) {
            None => unknown.push(section.clone()),
            Some((_, keys)) => {
                if let Some(inner) = entry.as_table() {
                    for key in inner.keys() {
                        if !keys.contains(&key.as_str()) {
                            unknown.push(format!("{section}.{key}"));
                        }
                    }
                }
            }
        }
    }
    unknown
}

#[derive(Debug)]
pub enum ConfigError {
    /// Exhaustive list of unknown keys.
    UnknownKeys(Vec<String>),
    Invalid(String),
    Io(anyhow::Error),
}

fn resolve(file: FileConfig, seed: u64) -> Result<ResolvedConfig, ConfigError> {
    let variant = match file.projector.variant.as_str() {
        "conv_adapter" => ProjectorVariant::ConvAdapter {
            stride: file.projector.factor,
        },
        "pixel_shuffle" => ProjectorVariant::PixelShuffle {
            ratio: file.projector.factor,
        },
        other => {
            return Err(ConfigError::Invalid(format!(
                "projector.variant must be conv_adapter or pixel_shuffle, got {other:?}"
            )))
        }
    };
    let d_h = file
        .projector
        .d_h
        .unwrap_or_else(|| visual_vocab_dim(file.projector.llm_vocab_size));

    let mut config = ResolvedConfig {
        vision: VisionConfig {
            base_resolution: file.vision.base_resolution,
            patch_grid: file.vision.patch_grid,
            downsample: file.vision.downsample,
            max_slices: file.vision.max_slices,
            use_thumbnail: file.vision.use_thumbnail,
            tile_overhead_tokens: file.vision.tile_overhead_tokens,
            sample_overhead_tokens: file.vision.sample_overhead_tokens,
        },
        eagle: EagleConfig {
            enabled: file.eagle.enabled,
            patch_size: file.eagle.patch_size,
            spatial_merge: file.eagle.spatial_merge,
            max_pixels_infer: file.eagle.max_pixels_infer,
        },
        pack: PackConfig {
            max_len: file.pack.max_len,
            policy: file.pack.policy,
            seed,
        },
        lr_min: file.stage.lr_min,
        annealed: file.stage.annealed,
        stage_overrides: StageOverrides {
            lr_max: file.stage.lr_max,
            batch_size: file.stage.batch_size,
            epochs: file.stage.epochs,
        },
        cot_mix: CoTMixConfig {
            cot_prompt: file.cot_mix.cot_prompt,
            ratio: file.cot_mix.ratio,
            required_steps: file.cot_mix.required_steps,
            seed,
            strict_alternation: file.cot_mix.strict_alternation,
        },
        projector: ProjectorSpec {
            variant,
            d_vis: file.projector.d_vis,
            d_h,
            d_llm: file.projector.d_llm,
            softmax_vocab: file.projector.softmax_vocab,
        },
        llm_vocab_size: file.projector.llm_vocab_size,
        strict_choice: file.eval.strict_choice,
        hash: String::new(),
    };

    // Hash the resolved values, not the file text, so servings of the
    // defaults hash identically with and without a config file. The seed
    // is excluded: it is recorded separately in manifest headers.
    let mut canonical = serde_json::to_value(&config).expect("config serializes");
    if let Some(pack) = canonical.get_mut("pack").and_then(|p| p.as_object_mut()) {
        pack.remove("seed");
    }
    if let Some(mix) = canonical.get_mut("cot_mix").and_then(|m| m.as_object_mut()) {
        mix.remove("seed");
    }
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    config.hash = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    Ok(config)
}

/// Loads the optional config file and resolves it over the defaults.
pub fn load(path: Option<&Path>, seed: u64) -> Result<ResolvedConfig, ConfigError> {
    let file = match path {
        None => FileConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(ConfigError::Io)?;
            let value: toml::Value = toml::from_str(&text)
                .map_err(|e| ConfigError::Invalid(format!("config parse error: {e}")))?;
            let unknown = unknown_keys(&value);
            if !unknown.is_empty() {
                return Err(ConfigError::UnknownKeys(unknown));
            }
            value
                .try_into()
                .map_err(|e| ConfigError::Invalid(format!("config schema error: {e}")))?
        }
    };
    resolve(file, seed)
}
