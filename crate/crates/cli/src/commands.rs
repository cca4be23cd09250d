//! Command implementations. Every command reads JSONL, applies its shard
//! filter, validates exhaustively (all problems reported in one run),
//! and writes deterministic manifests.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use valleyforge_core::budget::{
    budget_sample, BudgetMode, BudgetOptions, StatsAccumulator, TokenBudget,
};
use valleyforge_core::curriculum::{
    annealed_order, mix_cot, CurriculumError, InstructionRecord, Stage, StageConfig,
};
use valleyforge_core::eval::{
    bleu2, build_report, cider, rouge_l, score_cyclic, CaptionMetrics, EvalError, McQuestion,
};
use valleyforge_core::model::{validate_sample, ModalityKind, Sample};
use valleyforge_core::packing::{packing_stats, plan_packs, Pack, PackingError};
use valleyforge_core::projector::{
    lr_scale, projector_param_breakdown, visual_vocab_dim, ProjectorVariant,
};
use valleyforge_core::tiling::plan_tiling;
use valleyforge_core::{derive_seed, stable_hash64};

use crate::config::ResolvedConfig;
use crate::manifest::{header, read_jsonl, write_json_doc, write_manifest, LineDiagnostic};

/// Failures are split by exit code: data problems (exit 2, JSON
/// diagnostics on stderr) vs operational errors (exit 1).
pub enum CliError {
    Data(Vec<Value>),
    Op(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(error: anyhow::Error) -> Self {
        CliError::Op(error)
    }
}

fn data_error(diagnostics: Vec<LineDiagnostic>) -> CliError {
    CliError::Data(diagnostics.into_iter().map(|d| d.0).collect())
}

/// `i/N` shard spec: keep records whose stable id hash lands on `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardSpec {
    pub index: u32,
    pub total: u32,
}

impl ShardSpec {
    pub fn keeps(&self, id: &str) -> bool {
        stable_hash64(id.as_bytes()) % self.total as u64 == self.index as u64
    }
}

impl FromStr for ShardSpec {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (index, total) = text
            .split_once('/')
            .ok_or_else(|| format!("shard spec {text:?} is not of the form i/N"))?;
        let index: u32 = index
            .parse()
            .map_err(|_| format!("bad shard index in {text:?}"))?;
        let total: u32 = total
            .parse()
            .map_err(|_| format!("bad shard total in {text:?}"))?;
        if total == 0 || index >= total {
            return Err(format!("shard {index}/{total} needs 0 <= index < total"));
        }
        Ok(ShardSpec { index, total })
    }
}

impl std::fmt::Display for ShardSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.index, self.total)
    }
}

/// Shared per-invocation context.
pub struct Ctx {
    pub config: ResolvedConfig,
    pub seed: Option<u64>,
    pub shard: Option<ShardSpec>,
    pub dry_run: bool,
}

impl Ctx {
    fn header(&self, schema: &str, extra: Map<String, Value>) -> Value {
        let mut extra = extra;
        if let Some(shard) = self.shard {
            extra.insert("shard".to_string(), json!(shard.to_string()));
        }
        header(schema, &self.config.hash, extra)
    }

    fn sub_seed(&self, command: &str) -> Result<u64, CliError> {
        let master = self.seed.ok_or_else(|| {
            CliError::Op(anyhow::anyhow!(
                "--seed is required for randomized command {command}"
            ))
        })?;
        let shard_index = self.shard.map(|s| s.index).unwrap_or(0);
        Ok(derive_seed(master, command, shard_index))
    }

    fn dry_run_summary(&self, command: &str, records: usize) -> Result<(), CliError> {
        println!(
            "{}",
            json!({"command": command, "records": records, "dry_run": true})
        );
        Ok(())
    }
}

fn shard_filter<T>(
    records: Vec<T>,
    shard: Option<ShardSpec>,
    id_of: impl Fn(&T) -> &str,
) -> Vec<T> {
    match shard {
        None => records,
        Some(spec) => records
            .into_iter()
            .filter(|r| spec.keeps(id_of(r)))
            .collect(),
    }
}

/// Reads the sample file, applies the shard filter, and validates every
/// record. Any parse or invariant failure aborts with exit-2 diagnostics.
fn read_valid_samples(path: &Path, ctx: &Ctx) -> Result<Vec<Sample>, CliError> {
    let (samples, mut diagnostics) = read_jsonl::<Sample>(path).map_err(CliError::Op)?;
    let samples = shard_filter(samples, ctx.shard, |s: &Sample| &s.id);
    for sample in &samples {
        let violations = validate_sample(sample);
        if !violations.is_empty() {
            diagnostics.push(LineDiagnostic(json!({
                "path": path.display().to_string(),
                "id": sample.id,
                "violations": violations,
            })));
        }
    }
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    Ok(samples)
}

pub fn cmd_tile(input: &Path, output: &Path, ctx: &Ctx) -> Result<(), CliError> {
    let samples = read_valid_samples(input, ctx)?;
    if ctx.dry_run {
        return ctx.dry_run_summary("tile", samples.len());
    }
    let lines = samples.iter().map(|sample| {
        let plans = plan_tiling(sample, &ctx.config.vision);
        json!({"id": sample.id, "plans": plans})
    });
    write_manifest(output, ctx.header("tiling", Map::new()), lines)?;
    log::info!("tiled {} samples into {}", samples.len(), output.display());
    Ok(())
}

pub fn cmd_budget(
    input: &Path,
    output: &Path,
    mode: BudgetMode,
    letterbox_untiled: bool,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let samples = read_valid_samples(input, ctx)?;
    if ctx.dry_run {
        return ctx.dry_run_summary("budget", samples.len());
    }
    let opts = BudgetOptions {
        mode,
        letterbox_untiled,
    };
    let lines = samples.iter().map(|sample| {
        let budget = budget_sample(sample, &ctx.config.vision, &ctx.config.eagle, &opts);
        serde_json::to_value(budget).expect("budget serializes")
    });
    let mut extra = Map::new();
    extra.insert("mode".to_string(), serde_json::to_value(mode).unwrap());
    write_manifest(output, ctx.header("budget", extra), lines)?;
    Ok(())
}

/// Pack inputs: either full budget records or bare `{id, len}` pairs.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PackInput {
    Budget(TokenBudget),
    Bare { id: String, len: u64 },
}

impl PackInput {
    fn id(&self) -> &str {
        match self {
            PackInput::Budget(b) => &b.sample_id,
            PackInput::Bare { id, .. } => id,
        }
    }

    fn length(&self) -> u64 {
        match self {
            PackInput::Budget(b) => b.total,
            PackInput::Bare { len, .. } => *len,
        }
    }

    fn modality(&self) -> Option<ModalityKind> {
        match self {
            PackInput::Budget(b) => Some(b.modality),
            PackInput::Bare { .. } => None,
        }
    }
}

pub fn cmd_pack(
    input: &Path,
    output: &Path,
    stats_out: Option<&Path>,
    segregate_modality: bool,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let (records, diagnostics) = read_jsonl::<PackInput>(input).map_err(CliError::Op)?;
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    let records = shard_filter(records, ctx.shard, |r: &PackInput| r.id());
    if ctx.dry_run {
        return ctx.dry_run_summary("pack", records.len());
    }

    // Group by modality when segregation is on; one joint group otherwise.
    let mut groups: BTreeMap<Option<ModalityKind>, Vec<(String, u64)>> = BTreeMap::new();
    for record in &records {
        let key = if segregate_modality {
            record.modality()
        } else {
            None
        };
        groups
            .entry(key)
            .or_default()
            .push((record.id().to_string(), record.length()));
    }

    let mut packs: Vec<Pack> = Vec::new();
    for group in groups.values() {
        let planned = plan_packs(group, &ctx.config.pack).map_err(|error| match error {
            PackingError::OversizedSample {
                ref id,
                len,
                max_len,
            } => CliError::Data(vec![json!({
                "path": input.display().to_string(),
                "id": id,
                "error": error.to_string(),
                "len": len,
                "max_len": max_len,
            })]),
            other => CliError::Op(anyhow::Error::new(other)),
        })?;
        for mut pack in planned {
            pack.pack_id = packs.len() as u64;
            packs.push(pack);
        }
    }

    let mut extra = Map::new();
    extra.insert("max_len".to_string(), json!(ctx.config.pack.max_len));
    extra.insert(
        "policy".to_string(),
        serde_json::to_value(ctx.config.pack.policy).unwrap(),
    );
    extra.insert("segregate_modality".to_string(), json!(segregate_modality));
    let lines = packs
        .iter()
        .map(|p| serde_json::to_value(p).expect("pack serializes"));
    write_manifest(output, ctx.header("pack", extra), lines)?;

    if let Some(stats_path) = stats_out {
        let lengths: Vec<(String, u64)> = records
            .iter()
            .map(|r| (r.id().to_string(), r.length()))
            .collect();
        let stats = packing_stats(&lengths, &packs, &ctx.config.pack);
        let mut doc = serde_json::to_value(&stats).expect("stats serialize");
        let object = doc.as_object_mut().unwrap();
        object.insert("schema".to_string(), json!("pack-stats/1"));
        object.insert("config_hash".to_string(), json!(ctx.config.hash));
        write_json_doc(stats_path, &doc)?;
    }
    Ok(())
}

pub fn cmd_schedule(
    input: &Path,
    output: &Path,
    stage: Stage,
    uniform: bool,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let seed = ctx.sub_seed("schedule")?;
    let samples = read_valid_samples(input, ctx)?;
    if ctx.dry_run {
        return ctx.dry_run_summary("schedule", samples.len());
    }

    let mut stage_config = StageConfig::for_stage(stage);
    let overrides = &ctx.config.stage_overrides;
    if let Some(lr_max) = overrides.lr_max {
        stage_config.lr_max = lr_max;
    }
    if let Some(batch_size) = overrides.batch_size {
        stage_config.batch_size = batch_size;
    }
    if let Some(epochs) = overrides.epochs {
        stage_config.epochs = epochs;
    }

    let annealed = !uniform && ctx.config.annealed;
    let schedule = annealed_order(
        &samples,
        annealed,
        seed,
        stage_config.lr_max,
        ctx.config.lr_min,
    );

    let mut extra = Map::new();
    extra.insert(
        "stage".to_string(),
        serde_json::to_value(&stage_config).unwrap(),
    );
    extra.insert(
        "order".to_string(),
        json!(if annealed { "annealed" } else { "uniform" }),
    );
    extra.insert("seed".to_string(), json!(ctx.seed.unwrap()));
    extra.insert("total_steps".to_string(), json!(schedule.entries.len()));
    if let Some(boundary) = schedule.tier_boundary {
        extra.insert("tier_boundary".to_string(), json!(boundary));
    }
    let lines = schedule
        .entries
        .iter()
        .map(|entry| json!({"step": entry.step, "sample_id": entry.sample_id, "lr": entry.lr}));
    write_manifest(output, ctx.header("schedule", extra), lines)?;
    Ok(())
}

fn read_instruction_records(path: &Path, ctx: &Ctx) -> Result<Vec<InstructionRecord>, CliError> {
    let (records, mut diagnostics) = read_jsonl::<InstructionRecord>(path).map_err(CliError::Op)?;
    let records = shard_filter(records, ctx.shard, |r: &InstructionRecord| &r.sample.id);
    for record in &records {
        let violations = validate_sample(&record.sample);
        if !violations.is_empty() {
            diagnostics.push(LineDiagnostic(json!({
                "path": path.display().to_string(),
                "id": record.sample.id,
                "violations": violations,
            })));
        }
    }
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    Ok(records)
}

pub fn cmd_mix_cot(
    cot_path: &Path,
    non_cot_path: &Path,
    output: &Path,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let seed = ctx.sub_seed("mix-cot")?;
    let cot = read_instruction_records(cot_path, ctx)?;
    let non_cot = read_instruction_records(non_cot_path, ctx)?;
    if ctx.dry_run {
        return ctx.dry_run_summary("mix-cot", cot.len() + non_cot.len());
    }

    let mut mix_config = ctx.config.cot_mix.clone();
    mix_config.seed = seed;
    let mixed = mix_cot(&cot, &non_cot, &mix_config).map_err(|error| match error {
        CurriculumError::StructureViolation { ref ids } => CliError::Data(
            ids.iter()
                .map(|id| {
                    json!({
                        "path": cot_path.display().to_string(),
                        "id": id,
                        "error": "missing or out-of-order reasoning sections",
                    })
                })
                .collect(),
        ),
        other => CliError::Op(anyhow::Error::new(other)),
    })?;

    let mut extra = Map::new();
    extra.insert(
        "ratio".to_string(),
        json!([mix_config.ratio.0, mix_config.ratio.1]),
    );
    extra.insert("seed".to_string(), json!(ctx.seed.unwrap()));
    let lines = mixed
        .iter()
        .map(|r| serde_json::to_value(r).expect("record serializes"));
    write_manifest(output, ctx.header("cot-mix", extra), lines)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ResponseLine {
    qid: String,
    rotation: u8,
    text: String,
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    id: String,
    text: String,
}

fn caption_metrics(
    candidates_path: &Path,
    references_path: &Path,
    ctx: &Ctx,
) -> Result<CaptionMetrics, CliError> {
    let (candidates, diags_a) = read_jsonl::<CaptionLine>(candidates_path).map_err(CliError::Op)?;
    let (references, diags_b) = read_jsonl::<CaptionLine>(references_path).map_err(CliError::Op)?;
    let diagnostics: Vec<LineDiagnostic> = diags_a.into_iter().chain(diags_b).collect();
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    let candidates = shard_filter(candidates, ctx.shard, |c: &CaptionLine| &c.id);

    let mut refs_by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for reference in references {
        refs_by_id
            .entry(reference.id)
            .or_default()
            .push(reference.text);
    }

    let mut missing: Vec<Value> = Vec::new();
    for candidate in &candidates {
        if !refs_by_id.contains_key(&candidate.id) {
            missing.push(json!({
                "path": references_path.display().to_string(),
                "id": candidate.id,
                "error": "candidate has no reference captions",
            }));
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Data(missing));
    }

    let mut bleu_sum = 0.0;
    let mut rouge_sum = 0.0;
    for candidate in &candidates {
        let refs = &refs_by_id[&candidate.id];
        let ref_slices: Vec<&str> = refs.iter().map(String::as_str).collect();
        bleu_sum += bleu2(&candidate.text, &ref_slices);
        // Multi-reference ROUGE-L: best single reference.
        rouge_sum += refs
            .iter()
            .map(|r| rouge_l(&candidate.text, r))
            .fold(0.0f64, f64::max);
    }

    let pairs: Vec<(String, String)> = candidates
        .iter()
        .map(|c| (c.id.clone(), c.text.clone()))
        .collect();
    let cider_scores = cider(&pairs, &refs_by_id).map_err(|error| match error {
        EvalError::CorpusTooSmall { .. } => CliError::Op(anyhow::Error::new(error)),
        other => CliError::Op(anyhow::Error::new(other)),
    })?;

    let n = candidates.len() as f64;
    Ok(CaptionMetrics {
        bleu2: bleu_sum / n,
        rouge_l: rouge_sum / n,
        cider: cider_scores.mean,
        meteor: None,
    })
}

pub fn cmd_eval(
    questions_path: &Path,
    responses_path: &Path,
    captions: Option<(&Path, &Path)>,
    output: &Path,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let (questions, mut diagnostics) =
        read_jsonl::<McQuestion>(questions_path).map_err(CliError::Op)?;
    let questions = shard_filter(questions, ctx.shard, |q: &McQuestion| &q.qid);
    for question in &questions {
        if question.correct_index > 3 {
            diagnostics.push(LineDiagnostic(json!({
                "path": questions_path.display().to_string(),
                "id": question.qid,
                "error": format!("correct_index {} out of range", question.correct_index),
            })));
        }
    }
    let (responses, response_diags) =
        read_jsonl::<ResponseLine>(responses_path).map_err(CliError::Op)?;
    diagnostics.extend(response_diags);
    for response in &responses {
        if response.rotation > 3 {
            diagnostics.push(LineDiagnostic(json!({
                "path": responses_path.display().to_string(),
                "id": response.qid,
                "error": format!("rotation {} out of range", response.rotation),
            })));
        }
    }
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    if ctx.dry_run {
        return ctx.dry_run_summary("eval", questions.len());
    }

    let response_map: HashMap<(String, u8), String> = responses
        .into_iter()
        .map(|r| ((r.qid, r.rotation), r.text))
        .collect();

    let (results, accuracy) = score_cyclic(&questions, &response_map, ctx.config.strict_choice)
        .map_err(|error| match error {
            EvalError::MissingResponse { ref qid, rotation } => CliError::Data(vec![json!({
                "path": responses_path.display().to_string(),
                "id": qid,
                "rotation": rotation,
                "error": "missing response",
            })]),
            other => CliError::Op(anyhow::Error::new(other)),
        })?;

    let metrics = match captions {
        Some((candidates, references)) => Some(caption_metrics(candidates, references, ctx)?),
        None => None,
    };

    let report = build_report(&questions, &results, metrics);
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    let object = doc.as_object_mut().unwrap();
    object.insert("schema".to_string(), json!("eval-report/1"));
    object.insert("config_hash".to_string(), json!(ctx.config.hash));
    object.insert("question_count".to_string(), json!(questions.len()));
    object.insert("cyclic_accuracy".to_string(), json!(accuracy));
    write_json_doc(output, &doc)?;
    Ok(())
}

pub fn cmd_stats(
    input: &Path,
    output: &Path,
    bucket_width: u64,
    ctx: &Ctx,
) -> Result<(), CliError> {
    let (budgets, diagnostics) = read_jsonl::<TokenBudget>(input).map_err(CliError::Op)?;
    if !diagnostics.is_empty() {
        return Err(data_error(diagnostics));
    }
    let budgets = shard_filter(budgets, ctx.shard, |b: &TokenBudget| &b.sample_id);
    if ctx.dry_run {
        return ctx.dry_run_summary("stats", budgets.len());
    }

    let mut accumulator = StatsAccumulator::new();
    for budget in &budgets {
        accumulator.add(budget);
    }
    let stats = accumulator.finalize(bucket_width).map_err(|error| {
        CliError::Data(vec![json!({
            "path": input.display().to_string(),
            "error": error.to_string(),
        })])
    })?;

    let mut doc = serde_json::to_value(&stats).expect("stats serialize");
    let object = doc.as_object_mut().unwrap();
    object.insert("schema".to_string(), json!("budget-stats/1"));
    object.insert("config_hash".to_string(), json!(ctx.config.hash));
    object.insert("bucket_width".to_string(), json!(bucket_width));
    write_json_doc(output, &doc)?;
    Ok(())
}

pub fn cmd_projector_report(output: &Path, ctx: &Ctx) -> Result<(), CliError> {
    if ctx.dry_run {
        return ctx.dry_run_summary("projector-report", 0);
    }
    let spec = &ctx.config.projector;
    let breakdown = projector_param_breakdown(spec);

    let factor = match spec.variant {
        ProjectorVariant::ConvAdapter { stride } => stride,
        ProjectorVariant::PixelShuffle { ratio } => ratio,
    };
    // Side-by-side comparison of both compression designs at these dims.
    let comparison: Vec<Value> = [
        ProjectorVariant::ConvAdapter { stride: factor },
        ProjectorVariant::PixelShuffle { ratio: factor },
    ]
    .into_iter()
    .map(|variant| {
        let candidate = valleyforge_core::projector::ProjectorSpec {
            variant,
            ..spec.clone()
        };
        json!({
            "variant": variant,
            "token_compress": factor * factor,
            "mlp_hidden": candidate.d_h,
            "params": valleyforge_core::projector::projector_param_count(&candidate),
        })
    })
    .collect();

    // Hidden-dim scale relative to the LLM width drives the documented
    // sqrt(n) learning-rate multiplier.
    let hidden_scale = spec.d_h as f64 / spec.d_llm as f64;
    let doc = json!({
        "schema": "projector-report/1",
        "config_hash": ctx.config.hash,
        "version": env!("CARGO_PKG_VERSION"),
        "spec": spec,
        "tensors": breakdown.tensors,
        "total_params": breakdown.total,
        "comparison": comparison,
        "visual_vocab_dim": visual_vocab_dim(ctx.config.llm_vocab_size),
        "hidden_scale_vs_llm": hidden_scale,
        "lr_multiplier_for_hidden_scale": lr_scale(1.0, hidden_scale),
    });
    write_json_doc(output, &doc)?;
    Ok(())
}

/// Wires subcommand handling for paths that need a stage argument.
pub fn parse_stage(text: &str) -> Result<Stage, String> {
    match text.to_ascii_lowercase().as_str() {
        "s1" | "1" => Ok(Stage::S1),
        "s1.5" | "s1_5" | "1.5" => Ok(Stage::S1_5),
        "s2" | "2" => Ok(Stage::S2),
        "s3" | "3" => Ok(Stage::S3),
        other => Err(format!(
            "unknown stage {other:?}; expected s1, s1.5, s2, or s3"
        )),
    }
}

pub fn parse_mode(text: &str) -> Result<BudgetMode, String> {
    match text.to_ascii_lowercase().as_str() {
        "train" => Ok(BudgetMode::Train),
        "infer" => Ok(BudgetMode::Infer),
        other => Err(format!("unknown mode {other:?}; expected train or infer")),
    }
}
