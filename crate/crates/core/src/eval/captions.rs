//! Caption metrics: bigram BLEU, LCS-based ROUGE-L, and consensus-based
//! tf-idf n-gram similarity (CIDEr).
//!
//! Tokenization is fixed so scores reproduce bit-exactly: lowercase,
//! every non-alphanumeric character replaced by whitespace, then split.
//! METEOR is deliberately absent (it needs external synonym resources);
//! reports carry a null slot to keep the schema shape.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Corpus-level caption scores. `meteor` is always null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionMetrics {
    pub bleu2: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: Option<f64>,
}

/// Lowercases, strips punctuation to whitespace, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

// Ordered maps keep every float accumulation in a fixed order, so scores
// are bit-identical across runs.
fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Vec<String>, u64> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Bigram BLEU of one candidate against its references: geometric mean of
/// clipped unigram and bigram precision, times the brevity penalty. No
/// smoothing; zero overlap at either order scores zero.
pub fn bleu2(candidate: &str, references: &[&str]) -> f64 {
    let cand = tokenize(candidate);
    if cand.is_empty() || references.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();

    let mut precisions = [0.0f64; 2];
    for (slot, n) in precisions.iter_mut().zip(1..=2usize) {
        let cand_counts = ngram_counts(&cand, n);
        let total: u64 = cand_counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut clipped = 0u64;
        for (gram, &count) in &cand_counts {
            let max_ref = refs
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        if clipped == 0 {
            return 0.0;
        }
        *slot = clipped as f64 / total as f64;
    }

    // Effective reference length: closest to the candidate, shorter on ties.
    let cand_len = cand.len();
    let ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(cand_len), len))
        .unwrap();
    let brevity = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };

    brevity * (precisions[0] * precisions[1]).sqrt()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for token_a in a {
        let mut diagonal = 0;
        for (j, token_b) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if token_a == token_b {
                diagonal + 1
            } else {
                above.max(row[j])
            };
            diagonal = above;
        }
    }
    row[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L F-measure between a candidate and one reference, with the
/// recall-weighted beta = 1.2 convention.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / reference.len() as f64;
    let beta_sq = ROUGE_BETA * ROUGE_BETA;
    (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision)
}

/// Gaussian length-penalty width, in tokens.
const CIDER_SIGMA: f64 = 6.0;
const CIDER_MAX_NGRAM: usize = 4;
const CIDER_SCALE: f64 = 10.0;

/// Per-item and mean consensus scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub mean: f64,
    pub per_item: Vec<(String, f64)>,
}

type NgramVector = BTreeMap<Vec<String>, f64>;

fn tfidf_vector(
    tokens: &[String],
    n: usize,
    idf: &HashMap<Vec<String>, f64>,
    n_items: f64,
) -> (NgramVector, f64) {
    let mut vector = NgramVector::new();
    for (gram, count) in ngram_counts(tokens, n) {
        // Unseen n-grams fall back to document frequency one.
        let weight = idf.get(&gram).copied().unwrap_or_else(|| n_items.ln());
        vector.insert(gram, count as f64 * weight);
    }
    let norm = vector.values().map(|w| w * w).sum::<f64>().sqrt();
    (vector, norm)
}

fn cosine(a: &(NgramVector, f64), b: &(NgramVector, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 =
        a.0.iter()
            .filter_map(|(gram, &wa)| b.0.get(gram).map(|&wb| wa * wb))
            .sum();
    dot / (a.1 * b.1)
}

/// Consensus caption score over a corpus of candidates.
///
/// For each n in 1..=4, candidate and reference n-gram counts are
/// weighted by corpus idf (document frequency over per-item reference
/// sets, floored at one) and compared by cosine. Per reference, the mean
/// over n is damped by a Gaussian penalty on the token-length difference
/// (sigma = 6); items average over their references, and the final score
/// is scaled by 10. Needs at least two items so idf is meaningful.
pub fn cider(
    candidates: &[(String, String)],
    references: &BTreeMap<String, Vec<String>>,
) -> Result<CiderScores, EvalError> {
    if candidates.len() < 2 {
        return Err(EvalError::CorpusTooSmall {
            needed: 2,
            got: candidates.len(),
        });
    }
    for (id, _) in candidates {
        if references
            .get(id)
            .map(|refs| refs.is_empty())
            .unwrap_or(true)
        {
            return Err(EvalError::MissingReference { id: id.clone() });
        }
    }

    let n_items = candidates.len() as f64;
    let tokenized_refs: HashMap<&str, Vec<Vec<String>>> = candidates
        .iter()
        .map(|(id, _)| {
            (
                id.as_str(),
                references[id].iter().map(|r| tokenize(r)).collect(),
            )
        })
        .collect();

    // Document frequency: in how many items' reference sets an n-gram occurs.
    let mut idf_by_n: Vec<HashMap<Vec<String>, f64>> = Vec::with_capacity(CIDER_MAX_NGRAM);
    for n in 1..=CIDER_MAX_NGRAM {
        let mut df: HashMap<Vec<String>, u64> = HashMap::new();
        for refs in tokenized_refs.values() {
            let mut seen: HashMap<Vec<String>, ()> = HashMap::new();
            for reference in refs {
                for gram in ngram_counts(reference, n).into_keys() {
                    seen.entry(gram).or_insert(());
                }
            }
            for gram in seen.into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        idf_by_n.push(
            df.into_iter()
                .map(|(gram, freq)| (gram, (n_items / freq.max(1) as f64).ln()))
                .collect(),
        );
    }

    let mut per_item = Vec::with_capacity(candidates.len());
    let mut sum = 0.0;
    for (id, text) in candidates {
        let cand_tokens = tokenize(text);
        let refs = &tokenized_refs[id.as_str()];

        let mut item_score = 0.0;
        for ref_tokens in refs {
            let delta = cand_tokens.len() as f64 - ref_tokens.len() as f64;
            let penalty = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut over_n = 0.0;
            for n in 1..=CIDER_MAX_NGRAM {
                let idf = &idf_by_n[n - 1];
                let cand_vec = tfidf_vector(&cand_tokens, n, idf, n_items);
                let ref_vec = tfidf_vector(ref_tokens, n, idf, n_items);
                over_n += cosine(&cand_vec, &ref_vec);
            }
            item_score += penalty * over_n / CIDER_MAX_NGRAM as f64;
        }
        let score = CIDER_SCALE * item_score / refs.len() as f64;
        sum += score;
        per_item.push((id.clone(), score));
    }

    Ok(CiderScores {
        mean: sum / n_items,
        per_item,
    })
}
