//! Evaluation harness: cyclic multiple-choice scoring, per-category
//! accuracy with sample-weighted averaging, and caption metrics.

mod captions;

pub use captions::{bleu2, cider, rouge_l, tokenize, CaptionMetrics, CiderScores};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Modality;

/// Task categories of the benchmark, grouped by modality: single image
/// (IU, OCR), multi-image (DS, MIU, PTU), and video (GVU, PEU, AL, VCR).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Image understanding.
    IU,
    /// Image-text (OCR) understanding.
    OCR,
    /// Difference spotting.
    DS,
    /// Multi-image understanding.
    MIU,
    /// Product understanding.
    PTU,
    /// Global video understanding.
    GVU,
    /// Procedure understanding.
    PEU,
    /// Action localization.
    AL,
    /// Video content retrieval.
    VCR,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::IU,
        Category::OCR,
        Category::DS,
        Category::MIU,
        Category::PTU,
        Category::GVU,
        Category::PEU,
        Category::AL,
        Category::VCR,
    ];
}

/// A four-option multiple-choice question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McQuestion {
    pub qid: String,
    pub stem: String,
    pub options: [String; 4],
    /// Index of the correct option, 0..=3.
    pub correct_index: u8,
    pub category: Category,
    pub modality: Modality,
}

/// Answer letters, in option order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    C,
    D,
}

impl Choice {
    pub fn from_index(index: u8) -> Choice {
        match index % 4 {
            0 => Choice::A,
            1 => Choice::B,
            2 => Choice::C,
            _ => Choice::D,
        }
    }
}

/// Outcome of the four rotations of one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicResult {
    pub qid: String,
    pub per_rotation: [bool; 4],
    /// True only when every rotation was answered correctly.
    pub passed: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no response for question {qid} rotation {rotation}")]
    MissingResponse { qid: String, rotation: u8 },
    #[error("tf-idf needs at least {needed} candidates, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("candidate {id} has no reference captions")]
    MissingReference { id: String },
}

/// Expands a question into its four rotations. Variant `k` cyclically
/// rotates the options so the correct one lands at position `k`; relative
/// option order is preserved and the stem is unchanged.
pub fn expand_cyclic(question: &McQuestion) -> [McQuestion; 4] {
    std::array::from_fn(|k| {
        let shift = (question.correct_index as usize + 4 - k) % 4;
        let options = std::array::from_fn(|i| question.options[(i + shift) % 4].clone());
        McQuestion {
            options,
            correct_index: k as u8,
            ..question.clone()
        }
    })
}

/// First standalone answer letter in a response: word-boundary match,
/// case-insensitive, so "B", "(c)", "D." and "Answer: A" all parse.
pub fn extract_choice(response: &str) -> Option<Choice> {
    static PATTERN: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = PATTERN.get_or_init(|| regex::Regex::new(r"\b([A-Da-d])\b").unwrap());
    re.captures(response)
        .map(|caps| letter_to_choice(caps[1].chars().next().unwrap()))
}

/// Strict variant: only a bare leading letter counts.
pub fn extract_choice_strict(response: &str) -> Option<Choice> {
    let trimmed = response.trim_start();
    let first = trimmed.chars().next()?;
    if !matches!(first, 'A'..='D' | 'a'..='d') {
        return None;
    }
    match trimmed.chars().nth(1) {
        Some(next) if next.is_alphanumeric() => None,
        _ => Some(letter_to_choice(first)),
    }
}

fn letter_to_choice(letter: char) -> Choice {
    match letter.to_ascii_uppercase() {
        'A' => Choice::A,
        'B' => Choice::B,
        'C' => Choice::C,
        _ => Choice::D,
    }
}

/// Scores a question set under the cyclic protocol: rotation `k` of a
/// question is answered correctly iff the extracted letter is the `k`-th
/// option letter; a question passes only if all four rotations are
/// correct. Returns per-question results and accuracy in percent.
/// Unparseable responses count as wrong; absent ones are an error.
pub fn score_cyclic(
    questions: &[McQuestion],
    responses: &HashMap<(String, u8), String>,
    strict: bool,
) -> Result<(Vec<CyclicResult>, f64), EvalError> {
    let mut results = Vec::with_capacity(questions.len());
    let mut passed_count = 0u64;

    for question in questions {
        let mut per_rotation = [false; 4];
        for (k, slot) in per_rotation.iter_mut().enumerate() {
            let key = (question.qid.clone(), k as u8);
            let text = responses
                .get(&key)
                .ok_or_else(|| EvalError::MissingResponse {
                    qid: question.qid.clone(),
                    rotation: k as u8,
                })?;
            let extracted = if strict {
                extract_choice_strict(text)
            } else {
                extract_choice(text)
            };
            *slot = extracted == Some(Choice::from_index(k as u8));
        }
        let passed = per_rotation.iter().all(|&ok| ok);
        passed_count += passed as u64;
        results.push(CyclicResult {
            qid: question.qid.clone(),
            per_rotation,
            passed,
        });
    }

    let accuracy = if questions.is_empty() {
        0.0
    } else {
        100.0 * passed_count as f64 / questions.len() as f64
    };
    Ok((results, accuracy))
}

/// Accuracy and population of one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    /// Percent of questions passed.
    pub accuracy: f64,
    pub count: u64,
}

/// Sample-weighted mean accuracy across categories.
pub fn weighted_average(per_category: &BTreeMap<Category, CategoryScore>) -> f64 {
    let weighted: f64 = per_category
        .values()
        .map(|s| s.accuracy * s.count as f64)
        .sum();
    let total: u64 = per_category.values().map(|s| s.count).sum();
    weighted / total as f64
}

/// Full benchmark report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_category: BTreeMap<Category, CategoryScore>,
    pub weighted_avg: f64,
    pub caption_metrics: Option<CaptionMetrics>,
}

/// Groups cyclic results by category and assembles the report.
pub fn build_report(
    questions: &[McQuestion],
    results: &[CyclicResult],
    caption_metrics: Option<CaptionMetrics>,
) -> EvalReport {
    let mut passed: BTreeMap<Category, (u64, u64)> = BTreeMap::new();
    let by_qid: HashMap<&str, &CyclicResult> =
        results.iter().map(|r| (r.qid.as_str(), r)).collect();
    for question in questions {
        let entry = passed.entry(question.category).or_insert((0, 0));
        entry.1 += 1;
        if by_qid.get(question.qid.as_str()).is_some_and(|r| r.passed) {
            entry.0 += 1;
        }
    }
    let per_category: BTreeMap<Category, CategoryScore> = passed
        .into_iter()
        .map(|(category, (ok, total))| {
            (
                category,
                CategoryScore {
                    accuracy: 100.0 * ok as f64 / total as f64,
                    count: total,
                },
            )
        })
        .collect();
    let weighted_avg = weighted_average(&per_category);
    EvalReport {
        per_category,
        weighted_avg,
        caption_metrics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn question(qid: &str, correct: u8, category: Category) -> McQuestion {
        McQuestion {
            qid: qid.to_string(),
            stem: "pick one".to_string(),
            options: ["w", "x", "y", "z"].map(String::from),
            correct_index: correct,
            category,
            modality: Modality::SingleImage,
        }
    }

    #[test]
    fn rotation_zero_of_a_first_answer_is_identity() {
        let q = question("q", 0, Category::IU);
        let variants = expand_cyclic(&q);
        assert_eq!(variants[0], q);
    }

    #[test]
    fn correct_option_visits_every_position_once() {
        let q = question("q", 2, Category::IU);
        let variants = expand_cyclic(&q);
        for (k, variant) in variants.iter().enumerate() {
            assert_eq!(variant.correct_index as usize, k);
            assert_eq!(variant.options[k], "y");
            // Rotation preserves the option multiset.
            let mut opts: Vec<&str> = variant.options.iter().map(String::as_str).collect();
            opts.sort_unstable();
            assert_eq!(opts, vec!["w", "x", "y", "z"]);
        }
    }

    #[test]
    fn rotation_preserves_relative_order() {
        let q = question("q", 1, Category::IU);
        let variants = expand_cyclic(&q);
        // Correct "x" moves to A; the cyclic successor order x,y,z,w holds.
        assert_eq!(variants[0].options, ["x", "y", "z", "w"].map(String::from));
    }

    #[test]
    fn extract_choice_examples() {
        assert_eq!(extract_choice("The answer is B."), Some(Choice::B));
        assert_eq!(extract_choice("banana"), None);
        assert_eq!(
            extract_choice("(C) because of the texture"),
            Some(Choice::C)
        );
        assert_eq!(extract_choice("answer: a"), Some(Choice::A));
        assert_eq!(extract_choice("D."), Some(Choice::D));
        assert_eq!(extract_choice(""), None);
    }

    #[test]
    fn strict_extraction_only_accepts_leading_letter() {
        assert_eq!(extract_choice_strict("B"), Some(Choice::B));
        assert_eq!(extract_choice_strict("  c)"), Some(Choice::C));
        assert_eq!(extract_choice_strict("The answer is B."), None);
        assert_eq!(extract_choice_strict("Da"), None);
    }

    fn respond_all(
        questions: &[McQuestion],
        answer: impl Fn(&McQuestion, u8) -> String,
    ) -> HashMap<(String, u8), String> {
        let mut map = HashMap::new();
        for q in questions {
            for k in 0..4u8 {
                map.insert((q.qid.clone(), k), answer(q, k));
            }
        }
        map
    }

    #[test]
    fn all_correct_scores_hundred() {
        let questions = vec![question("q1", 3, Category::IU)];
        let responses = respond_all(&questions, |_, k| format!("{:?}", Choice::from_index(k)));
        let (results, accuracy) = score_cyclic(&questions, &responses, false).unwrap();
        assert!(results[0].passed);
        assert_eq!(accuracy, 100.0);
    }

    #[test]
    fn one_wrong_rotation_zeroes_the_question() {
        let questions = vec![question("q1", 0, Category::IU)];
        let responses = respond_all(&questions, |_, k| {
            if k == 2 {
                "A".to_string()
            } else {
                format!("{:?}", Choice::from_index(k))
            }
        });
        let (results, accuracy) = score_cyclic(&questions, &responses, false).unwrap();
        assert_eq!(results[0].per_rotation, [true, true, false, true]);
        assert!(!results[0].passed);
        assert_eq!(accuracy, 0.0);
    }

    #[test]
    fn mixed_outcome_averages_per_question() {
        let questions = vec![
            question("q1", 0, Category::IU),
            question("q2", 1, Category::OCR),
        ];
        let responses = respond_all(&questions, |q, k| {
            if q.qid == "q2" && k == 3 {
                "wrong".to_string()
            } else {
                format!("{:?}", Choice::from_index(k))
            }
        });
        let (_, accuracy) = score_cyclic(&questions, &responses, false).unwrap();
        assert_eq!(accuracy, 50.0);
    }

    #[test]
    fn missing_response_is_an_error() {
        let questions = vec![question("q1", 0, Category::IU)];
        let mut responses = respond_all(&questions, |_, k| format!("{:?}", Choice::from_index(k)));
        responses.remove(&("q1".to_string(), 2));
        let err = score_cyclic(&questions, &responses, false).unwrap_err();
        assert_eq!(
            err,
            EvalError::MissingResponse {
                qid: "q1".to_string(),
                rotation: 2
            }
        );
    }

    #[test]
    fn weighted_average_examples() {
        let mut single = BTreeMap::new();
        single.insert(
            Category::IU,
            CategoryScore {
                accuracy: 83.0,
                count: 7,
            },
        );
        assert_eq!(weighted_average(&single), 83.0);

        let mut two = BTreeMap::new();
        two.insert(
            Category::IU,
            CategoryScore {
                accuracy: 100.0,
                count: 1,
            },
        );
        two.insert(
            Category::OCR,
            CategoryScore {
                accuracy: 0.0,
                count: 3,
            },
        );
        assert_eq!(weighted_average(&two), 25.0);
    }

    #[test]
    fn weighted_average_invariant_under_category_split() {
        let mut merged = BTreeMap::new();
        merged.insert(
            Category::IU,
            CategoryScore {
                accuracy: 70.0,
                count: 40,
            },
        );
        merged.insert(
            Category::AL,
            CategoryScore {
                accuracy: 55.0,
                count: 10,
            },
        );

        let mut split = BTreeMap::new();
        split.insert(
            Category::IU,
            CategoryScore {
                accuracy: 70.0,
                count: 25,
            },
        );
        split.insert(
            Category::OCR,
            CategoryScore {
                accuracy: 70.0,
                count: 15,
            },
        );
        split.insert(
            Category::AL,
            CategoryScore {
                accuracy: 55.0,
                count: 10,
            },
        );

        assert!((weighted_average(&merged) - weighted_average(&split)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn oracle_responder_always_scores_hundred(
            correct_indices in prop::collection::vec(0u8..4, 1..40),
        ) {
            let questions: Vec<McQuestion> = correct_indices
                .iter()
                .enumerate()
                .map(|(i, &c)| question(&format!("q{i}"), c, Category::ALL[i % 9]))
                .collect();
            // The oracle reads the rotated variant and answers its true slot.
            let mut responses = HashMap::new();
            for q in &questions {
                for (k, variant) in expand_cyclic(q).iter().enumerate() {
                    responses.insert(
                        (q.qid.clone(), k as u8),
                        format!("Answer: {:?}", Choice::from_index(variant.correct_index)),
                    );
                }
            }
            let (results, accuracy) = score_cyclic(&questions, &responses, false).unwrap();
            prop_assert!(results.iter().all(|r| r.passed));
            prop_assert_eq!(accuracy, 100.0);
        }

        #[test]
        fn report_weighted_average_matches_direct_computation(
            outcomes in prop::collection::vec((0u8..4, any::<bool>()), 1..60),
        ) {
            let questions: Vec<McQuestion> = outcomes
                .iter()
                .enumerate()
                .map(|(i, &(c, _))| question(&format!("q{i}"), c, Category::ALL[i % 9]))
                .collect();
            let results: Vec<CyclicResult> = outcomes
                .iter()
                .enumerate()
                .map(|(i, &(_, passed))| CyclicResult {
                    qid: format!("q{i}"),
                    per_rotation: [passed; 4],
                    passed,
                })
                .collect();
            let report = build_report(&questions, &results, None);
            let total_passed = results.iter().filter(|r| r.passed).count() as f64;
            let direct = 100.0 * total_passed / questions.len() as f64;
            prop_assert!((report.weighted_avg - direct).abs() < 1e-9);
        }
    }
}
