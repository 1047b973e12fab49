//! Top-1 exact-match accuracy of predictions against gold triplets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::Triplet;
use crate::error::{Error, Result};
use crate::template::AnswerType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub predicted_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    /// `None` when the cell is empty.
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub n: usize,
}

impl Cell {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
    }

    fn finish(mut self) -> Self {
        self.accuracy = (self.n > 0).then(|| self.correct as f64 / self.n as f64);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub overall: Cell,
    pub non_binary: Cell,
    pub binary: Cell,
    pub per_tier: BTreeMap<u8, Cell>,
    pub per_question_type: BTreeMap<String, Cell>,
    /// Gold triplets without a prediction; counted as wrong.
    pub missing: usize,
    /// Noise-flagged triplets left out of every cell.
    pub excluded_noise: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    pub exclude_noise: bool,
}

pub fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Score predictions against `gold`. Every prediction must name a gold
/// qid, at most once.
pub fn score(predictions: &[Prediction], gold: &[Triplet], options: ScoreOptions) -> Result<ScoreReport> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|t| t.qid.as_str()).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::Input("gold triplets contain duplicate qids".into()));
    }
    let mut by_qid: BTreeMap<&str, &str> = BTreeMap::new();
    let mut duplicates = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    for p in predictions {
        if !gold_ids.contains(p.qid.as_str()) {
            unknown.insert(p.qid.as_str());
        } else if by_qid.insert(&p.qid, &p.predicted_answer).is_some() {
            duplicates.insert(p.qid.as_str());
        }
    }
    let list = |s: &BTreeSet<&str>| s.iter().take(20).copied().collect::<Vec<_>>().join(", ");
    if !duplicates.is_empty() {
        return Err(Error::Input(format!(
            "{} duplicate prediction qid(s): {}",
            duplicates.len(),
            list(&duplicates)
        )));
    }
    if !unknown.is_empty() {
        return Err(Error::Input(format!("{} unknown prediction qid(s): {}", unknown.len(), list(&unknown))));
    }

    let mut report = ScoreReport {
        overall: Cell::default(),
        non_binary: Cell::default(),
        binary: Cell::default(),
        per_tier: BTreeMap::new(),
        per_question_type: BTreeMap::new(),
        missing: 0,
        excluded_noise: 0,
    };
    for t in gold {
        if options.exclude_noise && t.noise_flag {
            report.excluded_noise += 1;
            continue;
        }
        let correct = match by_qid.get(t.qid.as_str()) {
            Some(p) => normalize_answer(p) == normalize_answer(&t.answer),
            None => {
                report.missing += 1;
                false
            }
        };
        report.overall.add(correct);
        match t.answer_type {
            AnswerType::Binary => report.binary.add(correct),
            AnswerType::NonBinary => report.non_binary.add(correct),
        }
        if let Some(tier) = t.difficulty_tier {
            report.per_tier.entry(tier).or_default().add(correct);
        }
        report.per_question_type.entry(t.question_type.clone()).or_default().add(correct);
    }
    report.overall = report.overall.finish();
    report.binary = report.binary.finish();
    report.non_binary = report.non_binary.finish();
    for c in report.per_tier.values_mut().chain(report.per_question_type.values_mut()) {
        *c = c.finish();
    }
    Ok(report)
}
