//! Accuracy tables and text-similarity metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MethodResult;

/// Correct and total counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub by_category: BTreeMap<String, Tally>,
    pub overall: Tally,
}

/// Method by category accuracy. Rows keep the order in which methods first
/// appear; categories are sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub categories: Vec<String>,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn row(&self, method: &str) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Fraction correct per category and overall, over results that carry a
/// correctness verdict. A missing extraction counts as incorrect.
pub fn accuracy(results: &[MethodResult]) -> AccuracyTable {
    let mut table = AccuracyTable::default();
    let mut cats = std::collections::BTreeSet::new();
    for r in results {
        let Some(correct) = r.correct else { continue };
        let correct = correct && r.extracted.is_some();
        cats.insert(r.category.clone());
        let idx = match table.rows.iter().position(|row| row.method == r.method) {
            Some(i) => i,
            None => {
                table.rows.push(AccuracyRow {
                    method: r.method.clone(),
                    by_category: BTreeMap::new(),
                    overall: Tally::default(),
                });
                table.rows.len() - 1
            }
        };
        let row = &mut table.rows[idx];
        row.by_category.entry(r.category.clone()).or_default().add(correct);
        row.overall.add(correct);
    }
    table.categories = cats.into_iter().collect();
    table
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure `2PR/(P+R)` over [`rouge_tokens`].
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    // 2PR/(P+R) reduces to 2·LCS/(|c|+|r|), which rounds once
    2.0 * lcs_len(&c, &r) as f64 / (c.len() + r.len()) as f64
}

/// Cosine similarity; `None` when either vector is zero or lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}
