//! Density, correlation, agreement, and classifier-evaluation arithmetic.
//!
//! Everything here is a pure function over already-collected data; no
//! backend calls are made.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{story_sentence_count, Story};
use crate::error::{Error, Result};
use crate::generation::Category;
use crate::sheet::{sheet_sentence_count, CharacterSheet};
use crate::validation::{AcceptancePolicy, AnnotationRecord};

// ---------------------------------------------------------------------------
// Density
// ---------------------------------------------------------------------------

/// One (sheet, story) combination inside a density report.
#[derive(Debug, Clone, Serialize)]
pub struct ComboDensity {
    pub story_id: String,
    pub character_id: String,
    pub story_sentences: usize,
    pub category_counts: BTreeMap<Category, usize>,
    pub sheet_sentences: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub source: String,
    pub setup: String,
    pub combos: Vec<ComboDensity>,
    /// Combos dropped for zero-sentence stories, one line each.
    pub excluded: Vec<String>,
    pub density: f64,
    pub density_by_category: BTreeMap<Category, f64>,
}

fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for value in values {
        let y = value - compensation;
        let t = sum + y;
        compensation = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mean sheet-sentences-per-story-sentence over all (sheet, story) combos,
/// with the same mean broken down per category. Stories with zero sentences
/// drop their combos (logged and listed), never divide by zero.
pub fn density(
    sheets: &[CharacterSheet],
    stories: &[Story],
    source: &str,
    setup: &str,
) -> Result<DensityReport> {
    let by_id: BTreeMap<&str, &Story> = stories.iter().map(|s| (s.story_id.as_str(), s)).collect();

    let mut combos = Vec::new();
    let mut excluded = Vec::new();
    for sheet in sheets {
        let story = by_id.get(sheet.story_id.as_str()).ok_or_else(|| {
            Error::Contract(format!(
                "sheet for {}/{} has no matching story",
                sheet.story_id, sheet.character_id
            ))
        })?;
        let story_sentences = story_sentence_count(story);
        let (category_counts, sheet_sentences) = sheet_sentence_count(sheet);
        if story_sentences == 0 {
            let line = format!(
                "excluded {}/{}: story has zero sentences",
                sheet.story_id, sheet.character_id
            );
            log::warn!("{line}");
            excluded.push(line);
            continue;
        }
        combos.push(ComboDensity {
            story_id: sheet.story_id.clone(),
            character_id: sheet.character_id.clone(),
            story_sentences,
            category_counts,
            sheet_sentences,
            ratio: sheet_sentences as f64 / story_sentences as f64,
        });
    }

    let m = combos.len() as f64;
    let density = if combos.is_empty() {
        0.0
    } else {
        kahan_sum(combos.iter().map(|c| c.ratio)) / m
    };
    let mut density_by_category = BTreeMap::new();
    for category in Category::ALL {
        let value = if combos.is_empty() {
            0.0
        } else {
            kahan_sum(combos.iter().map(|c| {
                let count = c.category_counts.get(&category).copied().unwrap_or(0);
                count as f64 / c.story_sentences as f64
            })) / m
        };
        density_by_category.insert(category, value);
    }

    Ok(DensityReport {
        source: source.to_string(),
        setup: setup.to_string(),
        combos,
        excluded,
        density,
        density_by_category,
    })
}

/// Plain-text density table; column order Source, Setup, Density, then the
/// per-category breakdown.
pub fn render_density_report(report: &DensityReport) -> String {
    let mut out = String::from("Source | Setup | Density\n");
    out.push_str(&format!(
        "{} | {} | {:.4}\n",
        report.source, report.setup, report.density
    ));
    out.push_str("\nCategory | Density\n");
    for (category, value) in &report.density_by_category {
        out.push_str(&format!("{} | {:.4}\n", category.label(), value));
    }
    out.push_str(&format!(
        "\ncombos: {}  excluded: {}\n",
        report.combos.len(),
        report.excluded.len()
    ));
    for line in &report.excluded {
        out.push_str(&format!("# {line}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

/// Sample Pearson r, two-pass with compensated accumulation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "pearson needs at least two points".to_string(),
        ));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "pearson inputs must be finite".to_string(),
        ));
    }
    let n = x.len() as f64;
    let mean_x = kahan_sum(x.iter().copied()) / n;
    let mean_y = kahan_sum(y.iter().copied()) / n;
    let cov = kahan_sum(x.iter().zip(y).map(|(&a, &b)| (a - mean_x) * (b - mean_y)));
    let var_x = kahan_sum(x.iter().map(|&a| (a - mean_x) * (a - mean_x)));
    let var_y = kahan_sum(y.iter().map(|&b| (b - mean_y) * (b - mean_y)));
    if var_x <= 0.0 || var_y <= 0.0 {
        return Err(Error::Stats(
            "pearson is undefined for zero-variance input".to_string(),
        ));
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Krippendorff's alpha
// ---------------------------------------------------------------------------

/// Disagreement metric for [`krippendorff_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaDistance {
    /// Squared label difference.
    Interval,
    /// Squared cumulative-marginal distance between ranks.
    Ordinal,
}

impl AlphaDistance {
    pub fn id(self) -> &'static str {
        match self {
            AlphaDistance::Interval => "interval",
            AlphaDistance::Ordinal => "ordinal",
        }
    }
}

const LABELS: usize = 5;

/// Coincidence-matrix Krippendorff's alpha over 1-5 labels. Each record is
/// a unit; its label map holds one value per annotator. Units with fewer
/// than two labels carry no disagreement information and are skipped.
pub fn krippendorff_alpha(records: &[AnnotationRecord], distance: AlphaDistance) -> Result<f64> {
    let mut coincidence = [[0.0f64; LABELS]; LABELS];
    let mut pairable_units = 0usize;
    for record in records {
        let labels: Vec<usize> = record.labels.values().map(|&l| l as usize - 1).collect();
        if labels.iter().any(|&l| l >= LABELS) {
            return Err(Error::InvalidInput(format!(
                "label out of range 1..=5 in unit {}/{}",
                record.story_id, record.statement
            )));
        }
        if labels.len() < 2 {
            continue;
        }
        pairable_units += 1;
        let weight = 1.0 / (labels.len() as f64 - 1.0);
        for (i, &a) in labels.iter().enumerate() {
            for (j, &b) in labels.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += weight;
                }
            }
        }
    }
    if pairable_units == 0 {
        return Err(Error::Stats(
            "no units with at least two labels; alpha undefined".to_string(),
        ));
    }

    let marginals: Vec<f64> = (0..LABELS)
        .map(|v| (0..LABELS).map(|w| coincidence[v][w]).sum())
        .collect();
    let n: f64 = marginals.iter().sum();

    let delta = |v: usize, w: usize| -> f64 {
        if v == w {
            return 0.0;
        }
        match distance {
            AlphaDistance::Interval => {
                let d = v as f64 - w as f64;
                d * d
            }
            AlphaDistance::Ordinal => {
                let (lo, hi) = (v.min(w), v.max(w));
                let span: f64 = (lo..=hi).map(|g| marginals[g]).sum();
                let d = span - (marginals[lo] + marginals[hi]) / 2.0;
                d * d
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for v in 0..LABELS {
        for w in 0..LABELS {
            let d = delta(v, w);
            observed += coincidence[v][w] * d;
            expected += marginals[v] * marginals[w] * d;
        }
    }
    let d_observed = observed / n;
    let d_expected = expected / (n * (n - 1.0));
    if d_expected == 0.0 {
        // All mass on a single label: perfect agreement by construction.
        return Ok(1.0);
    }
    Ok(1.0 - d_observed / d_expected)
}

// ---------------------------------------------------------------------------
// Classifier evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub gold_rule: String,
    pub prediction_rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
}

fn ratio_or_zero(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Booleanizes gold labels with the fixed `label >= 4` rule and predictions
/// with the given acceptance policy, then computes the confusion counts.
pub fn classifier_report(
    predictions: &[u8],
    gold: &[u8],
    policy: AcceptancePolicy,
) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "prediction/gold length mismatch: {} vs {}",
            predictions.len(),
            gold.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput(
            "classifier_report needs at least one pair".to_string(),
        ));
    }
    if predictions
        .iter()
        .chain(gold)
        .any(|&l| !(1..=5).contains(&l))
    {
        return Err(Error::InvalidInput("labels must be in 1..=5".to_string()));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        let predicted = policy.accept(p);
        let actual = g >= 4;
        match (predicted, actual) {
            (true, true) => counts.true_positive += 1,
            (true, false) => counts.false_positive += 1,
            (false, true) => counts.false_negative += 1,
            (false, false) => counts.true_negative += 1,
        }
    }
    Ok(EvalReport {
        counts,
        precision: ratio_or_zero(
            counts.true_positive,
            counts.true_positive + counts.false_positive,
        ),
        recall: ratio_or_zero(
            counts.true_positive,
            counts.true_positive + counts.false_negative,
        ),
        accuracy: ratio_or_zero(counts.true_positive + counts.true_negative, counts.total()),
        gold_rule: "label >= 4".to_string(),
        prediction_rule: policy.id().to_string(),
        alpha: None,
        pearson: None,
    })
}

pub fn render_eval_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "gold rule: {}\nprediction rule: {}\n",
        report.gold_rule, report.prediction_rule
    ));
    out.push_str(&format!(
        "TP {}  FP {}  FN {}  TN {}\n",
        report.counts.true_positive,
        report.counts.false_positive,
        report.counts.false_negative,
        report.counts.true_negative
    ));
    out.push_str(&format!(
        "precision {:.4}  recall {:.4}  accuracy {:.4}\n",
        report.precision, report.recall, report.accuracy
    ));
    if let Some(alpha) = report.alpha {
        out.push_str(&format!("alpha {alpha:.4}\n"));
    }
    if let Some(r) = report.pearson {
        out.push_str(&format!("pearson {r:.4}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// Label distribution
// ---------------------------------------------------------------------------

/// One percentage row of the label-distribution table.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionRow {
    pub source_model: String,
    /// Percent per label; labels with zero occurrences are omitted.
    pub percent: BTreeMap<u8, f64>,
    pub label_count: usize,
}

/// Label percentages per source model plus a combined row. Every individual
/// annotator label counts once. Empty input yields no rows.
pub fn label_distribution(records: &[AnnotationRecord]) -> Vec<DistributionRow> {
    let mut buckets: BTreeMap<String, BTreeMap<u8, usize>> = BTreeMap::new();
    for record in records {
        for &label in record.labels.values() {
            *buckets
                .entry(record.source_model.clone())
                .or_default()
                .entry(label)
                .or_default() += 1;
            *buckets
                .entry("combined".to_string())
                .or_default()
                .entry(label)
                .or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for (source_model, counts) in buckets {
        let total: usize = counts.values().sum();
        if total == 0 {
            continue;
        }
        let percent = counts
            .into_iter()
            .map(|(label, count)| (label, 100.0 * count as f64 / total as f64))
            .collect();
        rows.push(DistributionRow {
            source_model,
            percent,
            label_count: total,
        });
    }
    rows
}

pub fn render_label_distribution(rows: &[DistributionRow]) -> String {
    let mut out = String::from("Model | 1 | 2 | 3 | 4 | 5 | Labels\n");
    for row in rows {
        let cells: Vec<String> = (1..=5)
            .map(|l| match row.percent.get(&l) {
                Some(p) => format!("{p:.1}"),
                None => "0.0".to_string(),
            })
            .collect();
        out.push_str(&format!(
            "{} | {} | {}\n",
            row.source_model,
            cells.join(" | "),
            row.label_count
        ));
    }
    out
}
