use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use chiron_core::metrics::{
    classifier_report, krippendorff_alpha, label_distribution, render_eval_report,
    render_label_distribution, AlphaDistance, DistributionRow, EvalReport,
};
use chiron_core::validation::load_annotations_jsonl;
use chiron_core::AcceptancePolicy;

use crate::commands::{create_dir, write_file, ExitStatus};
use crate::config::{PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Annotation records (JSONL).
    #[arg(long)]
    pub annotations: PathBuf,

    /// Stored classifier predictions to score (JSONL of {statement, label}).
    #[arg(long)]
    pub predictions: Option<PathBuf>,

    /// Annotator whose labels are the gold standard.
    #[arg(long, default_value = "gold")]
    pub gold_annotator: String,

    /// Alpha distance metric: interval or ordinal.
    #[arg(long, default_value = "interval")]
    pub alpha_distance: String,

    /// Acceptance policy applied to predicted labels: eq5 or ge4.
    #[arg(long, default_value = "eq5")]
    pub policy: AcceptancePolicy,

    /// Output directory for eval.txt and eval.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    statement: String,
    label: u8,
}

#[derive(Serialize)]
struct EvalFile<'a> {
    provenance: &'a RunConfig,
    distribution: &'a [DistributionRow],
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a EvalReport>,
}

fn load_predictions(path: &Path) -> anyhow::Result<BTreeMap<String, u8>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut by_statement = BTreeMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        if by_statement
            .insert(record.statement.clone(), record.label)
            .is_some()
        {
            return Err(chiron_core::Error::InvalidInput(format!(
                "duplicate prediction for statement {:?}",
                record.statement
            ))
            .into());
        }
    }
    Ok(by_statement)
}

pub fn run(args: &EvalArgs) -> anyhow::Result<ExitStatus> {
    let records = load_annotations_jsonl(&args.annotations)
        .with_context(|| format!("loading {}", args.annotations.display()))?;

    let rows = label_distribution(&records);
    let mut text = render_label_distribution(&rows);

    let distance = match args.alpha_distance.as_str() {
        "interval" => AlphaDistance::Interval,
        "ordinal" => AlphaDistance::Ordinal,
        other => {
            return Err(
                chiron_core::Error::Config(format!("unknown alpha distance: {other:?}")).into(),
            )
        }
    };
    let alpha = if records.iter().any(|r| r.labels.len() >= 2) {
        let value = krippendorff_alpha(&records, distance)?;
        text.push_str(&format!(
            "\nKrippendorff alpha ({}): {value:.4}\n",
            distance.id()
        ));
        Some(value)
    } else {
        text.push_str("\nKrippendorff alpha: n/a (single annotator)\n");
        None
    };

    let mut report = None;
    if let Some(path) = &args.predictions {
        let by_statement = load_predictions(path)?;
        let mut predictions = Vec::with_capacity(records.len());
        let mut golds = Vec::with_capacity(records.len());
        for record in &records {
            let gold = record.labels.get(&args.gold_annotator).ok_or_else(|| {
                chiron_core::Error::InvalidInput(format!(
                    "no {:?} label for statement {:?}",
                    args.gold_annotator, record.statement
                ))
            })?;
            let prediction = by_statement.get(&record.statement).ok_or_else(|| {
                chiron_core::Error::InvalidInput(format!(
                    "no stored prediction for statement {:?}",
                    record.statement
                ))
            })?;
            golds.push(*gold);
            predictions.push(*prediction);
        }
        let mut eval = classifier_report(&predictions, &golds, args.policy)?;
        eval.alpha = alpha;
        text.push('\n');
        text.push_str(&render_eval_report(&eval));
        report = Some(eval);
    }

    let run = RunConfig::new(
        &args.annotations,
        None,
        &PipelineArgs {
            policy: args.policy,
            ..PipelineArgs::default()
        },
    );
    create_dir(&args.out)?;
    write_file(
        &args.out.join("eval.txt"),
        &format!("{}{}", run.text_header(), text),
    )?;
    let mut json = serde_json::to_string_pretty(&EvalFile {
        provenance: &run,
        distribution: &rows,
        alpha,
        report: report.as_ref(),
    })?;
    json.push('\n');
    write_file(&args.out.join("eval.json"), &json)?;

    print!("{text}");
    Ok(ExitStatus::Clean)
}
