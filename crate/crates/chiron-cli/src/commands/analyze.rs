use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use chiron_core::corpus::load_stories_jsonl;
use chiron_core::metrics::{density, pearson, render_density_report, DensityReport};
use chiron_core::CharacterSheet;

use crate::commands::{create_dir, write_file, ExitStatus};
use crate::config::{PipelineArgs, RunConfig};

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    /// Directory of sheet JSON files (as written by the sheet command).
    #[arg(long)]
    pub sheets: PathBuf,

    /// Story corpus the sheets were built from (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,

    /// Output directory for density.txt and density.json.
    #[arg(long)]
    pub out: PathBuf,

    /// Human story-character scores to correlate against (JSON array).
    #[arg(long)]
    pub human_scores: Option<PathBuf>,

    /// Source label for the report.
    #[arg(long, default_value = "sheets")]
    pub source: String,

    /// Setup label for the report.
    #[arg(long, default_value = "default")]
    pub setup: String,
}

#[derive(Deserialize)]
struct SheetFileIn {
    sheet: CharacterSheet,
}

#[derive(Deserialize)]
struct HumanScore {
    story_id: String,
    character_id: String,
    score: f64,
}

#[derive(Serialize)]
struct AnalysisFile<'a> {
    provenance: &'a RunConfig,
    report: &'a DensityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pearson: Option<f64>,
}

fn load_sheets(dir: &PathBuf) -> anyhow::Result<Vec<CharacterSheet>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(chiron_core::Error::InvalidInput(format!(
            "no sheet files in {}",
            dir.display()
        ))
        .into());
    }
    let mut sheets = Vec::with_capacity(paths.len());
    for path in &paths {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        // Sheets written by the CLI are wrapped with provenance; accept bare
        // CharacterSheet JSON too.
        let sheet = serde_json::from_str::<SheetFileIn>(&text)
            .map(|wrapper| wrapper.sheet)
            .or_else(|_| serde_json::from_str::<CharacterSheet>(&text))
            .with_context(|| format!("parsing {}", path.display()))?;
        sheets.push(sheet);
    }
    Ok(sheets)
}

pub fn run(args: &AnalyzeArgs) -> anyhow::Result<ExitStatus> {
    let sheets = load_sheets(&args.sheets)?;
    let stories = load_stories_jsonl(&args.corpus)
        .with_context(|| format!("loading {}", args.corpus.display()))?;
    let report = density(&sheets, &stories, &args.source, &args.setup)?;
    let mut text = render_density_report(&report);

    let mut pearson_value = None;
    if let Some(path) = &args.human_scores {
        let raw =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let scores: Vec<HumanScore> =
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        let mut by_combo: BTreeMap<(String, String), f64> = BTreeMap::new();
        for entry in scores {
            let key = (entry.story_id, entry.character_id);
            if by_combo.insert(key.clone(), entry.score).is_some() {
                return Err(chiron_core::Error::InvalidInput(format!(
                    "duplicate human score for {}/{}",
                    key.0, key.1
                ))
                .into());
            }
        }
        let mut ratios = Vec::with_capacity(report.combos.len());
        let mut human = Vec::with_capacity(report.combos.len());
        for combo in &report.combos {
            let key = (combo.story_id.clone(), combo.character_id.clone());
            let score = by_combo.get(&key).ok_or_else(|| {
                chiron_core::Error::InvalidInput(format!(
                    "no human score for {}/{}",
                    combo.story_id, combo.character_id
                ))
            })?;
            ratios.push(combo.ratio);
            human.push(*score);
        }
        let r = pearson(&ratios, &human)?;
        text.push_str(&format!("\nPearson vs human scores: {r:.4}\n"));
        pearson_value = Some(r);
    }

    let run = RunConfig::new(&args.corpus, None, &PipelineArgs::default());
    create_dir(&args.out)?;
    write_file(
        &args.out.join("density.txt"),
        &format!("{}{}", run.text_header(), text),
    )?;
    let mut json = serde_json::to_string_pretty(&AnalysisFile {
        provenance: &run,
        report: &report,
        pearson: pearson_value,
    })?;
    json.push('\n');
    write_file(&args.out.join("density.json"), &json)?;

    print!("{text}");
    if report.excluded.is_empty() {
        Ok(ExitStatus::Clean)
    } else {
        log::warn!("{} combos excluded", report.excluded.len());
        Ok(ExitStatus::Partial)
    }
}
