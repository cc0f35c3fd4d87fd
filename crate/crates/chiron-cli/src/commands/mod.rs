use std::path::Path;

use anyhow::Context;

pub mod analyze;
pub mod eval;
pub mod ingest;
pub mod predict;
pub mod sheet;
pub mod summarize;

/// Command outcome the process exit code is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Clean,
    Partial,
}

pub(crate) fn create_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `{story_id}__{character_id}.{ext}`, the per-combo artifact name.
pub(crate) fn combo_file_name(story_id: &str, character_id: &str, ext: &str) -> String {
    format!("{story_id}__{character_id}.{ext}")
}
