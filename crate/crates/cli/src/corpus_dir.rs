//! On-disk campaign corpora: raw input files plus `MANIFEST.json`.

use std::fs;
use std::path::Path;

use pathprune_fuzz::campaign::{CampaignResult, EntryKind};
use pathprune_fuzz::metrics::{corpus_file_name, CorpusFile};
use serde::{Deserialize, Serialize};

use crate::load::{read_file, read_text, to_json, write};
use crate::{CliError, Result};

pub const MANIFEST: &str = "MANIFEST.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// See [`crate::load::fingerprint`].
    pub program_fingerprint: String,
    pub targets: Vec<String>,
    pub mode: String,
    pub rng_seed: u64,
    pub per_run_budget: u64,
    pub executions: u64,
    pub total_steps: u64,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: EntryKind,
    pub found_at: u64,
    pub sha256: String,
}

pub fn write_corpus(dir: &Path, result: &CampaignResult, fingerprint: &str, targets: Vec<String>) -> Result<()> {
    let mut files = Vec::with_capacity(result.corpus.len());
    for (i, e) in result.corpus.iter().enumerate() {
        let name = corpus_file_name(i);
        write(&dir.join(&name), &e.input)?;
        files.push(ManifestEntry {
            name,
            kind: e.kind,
            found_at: e.found_at,
            sha256: crate::load::sha256_hex(&e.input),
        });
    }
    let s = &result.stats;
    let manifest = Manifest {
        program_fingerprint: fingerprint.to_string(),
        targets,
        mode: s.mode.to_string(),
        rng_seed: s.rng_seed,
        per_run_budget: s.per_run_budget,
        executions: s.executions,
        total_steps: s.total_steps,
        files,
    };
    write(&dir.join(MANIFEST), to_json(&manifest))
}

/// Loads a corpus directory. With a manifest, exactly the listed files are
/// read in manifest order; without one, every regular file in name order.
pub fn read_corpus(dir: &Path) -> Result<(Vec<CorpusFile>, Option<Manifest>)> {
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.is_file() {
        let m: Manifest = serde_json::from_str(&read_text(&manifest_path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", manifest_path.display())))?;
        let files = m
            .files
            .iter()
            .map(|e| {
                Ok(CorpusFile {
                    name: e.name.clone(),
                    input: read_file(&dir.join(&e.name))?,
                    found_at: Some(e.found_at),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((files, Some(m)));
    }
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read corpus {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let files = names
        .into_iter()
        .map(|name| {
            Ok(CorpusFile {
                input: read_file(&dir.join(&name))?,
                name,
                found_at: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((files, None))
}
