//! Reading programs and inputs, writing artifacts.

use std::fs;
use std::path::Path;

use pathprune_core::corpus::{scenario, scenario_names};
use pathprune_core::ir::{parse_program_with, print_program, ParseOptions, Program, TargetSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::ProgramArgs;
use crate::{CliError, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))
}

/// Parses program text, accepting pass-inserted instructions.
pub fn parse(text: &str, origin: &str) -> Result<Program> {
    parse_program_with(text, ParseOptions { trusted: true })
        .map_err(|e| CliError::Validation(format!("{origin}:{e}")))
}

pub fn load_program_file(path: &Path) -> Result<Program> {
    parse(&read_text(path)?, &path.display().to_string())
}

pub fn load_scenario(name: &str) -> Result<Program> {
    scenario(name).map(|c| c.program()).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scenario `{name}` (known: {})",
            scenario_names().join(", ")
        ))
    })
}

pub fn load_program(args: &ProgramArgs) -> Result<Program> {
    match (&args.program, &args.scenario) {
        (Some(path), _) => load_program_file(path),
        (None, Some(name)) => load_scenario(name),
        (None, None) => Err(CliError::Usage("one of --program or --scenario is required".into())),
    }
}

/// Resolves `--program`/`--scenario` and `--targets`.
pub fn load(args: &ProgramArgs) -> Result<(Program, TargetSpec)> {
    let p = load_program(args)?;
    let spec = targets(&p, &args.targets)?;
    Ok((p, spec))
}

pub fn targets(p: &Program, ids: &[String]) -> Result<TargetSpec> {
    let spec = if ids.is_empty() {
        TargetSpec::from_program(p)?
    } else {
        TargetSpec::new(ids.iter().cloned())?
    };
    spec.check(p)?;
    Ok(spec)
}

/// Decodes `hex:..`, `file:PATH` or `text:..`. A bare string is taken as text.
pub fn parse_input(spec: &str) -> Result<Vec<u8>> {
    if let Some(h) = spec.strip_prefix("hex:") {
        hex::decode(h).map_err(|e| CliError::Usage(format!("bad hex input `{h}`: {e}")))
    } else if let Some(path) = spec.strip_prefix("file:") {
        read_file(Path::new(path))
    } else {
        Ok(spec.strip_prefix("text:").unwrap_or(spec).as_bytes().to_vec())
    }
}

/// Hash of the program with pass-inserted instructions and the `targets`
/// line removed, so original, marked and pruned builds agree.
pub fn fingerprint(p: &Program) -> String {
    let mut q = p.strip_synthetic();
    q.declared_targets.clear();
    hex::encode(Sha256::digest(print_program(&q).as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when it is `None`.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}
