use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use undr_core::catalog::{filter_catalog, read_catalog};
use undr_core::harness::{generate_catalog, generate_pool, ValueDraw};
use undr_core::needslog::{parse_records, ParseOptions, ParseOutcome, RecordFormat};
use undr_core::{presets, FacetSchema, Product, SelectionRecord, TaskList};

use crate::args::{InputFormat, BUILTIN, STDIN};
use crate::CliError;

/// Fails unless `source` is a sentinel or an existing file.
pub fn check_source(flag: &str, source: &str, sentinels: &[&str]) -> Result<(), CliError> {
    if sentinels.contains(&source) || Path::new(source).is_file() {
        Ok(())
    } else {
        Err(CliError::invalid(format!("--{flag}: no such file `{source}`")))
    }
}

pub fn check_path(flag: &str, path: &Option<PathBuf>) -> Result<(), CliError> {
    match path {
        Some(p) if !p.is_file() => Err(CliError::invalid(format!("--{flag}: no such file `{}`", p.display()))),
        _ => Ok(()),
    }
}

pub fn open(source: &str) -> Result<Box<dyn BufRead>, CliError> {
    if source == STDIN {
        return Ok(Box::new(BufReader::new(std::io::stdin())));
    }
    let file = File::open(source).map_err(|e| CliError::invalid(format!("{source}: {e}")))?;
    Ok(Box::new(BufReader::new(file)))
}

fn read_text(source: &str) -> Result<String, CliError> {
    let mut text = String::new();
    open(source)?.read_to_string(&mut text).map_err(|e| CliError::invalid(format!("{source}: {e}")))?;
    Ok(text)
}

pub fn schema(source: &str) -> Result<FacetSchema, CliError> {
    if source == BUILTIN {
        return Ok(presets::laptop_schema());
    }
    FacetSchema::from_json(&read_text(source)?).map_err(|e| CliError::invalid(format!("{source}: {e}")))
}

pub fn tasks(source: &str) -> Result<TaskList, CliError> {
    if source == BUILTIN {
        return Ok(TaskList::default());
    }
    let list: TaskList =
        serde_json::from_str(&read_text(source)?).map_err(|e| CliError::invalid(format!("{source}:{}: {e}", e.line())))?;
    TaskList::new(list.tasks, list.advanced).map_err(|e| CliError::invalid(format!("{source}: {e}")))
}

pub fn record_format(source: &str, format: InputFormat) -> RecordFormat {
    match format {
        InputFormat::Csv => RecordFormat::Csv,
        InputFormat::Jsonl => RecordFormat::JsonLines,
        InputFormat::Auto if source.to_ascii_lowercase().ends_with(".csv") => RecordFormat::Csv,
        InputFormat::Auto => RecordFormat::JsonLines,
    }
}

pub fn parse(source: &str, format: InputFormat, schema: &FacetSchema, options: &ParseOptions) -> Result<ParseOutcome, CliError> {
    parse_records(open(source)?, record_format(source, format), schema, options)
        .map_err(|e| CliError::invalid(format!("{source}: {e}")))
}

pub fn survey_pool(seed: u64, schema: &FacetSchema, tasks: &TaskList, draw: &ValueDraw) -> Result<Vec<SelectionRecord>, CliError> {
    let spec = presets::table1_pool_spec(seed, draw);
    generate_pool(&spec, schema, tasks).map_err(|e| CliError::invalid(e.to_string()))
}

/// Records from a file or the built-in survey reconstruction. Rejected
/// lines are reported on stderr and skipped.
pub fn records(source: &str, seed: u64, schema: &FacetSchema, tasks: &TaskList) -> Result<Vec<SelectionRecord>, CliError> {
    if source == BUILTIN {
        return survey_pool(seed, schema, tasks, &ValueDraw::default());
    }
    let options = ParseOptions { tasks: tasks.clone(), exclusions: Vec::new() };
    let outcome = parse(source, InputFormat::Auto, schema, &options)?;
    for r in &outcome.rejected {
        eprintln!("{source}:{}: skipped: {}", r.line, r.reason);
    }
    Ok(outcome.records)
}

pub fn catalog(source: &str, seed: u64, schema: &FacetSchema, min_ratings: u64) -> Result<Vec<Product>, CliError> {
    let products = if source == BUILTIN {
        generate_catalog(presets::CATALOG_SIZE, schema, seed)
    } else {
        read_catalog(open(source)?).map_err(|e| CliError::invalid(format!("{source}: {e}")))?
    };
    let kept = filter_catalog(&products, schema, min_ratings);
    if kept.len() < products.len() {
        eprintln!("{source}: kept {} of {} products", kept.len(), products.len());
    }
    Ok(kept)
}

/// Writes `bytes` to `path`, or stdout when no path is given.
pub fn emit(path: &Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    let result = match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| format!("stdout: {e}"))
        }
    };
    result.map_err(CliError::invalid)
}

pub fn emit_json(path: &Option<PathBuf>, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("result serializes");
    text.push('\n');
    emit(path, text.as_bytes())
}
