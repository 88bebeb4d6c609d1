//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! experiment = indicator1d
//! betas = 0.4, 0.75, 1.0
//! levels = 3..9
//! inner_products = lumped
//! loads = fem, box
//! frac_method = sinc:0.2
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{ExperimentKind, ExperimentSpec};

pub const KEYS: [&str; 12] = [
    "name",
    "experiment",
    "betas",
    "levels",
    "inner_products",
    "load",
    "loads",
    "frac_method",
    "bilinear_form",
    "output_path",
    "overkill_level",
    "series_terms",
];

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (k, v) = text.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(T::from_str).collect()
}

fn number<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{v}`")))
}

fn levels(v: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (usize, usize) = (number("levels", a.trim())?, number("levels", b.trim())?);
        return Ok((a..=b).collect());
    }
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| number("levels", s)).collect()
}

fn apply(spec: &mut ExperimentSpec, key: &str, v: &str) -> Result<()> {
    match key {
        "name" => spec.name = v.to_string(),
        "experiment" => {}
        "betas" => spec.betas = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| number("betas", s)).collect::<Result<_>>()?,
        "levels" => spec.levels = levels(v)?,
        "inner_products" => spec.inner_products = list(v)?,
        "load" | "loads" => spec.loads = list(v)?,
        "frac_method" => spec.frac_method = v.parse()?,
        "bilinear_form" => spec.bilinear_form = v.parse()?,
        "output_path" => spec.output_path = (!v.is_empty()).then(|| PathBuf::from(v)),
        "overkill_level" => spec.overkill_level = number(key, v)?,
        "series_terms" => spec.series_terms = Some(number(key, v)?),
        other => return Err(Error::invalid(format!("unknown key `{other}`"))),
    }
    Ok(())
}

/// Parse a configuration, then apply `key=value` overrides in order.
/// Unset keys take the defaults of the chosen experiment.
pub fn parse_experiment(text: &str, overrides: &[String]) -> Result<ExperimentSpec> {
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line).ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        if !KEYS.contains(&k) {
            return Err(Error::Parse { line: i + 1, msg: format!("unknown key `{k}`") });
        }
        if !seen.insert(k.to_string()) {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate key `{k}`") });
        }
        entries.push((Some(i + 1), k.to_string(), v.to_string()));
    }
    for o in overrides {
        let (k, v) = split_pair(o).ok_or_else(|| Error::invalid(format!("override `{o}` is not `key=value`")))?;
        if !KEYS.contains(&k) {
            return Err(Error::invalid(format!("unknown key `{k}` in override")));
        }
        entries.push((None, k.to_string(), v.to_string()));
    }
    let experiment: ExperimentKind = entries
        .iter()
        .rev()
        .find(|e| e.1 == "experiment")
        .ok_or_else(|| Error::invalid("configuration does not set `experiment`"))?
        .2
        .parse()?;
    let mut spec = ExperimentSpec::defaults(experiment);
    for (line, k, v) in &entries {
        apply(&mut spec, k, v).map_err(|e| match (line, e) {
            (Some(line), Error::InvalidArgument(msg)) => Error::Parse { line: *line, msg },
            (_, e) => e,
        })?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn load_experiment(path: &Path, overrides: &[String]) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_experiment(&text, overrides)
}
