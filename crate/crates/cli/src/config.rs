//! Experiment configuration files: TOML or JSON, schema version 1.

use std::fs;
use std::path::{Path, PathBuf};

use rfim_core::cltlab::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const SCHEMA_VERSION: u64 = 1;
/// Overrides `master_seed` when set.
pub const SEED_ENV: &str = "RFIM_LAB_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
}

/// Where results go; every entry is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub json: Option<String>,
    pub csv: Option<String>,
    pub plot: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub experiment: ExperimentConfig,
    pub output: OutputSpec,
    /// File stem, used to name outputs.
    pub stem: String,
}

/// Parses TOML or JSON text into a JSON value; `.json` files are read as JSON,
/// anything else is tried as TOML first.
pub fn parse_text(text: &str, json: bool) -> Result<Value, String> {
    if json {
        return serde_json::from_str(text).map_err(|e| e.to_string());
    }
    match toml::from_str::<toml::Table>(text) {
        Ok(t) => serde_json::to_value(t).map_err(|e| e.to_string()),
        Err(e) => serde_json::from_str(text).map_err(|_| e.to_string()),
    }
}

pub fn read_value(path: &Path) -> Result<Value, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_text(&text, json).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let value = read_value(path)?;
    let (experiment, output) = from_value(value)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    Ok(LoadedConfig {
        experiment,
        output,
        stem,
    })
}

/// Schema check followed by typed deserialization.
pub fn from_value(mut value: Value) -> Result<(ExperimentConfig, OutputSpec), ConfigError> {
    let problems = check_schema(&value);
    if !problems.is_empty() {
        return Err(ConfigError::Schema(problems));
    }
    let obj = value.as_object_mut().expect("checked above");
    obj.remove("schema_version");
    let output = match obj.remove("output") {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| ConfigError::Schema(vec![format!("output: {e}")]))?,
        None => OutputSpec::default(),
    };
    let experiment: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Schema(vec![e.to_string()]))?;
    experiment
        .validate()
        .map_err(|e| ConfigError::Schema(vec![e.to_string()]))?;
    Ok((experiment, output))
}

/// Replaces `master_seed` with the value of `RFIM_LAB_SEED`, if given.
pub fn apply_seed_override(
    cfg: &mut ExperimentConfig,
    env: Option<&str>,
) -> Result<(), ConfigError> {
    if let Some(raw) = env {
        let seed = raw.trim().parse::<u64>().map_err(|_| {
            ConfigError::Schema(vec![format!(
                "{SEED_ENV}: {raw:?} is not an unsigned integer"
            )])
        })?;
        cfg.master_seed = seed;
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Ty {
    Num,
    Int,
    Bool,
    Str,
    NumList,
    Table,
    Any,
}

fn type_ok(v: &Value, ty: Ty) -> bool {
    match ty {
        Ty::Num => v.is_number(),
        Ty::Int => v.as_u64().is_some(),
        Ty::Bool => v.is_boolean(),
        Ty::Str => v.is_string(),
        Ty::NumList => v.as_array().is_some_and(|a| a.iter().all(Value::is_number)),
        Ty::Table => v.is_object(),
        Ty::Any => true,
    }
}

fn type_name(ty: Ty) -> &'static str {
    match ty {
        Ty::Num => "a number",
        Ty::Int => "a non-negative integer",
        Ty::Bool => "a boolean",
        Ty::Str => "a string",
        Ty::NumList => "a list of numbers",
        Ty::Table => "a table",
        Ty::Any => "a value",
    }
}

/// Checks `obj` against `(key, type, required)` entries, recording every problem.
fn check_keys(
    path: &str,
    obj: &Map<String, Value>,
    keys: &[(&str, Ty, bool)],
    out: &mut Vec<String>,
) {
    for k in obj.keys() {
        if !keys.iter().any(|(name, ..)| name == k) {
            out.push(format!("{path}{k}: unknown key"));
        }
    }
    for &(name, ty, required) in keys {
        match obj.get(name) {
            Some(v) if !type_ok(v, ty) => {
                out.push(format!("{path}{name}: expected {}", type_name(ty)))
            }
            None if required => out.push(format!("{path}{name}: missing required key")),
            _ => {}
        }
    }
}

fn table<'a>(path: &str, v: &'a Value, out: &mut Vec<String>) -> Option<&'a Map<String, Value>> {
    let t = v.as_object();
    if t.is_none() {
        out.push(format!("{}: expected a table", path.trim_end_matches('.')));
    }
    t
}

/// Dispatches on a `kind`/`type` tag and checks the variant's keys.
fn check_tagged(
    path: &str,
    v: &Value,
    tag: &str,
    common: &[(&str, Ty, bool)],
    variants: &[(&str, &[(&str, Ty, bool)])],
    out: &mut Vec<String>,
) {
    let Some(obj) = table(path, v, out) else {
        return;
    };
    let Some(kind) = obj.get(tag) else {
        out.push(format!("{path}{tag}: missing required key"));
        return;
    };
    let Some(kind) = kind.as_str() else {
        out.push(format!("{path}{tag}: expected a string"));
        return;
    };
    let Some((_, extra)) = variants.iter().find(|(name, _)| *name == kind) else {
        let names: Vec<&str> = variants.iter().map(|v| v.0).collect();
        out.push(format!(
            "{path}{tag}: unknown value {kind:?} (expected one of {})",
            names.join(", ")
        ));
        return;
    };
    let mut keys: Vec<(&str, Ty, bool)> = vec![(tag, Ty::Str, true)];
    keys.extend_from_slice(common);
    keys.extend_from_slice(extra);
    check_keys(path, obj, &keys, out);
}

fn check_choice(path: &str, v: Option<&Value>, choices: &[&str], out: &mut Vec<String>) {
    if let Some(s) = v.and_then(Value::as_str) {
        if !choices.contains(&s) {
            out.push(format!(
                "{path}: unknown value {s:?} (expected one of {})",
                choices.join(", ")
            ));
        }
    }
}

const STEP_Q: &[(&str, Ty, bool)] = &[("breaks", Ty::NumList, true), ("values", Ty::NumList, true)];
const STEP_F: &[(&str, Ty, bool)] = &[("breaks", Ty::NumList, true), ("values", Ty::Any, true)];
const EXPONENT: &[(&str, Ty, bool)] = &[("exponent", Ty::Num, true)];
const H: &[(&str, Ty, bool)] = &[("h", Ty::Num, true)];
const ATOMS: &[(&str, Ty, bool)] = &[
    ("points", Ty::NumList, true),
    ("weights", Ty::NumList, true),
];

/// Every schema problem found, as `path: message` lines.
pub fn check_schema(v: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = table("config", v, &mut out) else {
        return out;
    };
    let norms = top.get("mode").and_then(Value::as_str) == Some("norms");
    let has_reps = top.contains_key("replicates") || top.contains_key("M");
    check_keys(
        "",
        top,
        &[
            ("schema_version", Ty::Int, false),
            ("ensemble", Ty::Table, true),
            ("field", Ty::Table, false),
            ("measure", Ty::Table, false),
            ("q_recipe", Ty::Table, false),
            ("mode", Ty::Str, false),
            ("replicates", Ty::Int, false),
            ("M", Ty::Int, false),
            ("burn_in", Ty::Int, false),
            ("thinning", Ty::Int, false),
            ("samples_per_chain", Ty::Int, false),
            ("rho", Ty::Num, true),
            ("master_seed", Ty::Int, false),
            ("centering", Ty::Str, false),
            ("upsilon_floor", Ty::Num, false),
            ("diagnostic_chains", Ty::Int, false),
            ("diagnostic_sweeps", Ty::Int, false),
            ("four_norm_restarts", Ty::Int, false),
            ("force_heuristic", Ty::Bool, false),
            ("output", Ty::Table, false),
        ],
        &mut out,
    );
    if !has_reps && !norms {
        out.push("replicates: missing required key (alias M)".into());
    }
    if top.contains_key("replicates") && top.contains_key("M") {
        out.push("M: duplicates replicates".into());
    }
    if let Some(ver) = top.get("schema_version").and_then(Value::as_u64) {
        if ver != SCHEMA_VERSION {
            out.push(format!(
                "schema_version: unsupported version {ver} (expected {SCHEMA_VERSION})"
            ));
        }
    }
    check_choice(
        "mode",
        top.get("mode"),
        &["quenched", "annealed", "lln", "contraction", "norms"],
        &mut out,
    );
    check_choice(
        "centering",
        top.get("centering"),
        &["mean_field", "explicit", "zero"],
        &mut out,
    );

    if let Some(e) = top.get("ensemble") {
        let common: &[(&str, Ty, bool)] = &[
            ("theta", Ty::Num, true),
            ("n", Ty::Int, true),
            ("seed", Ty::Int, false),
        ];
        check_tagged(
            "ensemble.",
            e,
            "kind",
            common,
            &[
                ("curie_weiss", &[]),
                ("erdos_renyi", &[("p", Ty::Num, true)]),
                (
                    "d_regular",
                    &[("d", Ty::Int, true), ("random", Ty::Bool, false)],
                ),
                (
                    "graphon",
                    &[("f", Ty::Table, true), ("gamma", Ty::Num, false)],
                ),
                (
                    "hopfield",
                    &[
                        ("patterns", Ty::Int, true),
                        ("dilution", Ty::Num, false),
                        ("pattern", Ty::Str, false),
                    ],
                ),
            ],
            &mut out,
        );
        check_choice(
            "ensemble.pattern",
            e.get("pattern"),
            &["rademacher", "gaussian"],
            &mut out,
        );
        if let Some(f) = e.get("f").filter(|f| f.is_object()) {
            check_tagged(
                "ensemble.f.",
                f,
                "type",
                &[],
                &[
                    ("constant", &[("value", Ty::Num, true)]),
                    ("step", STEP_F),
                    ("product", EXPONENT),
                ],
                &mut out,
            );
        }
    }
    if let Some(f) = top.get("field") {
        check_tagged(
            "field.",
            f,
            "kind",
            &[("seed", Ty::Int, false)],
            &[
                ("constant", H),
                ("two_point_symmetric", H),
                ("uniform_symmetric", H),
                ("atoms", ATOMS),
            ],
            &mut out,
        );
    }
    if let Some(m) = top.get("measure") {
        check_tagged(
            "measure.",
            m,
            "kind",
            &[],
            &[("rademacher", &[]), ("uniform", &[]), ("atoms", ATOMS)],
            &mut out,
        );
    }
    if let Some(q) = top.get("q_recipe") {
        check_tagged(
            "q_recipe.",
            q,
            "kind",
            &[],
            &[
                ("flat", &[]),
                ("contrast", &[("seed", Ty::Int, true)]),
                (
                    "graphon_eigenfunction",
                    &[("q", Ty::Table, true), ("lambda_f", Ty::Num, true)],
                ),
            ],
            &mut out,
        );
        if let Some(qf) = q.get("q").filter(|f| f.is_object()) {
            check_tagged(
                "q_recipe.q.",
                qf,
                "type",
                &[],
                &[("constant", &[]), ("step", STEP_Q), ("power", EXPONENT)],
                &mut out,
            );
        }
    }
    if let Some(o) = top.get("output") {
        if let Some(obj) = o.as_object() {
            check_keys(
                "output.",
                obj,
                &[
                    ("dir", Ty::Str, false),
                    ("json", Ty::Str, false),
                    ("csv", Ty::Str, false),
                    ("plot", Ty::Str, false),
                ],
                &mut out,
            );
        }
    }
    out
}
