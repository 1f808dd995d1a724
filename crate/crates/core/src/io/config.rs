//! TOML evaluation config.
//!
//! Every key is optional; an empty file yields [`EvalConfig::default`].
//! Unknown keys are rejected with the closest valid key, before any value
//! is interpreted.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::EvalConfig;

enum Node {
    Leaf,
    Table(&'static [(&'static str, Node)]),
    /// Internally tagged table: the tag value picks the permitted keys.
    Tagged {
        tag: &'static str,
        variants: &'static [(&'static str, &'static [(&'static str, Node)])],
    },
}

use Node::{Leaf, Table, Tagged};

const SIM: &[(&str, Node)] = &[
    ("max_clicks_per_polarity", Leaf),
    ("count_law", Leaf),
    ("mix_official_fraction", Leaf),
    ("core_weight_exponent", Leaf),
    ("center_probability", Leaf),
    ("bg_band_min_vox", Leaf),
    ("bg_band_max_vox", Leaf),
    ("custom_bg_radius_vox", Leaf),
];

const REFERENCE: &[(&str, Node)] = &[
    ("auto_threshold", Leaf),
    ("grow_fraction", Leaf),
    ("min_component_vol_mm3", Leaf),
    ("seed_radius_vox", Leaf),
    ("connectivity", Leaf),
];

const ROOT: &[(&str, Node)] = &[
    ("budgets", Leaf),
    (
        "encoding",
        Tagged {
            tag: "kind",
            variants: &[("gaussian", &[("sigma", Leaf), ("use_mm", Leaf)]), ("edt", &[("size", Leaf), ("use_mm", Leaf)])],
        },
    ),
    ("sim", Table(SIM)),
    (
        "backend",
        Tagged {
            tag: "name",
            variants: &[("reference", REFERENCE), ("external", &[("dir", Leaf)])],
        },
    ),
    ("prompt_source", Leaf),
    ("threshold", Leaf),
    ("connectivity", Leaf),
    ("workers", Leaf),
    ("seed", Leaf),
    ("target_spacing", Leaf),
    (
        "ct_normalization",
        Table(&[("clip_lo", Leaf), ("clip_hi", Leaf), ("mean", Leaf), ("std", Leaf)]),
    ),
    ("output", Table(&[("json", Leaf), ("csv", Leaf)])),
];

fn nearest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .min_by_key(|c| (strsim::levenshtein(key, c), *c))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn unknown(path: &str, key: &str, allowed: &[&str], note: Option<String>) -> Error {
    let mut msg = format!("unknown key `{}`", join(path, key));
    if let Some(n) = note {
        msg.push_str(&format!(" ({n})"));
    }
    if let Some(best) = nearest(key, allowed.iter().copied()) {
        msg.push_str(&format!("; did you mean `{best}`?"));
    }
    msg.push_str(&format!(" valid keys here: {}", allowed.join(", ")));
    Error::Config(msg)
}

fn check_fields(table: &toml::Table, fields: &[(&str, Node)], extra: &[&str], path: &str) -> Result<()> {
    for (key, value) in table {
        if extra.contains(&key.as_str()) {
            continue;
        }
        match fields.iter().find(|(name, _)| name == key) {
            Some((_, node)) => check(value, node, &join(path, key))?,
            None => {
                let allowed: Vec<&str> = extra.iter().copied().chain(fields.iter().map(|(n, _)| *n)).collect();
                return Err(unknown(path, key, &allowed, None));
            }
        }
    }
    Ok(())
}

fn check(value: &toml::Value, node: &Node, path: &str) -> Result<()> {
    // type mismatches are reported by deserialisation
    let Some(table) = value.as_table() else {
        return Ok(());
    };
    match node {
        Leaf => Ok(()),
        Table(fields) => check_fields(table, fields, &[], path),
        Tagged { tag, variants } => {
            let chosen = table.get(*tag).and_then(|v| v.as_str());
            match chosen.and_then(|c| variants.iter().find(|(name, _)| *name == c)) {
                Some((name, fields)) => check_fields(table, fields, &[tag], path).map_err(|e| {
                    let Error::Config(msg) = &e else { return e };
                    // point out keys that belong to a sibling variant
                    let other = variants.iter().find(|(n, fs)| {
                        n != name && fs.iter().any(|(k, _)| msg.starts_with(&format!("unknown key `{}`", join(path, k))))
                    });
                    match other {
                        Some((n, _)) => Error::Config(format!("{msg} (that key belongs to {tag} = \"{n}\")")),
                        None => e,
                    }
                }),
                None => {
                    let mut all: Vec<&str> = vec![tag];
                    for (_, fs) in variants.iter() {
                        for (k, _) in fs.iter() {
                            if !all.contains(k) {
                                all.push(k);
                            }
                        }
                    }
                    for key in table.keys() {
                        if !all.contains(&key.as_str()) {
                            return Err(unknown(path, key, &all, None));
                        }
                    }
                    Ok(())
                }
            }
        }
    }
}

pub fn parse_config(text: &str) -> Result<EvalConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    check_fields(&table, ROOT, &[], "")?;
    let cfg: EvalConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<EvalConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// The config as TOML, readable by [`parse_config`].
pub fn config_to_toml(cfg: &EvalConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}
