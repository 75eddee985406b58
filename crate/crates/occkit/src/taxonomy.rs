//! Class-id vocabularies and the cross-source remapping tables.
//!
//! A taxonomy is loaded from a small text config:
//!
//! ```text
//! name unified
//! class 0 general_object
//! class 1 vehicle
//! free 10
//! dynamic 1 2 3 4
//! priority 4 2 3 1 ...
//! ```
//!
//! Label maps use one `source_id -> target_id # comment` line per id.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, LazyLock};

use crate::error::{Error, Result};

pub type ClassId = u8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTaxonomy {
    pub name: String,
    /// id -> class name, sorted by id.
    pub classes: BTreeMap<ClassId, String>,
    pub free_id: ClassId,
    /// Classes that move and therefore carry per-agent flow.
    pub dynamic_ids: BTreeSet<ClassId>,
    /// Occupiable ids from highest to lowest precedence for the 2D collapse.
    /// Must be a permutation of the non-free ids; free is implicitly lowest.
    pub priority: Vec<ClassId>,
}

impl LabelTaxonomy {
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut classes = BTreeMap::new();
        let mut free_id = None;
        let mut dynamic_ids = BTreeSet::new();
        let mut priority = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                line: lineno + 1,
                reason,
            };
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            match key {
                "name" => {
                    name = Some(
                        it.next()
                            .ok_or_else(|| err("missing taxonomy name".into()))?
                            .to_string(),
                    );
                }
                "class" => {
                    let id = parse_id(it.next(), lineno)?;
                    let cname = it
                        .next()
                        .ok_or_else(|| err("missing class name".into()))?
                        .to_string();
                    if classes.insert(id, cname).is_some() {
                        return Err(err(format!("duplicate class id {id}")));
                    }
                }
                "free" => free_id = Some(parse_id(it.next(), lineno)?),
                "dynamic" => {
                    for tok in it.by_ref() {
                        dynamic_ids.insert(parse_id(Some(tok), lineno)?);
                    }
                    continue;
                }
                "priority" => {
                    for tok in it.by_ref() {
                        priority.push(parse_id(Some(tok), lineno)?);
                    }
                    continue;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
            if let Some(extra) = it.next() {
                return Err(err(format!("trailing token `{extra}`")));
            }
        }

        let tax = LabelTaxonomy {
            name: name.ok_or(Error::Parse {
                line: 0,
                reason: "missing `name`".into(),
            })?,
            classes,
            free_id: free_id.ok_or(Error::Parse {
                line: 0,
                reason: "missing `free`".into(),
            })?,
            dynamic_ids,
            priority,
        };
        tax.validate()?;
        Ok(tax)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Parse { line: 0, reason };
        if !self.classes.contains_key(&self.free_id) {
            return Err(fail(format!("free id {} has no class entry", self.free_id)));
        }
        for id in &self.dynamic_ids {
            if !self.classes.contains_key(id) {
                return Err(fail(format!("dynamic id {id} not a class")));
            }
            if *id == self.free_id {
                return Err(fail("free cannot be dynamic".into()));
            }
        }
        // priority must be a permutation of the non-free ids
        let mut seen = BTreeSet::new();
        for id in &self.priority {
            if *id == self.free_id {
                return Err(fail("free id listed in priority".into()));
            }
            if !self.classes.contains_key(id) {
                return Err(fail(format!("priority id {id} not a class")));
            }
            if !seen.insert(*id) {
                return Err(fail(format!("priority id {id} repeated")));
            }
        }
        if seen.len() != self.classes.len() - 1 {
            return Err(fail("priority must cover every non-free id".into()));
        }
        Ok(())
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.classes.contains_key(&id)
    }

    pub fn is_dynamic(&self, id: ClassId) -> bool {
        self.dynamic_ids.contains(&id)
    }

    pub fn class_name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(&id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.classes
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(id, _)| *id)
    }

    /// Rank in the collapse precedence: 0 is strongest, free is last.
    pub fn priority_rank(&self, id: ClassId) -> usize {
        self.priority
            .iter()
            .position(|p| *p == id)
            .unwrap_or(usize::MAX)
    }

    /// Built-in vocabularies compiled from `configs/`.
    pub fn builtin(name: &str) -> Option<Arc<LabelTaxonomy>> {
        BUILTINS.iter().find(|t| t.name == name).cloned()
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTINS.iter().map(|t| t.name.as_str()).collect()
    }
}

fn parse_id(tok: Option<&str>, lineno: usize) -> Result<ClassId> {
    let tok = tok.ok_or(Error::Parse {
        line: lineno + 1,
        reason: "missing class id".into(),
    })?;
    tok.parse::<ClassId>().map_err(|_| Error::Parse {
        line: lineno + 1,
        reason: format!("bad class id `{tok}`"),
    })
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

static BUILTINS: LazyLock<Vec<Arc<LabelTaxonomy>>> = LazyLock::new(|| {
    [
        include_str!("../configs/unified.taxonomy"),
        include_str!("../configs/nuscenes.taxonomy"),
        include_str!("../configs/waymo.taxonomy"),
        include_str!("../configs/carla.taxonomy"),
    ]
    .iter()
    .map(|text| Arc::new(LabelTaxonomy::parse(text).expect("builtin taxonomy")))
    .collect()
});

pub fn unified() -> Arc<LabelTaxonomy> {
    LabelTaxonomy::builtin("unified").unwrap()
}

/// Total id remapping from one taxonomy into another. Every source id has an
/// entry and free maps to free; both are checked at construction.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub source: String,
    pub target: String,
    entries: BTreeMap<ClassId, ClassId>,
}

impl LabelMap {
    pub fn parse(text: &str, source: &LabelTaxonomy, target: &LabelTaxonomy) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse {
                line: lineno + 1,
                reason,
            };
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| err("expected `source_id -> target_id`".into()))?;
            let from: ClassId = lhs
                .trim()
                .parse()
                .map_err(|_| err(format!("bad source id `{}`", lhs.trim())))?;
            let to: ClassId = rhs
                .trim()
                .parse()
                .map_err(|_| err(format!("bad target id `{}`", rhs.trim())))?;
            if entries.insert(from, to).is_some() {
                return Err(err(format!("duplicate source id {from}")));
            }
        }
        Self::new(source, target, entries)
    }

    pub fn new(
        source: &LabelTaxonomy,
        target: &LabelTaxonomy,
        entries: BTreeMap<ClassId, ClassId>,
    ) -> Result<Self> {
        for id in source.classes.keys() {
            match entries.get(id) {
                None => {
                    return Err(Error::Parse {
                        line: 0,
                        reason: format!("source id {id} has no mapping"),
                    })
                }
                Some(to) if !target.contains(*to) => {
                    return Err(Error::UnknownLabel {
                        taxonomy: target.name.clone(),
                        id: *to,
                    })
                }
                _ => {}
            }
        }
        for (from, _) in entries.iter().filter(|(f, _)| !source.contains(**f)) {
            return Err(Error::UnknownLabel {
                taxonomy: source.name.clone(),
                id: *from,
            });
        }
        if entries[&source.free_id] != target.free_id {
            return Err(Error::Parse {
                line: 0,
                reason: "free must map to free".into(),
            });
        }
        Ok(LabelMap {
            source: source.name.clone(),
            target: target.name.clone(),
            entries,
        })
    }

    pub fn get(&self, id: ClassId) -> Option<ClassId> {
        self.entries.get(&id).copied()
    }

    /// Built-in map into the unified taxonomy, if one ships for `source`.
    pub fn builtin_to_unified(source: &str) -> Option<&'static LabelMap> {
        BUILTIN_MAPS.iter().find(|m| m.source == source)
    }
}

static BUILTIN_MAPS: LazyLock<Vec<LabelMap>> = LazyLock::new(|| {
    let uni = unified();
    [
        ("nuscenes", include_str!("../configs/nuscenes_to_unified.map")),
        ("waymo", include_str!("../configs/waymo_to_unified.map")),
        ("carla", include_str!("../configs/carla_to_unified.map")),
    ]
    .iter()
    .map(|(name, text)| {
        let src = LabelTaxonomy::builtin(name).expect("builtin taxonomy");
        LabelMap::parse(text, &src, &uni).expect("builtin label map")
    })
    .collect()
});
