//! Triples, vocabularies, and the relation-wise client partition.

mod partition;
mod split;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use partition::{assign_relations, partition_by_relation, ClientData, Partition};
pub use split::{holdout, split_forget, ForgetSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bidirectional name ↔ id map with ids assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for name in names {
            let name = name.into();
            if v.ids.contains_key(&name) {
                return Err(Error::invalid(format!(
                    "duplicate vocabulary entry {name:?}"
                )));
            }
            v.intern(&name);
        }
        Ok(v)
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.names.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_names(text.lines().filter(|l| !l.is_empty()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    pub triples: Vec<Triple>,
    pub entities: Vocab,
    pub relations: Vocab,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Same vocabularies, different triples.
    pub fn with_triples(&self, triples: Vec<Triple>) -> Self {
        Self {
            triples,
            entities: self.entities.clone(),
            relations: self.relations.clone(),
        }
    }

    /// Parses tab-separated triples and appends them, interning new names.
    /// Triples already present are dropped. Returns the number of lines kept.
    pub fn extend_from_str(&mut self, text: &str, path: &Path) -> Result<usize> {
        let mut seen: HashSet<Triple> = self.triples.iter().copied().collect();
        let mut kept = 0;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let (h, r, t) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            let triple = Triple::new(
                self.entities.intern(h),
                self.relations.intern(r),
                self.entities.intern(t),
            );
            if seen.insert(triple) {
                self.triples.push(triple);
                kept += 1;
            }
        }
        Ok(kept)
    }

    /// Parses lines against fixed vocabularies; unknown names are an error.
    pub fn resolve_str(&self, text: &str, path: &Path) -> Result<Vec<Triple>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let entity = |name: &str| {
                self.entities
                    .id(name)
                    .ok_or_else(|| err(format!("unknown entity {name:?}")))
            };
            let relation = self
                .relations
                .id(fields[1])
                .ok_or_else(|| err(format!("unknown relation {:?}", fields[1])))?;
            let triple = Triple::new(entity(fields[0])?, relation, entity(fields[2])?);
            if seen.insert(triple) {
                out.push(triple);
            }
        }
        Ok(out)
    }

    pub fn format_triple(&self, t: &Triple) -> String {
        format!(
            "{}\t{}\t{}",
            self.entities.name(t.head).unwrap_or("?"),
            self.relations.name(t.relation).unwrap_or("?"),
            self.entities.name(t.tail).unwrap_or("?"),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (ne, nr) = (self.entity_count(), self.relation_count());
        for t in &self.triples {
            if t.head >= ne || t.tail >= ne {
                return Err(Error::IndexOutOfRange {
                    index: t.head.max(t.tail),
                    len: ne,
                });
            }
            if t.relation >= nr {
                return Err(Error::IndexOutOfRange {
                    index: t.relation,
                    len: nr,
                });
            }
        }
        Ok(())
    }
}

/// Loads a TAB-separated triple file. Ids follow first appearance; duplicate
/// lines are dropped.
pub fn load_triples(path: &Path) -> Result<KnowledgeGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kg = KnowledgeGraph::default();
    kg.extend_from_str(&text, path)?;
    if kg.triples.is_empty() {
        return Err(Error::EmptyGraph(path.to_path_buf()));
    }
    Ok(kg)
}

pub fn write_triples(path: &Path, kg: &KnowledgeGraph, triples: &[Triple]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        writeln!(w, "{}", kg.format_triple(t)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
