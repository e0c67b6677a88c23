//! In-memory knowledge graph and its two read interfaces.
//!
//! Only head-to-tail traversal is indexed. Inverse edges have to be present
//! in the input if a dataset needs them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("empty {0} identifier")]
    EmptyIdentifier(&'static str),
    #[error("line {line}: {message}")]
    Load { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

macro_rules! identifier {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Trims surrounding whitespace; rejects identifiers that end up empty.
            pub fn new(value: impl AsRef<str>) -> Result<Self, KgError> {
                let trimmed = value.as_ref().trim();
                if trimmed.is_empty() {
                    return Err(KgError::EmptyIdentifier($what));
                }
                Ok(Self(trimmed.to_string()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = KgError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }
    };
}

identifier!(EntityId, "entity");
identifier!(RelationId, "relation");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    /// Convenience constructor from raw text.
    pub fn parse(head: &str, relation: &str, tail: &str) -> Result<Self, KgError> {
        Ok(Self {
            head: EntityId::new(head)?,
            relation: RelationId::new(relation)?,
            tail: EntityId::new(tail)?,
        })
    }
}

/// Triple set indexed by head entity, then by relation.
///
/// `adjacency[e]` is the head index (its keys are the neighbor relations of
/// `e`), and `adjacency[e][r]` is the pair index bucket: the sorted,
/// deduplicated tails of `(e, r)`. Buckets are never empty.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    adjacency: HashMap<EntityId, BTreeMap<RelationId, Vec<EntityId>>>,
    entities: BTreeSet<EntityId>,
    relations: BTreeSet<RelationId>,
    triple_count: usize,
}

impl KnowledgeGraph {
    pub fn from_triples<I: IntoIterator<Item = Triple>>(triples: I) -> Self {
        let mut kg = KnowledgeGraph::default();
        for t in triples {
            kg.entities.insert(t.head.clone());
            kg.entities.insert(t.tail.clone());
            kg.relations.insert(t.relation.clone());
            kg.adjacency
                .entry(t.head)
                .or_default()
                .entry(t.relation)
                .or_default()
                .push(t.tail);
        }
        let mut count = 0;
        for buckets in kg.adjacency.values_mut() {
            for tails in buckets.values_mut() {
                tails.sort_unstable();
                tails.dedup();
                count += tails.len();
            }
        }
        kg.triple_count = count;
        kg
    }

    pub fn len(&self) -> usize {
        self.triple_count
    }

    pub fn is_empty(&self) -> bool {
        self.triple_count == 0
    }

    pub fn entities(&self) -> &BTreeSet<EntityId> {
        &self.entities
    }

    pub fn relations(&self) -> &BTreeSet<RelationId> {
        &self.relations
    }

    pub fn contains_entity(&self, e: &EntityId) -> bool {
        self.entities.contains(e)
    }

    /// All relations `r` with at least one triple `<e, r, _>`, lexicographically
    /// ordered. An unknown entity yields an empty list.
    pub fn extract_neighbor_relations(&self, e: &EntityId) -> Vec<RelationId> {
        self.adjacency
            .get(e)
            .map(|buckets| buckets.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Triples with head `e` and a relation in `rels`, ordered by relation then
    /// tail. Only the requested buckets are touched.
    pub fn extract_triples(&self, e: &EntityId, rels: &BTreeSet<RelationId>) -> Vec<Triple> {
        let Some(buckets) = self.adjacency.get(e) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for r in rels {
            if let Some(tails) = buckets.get(r) {
                out.extend(
                    tails
                        .iter()
                        .map(|t| Triple::new(e.clone(), r.clone(), t.clone())),
                );
            }
        }
        out
    }

    /// Every triple, ordered by head, relation, tail.
    pub fn triples(&self) -> Vec<Triple> {
        let mut heads: Vec<&EntityId> = self.adjacency.keys().collect();
        heads.sort_unstable();
        let mut out = Vec::with_capacity(self.triple_count);
        for h in heads {
            for (r, tails) in &self.adjacency[h] {
                out.extend(
                    tails
                        .iter()
                        .map(|t| Triple::new(h.clone(), r.clone(), t.clone())),
                );
            }
        }
        out
    }

    /// Writes the triple file format read by [`load_kg`].
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in self.triples() {
            writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        Ok(())
    }
}

/// Reads a tab-separated triple file: one `head\trelation\ttail` per line,
/// `#` comment lines and blank lines ignored. Duplicates collapse.
pub fn load_kg<R: BufRead>(source: R) -> Result<KnowledgeGraph, KgError> {
    let mut triples = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| KgError::Io(e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Load {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let triple = Triple::parse(fields[0], fields[1], fields[2]).map_err(|e| KgError::Load {
            line: line_no,
            message: e.to_string(),
        })?;
        triples.push(triple);
    }
    Ok(KnowledgeGraph::from_triples(triples))
}
