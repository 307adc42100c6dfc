//! Decision-space ontology: entities, source chunks, a hierarchy DAG and the
//! provenance relation linking each entity to the chunks that mention it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::warn;

use crate::llm::{GenerationRequest, Generator, LlmError, Stage};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        EntityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(String);

impl ChunkId {
    pub fn new(id: impl Into<String>) -> Self {
        ChunkId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    #[serde(rename = "chunk_id")]
    pub id: ChunkId,
    pub doc_id: String,
    pub ordinal: u32,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Collapse runs of whitespace and trim.
pub fn normalise_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-insensitive identity key for entity names.
pub fn name_key(name: &str) -> String {
    normalise_name(name).to_lowercase()
}

fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name_key(name).chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_').to_owned();
    if trimmed.is_empty() {
        "entity".to_owned()
    } else {
        trimmed
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub entities: Vec<Entity>,
    pub chunks: Vec<Chunk>,
    /// `(parent, child)` pairs.
    pub hierarchy: BTreeSet<(EntityId, EntityId)>,
    /// `(entity, chunk)` pairs.
    pub provenance: BTreeSet<(EntityId, ChunkId)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OntologyError {
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("entity name {0:?} already exists")]
    DuplicateName(String),
    #[error("entity name is empty")]
    EmptyName,
    #[error("edge {parent} -> {child} would create a cycle")]
    Cycle { parent: EntityId, child: EntityId },
}

impl Ontology {
    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.iter().find(|e| &e.id == id)
    }

    pub fn find_by_name(&self, name: &str) -> Option<&Entity> {
        let key = name_key(name);
        self.entities.iter().find(|e| name_key(&e.name) == key)
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.iter().find(|c| &c.id == id)
    }

    pub fn children(&self, id: &EntityId) -> Vec<&EntityId> {
        self.hierarchy.iter().filter(|(p, _)| p == id).map(|(_, c)| c).collect()
    }

    pub fn parents(&self, id: &EntityId) -> Vec<&EntityId> {
        self.hierarchy.iter().filter(|(_, c)| c == id).map(|(p, _)| p).collect()
    }

    /// Parentless entities reachable upward from `id` (itself when parentless).
    pub fn root_ancestors(&self, id: &EntityId) -> BTreeSet<EntityId> {
        let mut roots = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(current) = stack.pop() {
            if !seen.insert(current.clone()) {
                continue;
            }
            let parents = self.parents(&current);
            if parents.is_empty() {
                roots.insert(current);
            } else {
                stack.extend(parents.into_iter().cloned());
            }
        }
        roots
    }

    /// Whether `ancestor` is reachable upward from `id` (or equal to it).
    pub fn reaches_up(&self, id: &EntityId, ancestor: &EntityId) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id.clone()];
        while let Some(current) = stack.pop() {
            if &current == ancestor {
                return true;
            }
            if seen.insert(current.clone()) {
                stack.extend(self.parents(&current).into_iter().cloned());
            }
        }
        false
    }

    fn fresh_id(&self, name: &str) -> EntityId {
        let base = slug(name);
        let taken: BTreeSet<&str> = self.entities.iter().map(|e| e.id.as_str()).collect();
        if !taken.contains(base.as_str()) {
            return EntityId(base);
        }
        (2..).map(|i| format!("{base}_{i}")).find(|c| !taken.contains(c.as_str())).map(EntityId).expect("unbounded")
    }

    /// Add an entity, or return the existing one with the same name key.
    pub fn intern_entity(&mut self, name: &str, description: Option<String>) -> Result<EntityId, OntologyError> {
        let name = normalise_name(name);
        if name.is_empty() {
            return Err(OntologyError::EmptyName);
        }
        if let Some(existing) = self.find_by_name(&name) {
            return Ok(existing.id.clone());
        }
        let id = self.fresh_id(&name);
        self.entities.push(Entity { id: id.clone(), name, description });
        Ok(id)
    }

    pub fn add_entity(&mut self, name: &str, description: Option<String>) -> Result<EntityId, OntologyError> {
        if self.find_by_name(name).is_some() {
            return Err(OntologyError::DuplicateName(normalise_name(name)));
        }
        self.intern_entity(name, description)
    }

    /// Insert a hierarchy edge unless it would close a cycle.
    pub fn add_edge(&mut self, parent: &EntityId, child: &EntityId) -> Result<(), OntologyError> {
        for id in [parent, child] {
            if self.entity(id).is_none() {
                return Err(OntologyError::UnknownEntity(id.clone()));
            }
        }
        if self.reaches_up(parent, child) {
            return Err(OntologyError::Cycle { parent: parent.clone(), child: child.clone() });
        }
        self.hierarchy.insert((parent.clone(), child.clone()));
        Ok(())
    }

    /// Remove an entity with its hierarchy edges and provenance links.
    pub fn remove_entity(&mut self, id: &EntityId) -> Result<Entity, OntologyError> {
        let pos =
            self.entities.iter().position(|e| &e.id == id).ok_or_else(|| OntologyError::UnknownEntity(id.clone()))?;
        self.hierarchy.retain(|(p, c)| p != id && c != id);
        self.provenance.retain(|(e, _)| e != id);
        Ok(self.entities.remove(pos))
    }

    /// Invariant violations (empty when the ontology is well formed).
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut keys = BTreeSet::new();
        let ids: BTreeSet<&EntityId> = self.entities.iter().map(|e| &e.id).collect();
        for e in &self.entities {
            if !keys.insert(name_key(&e.name)) {
                out.push(format!("duplicate entity name {:?}", e.name));
            }
        }
        let chunk_ids: BTreeSet<&ChunkId> = self.chunks.iter().map(|c| &c.id).collect();
        for (p, c) in &self.hierarchy {
            if !ids.contains(p) || !ids.contains(c) {
                out.push(format!("hierarchy edge {p} -> {c} references an unknown entity"));
            }
        }
        for (e, c) in &self.provenance {
            if !ids.contains(e) {
                out.push(format!("provenance references unknown entity {e}"));
            }
            if !chunk_ids.contains(c) {
                out.push(format!("provenance references unknown chunk {c}"));
            }
        }
        for e in &self.entities {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<&EntityId> = self.parents(&e.id);
            while let Some(cur) = stack.pop() {
                if cur == &e.id {
                    out.push(format!("hierarchy cycle through {}", e.id));
                    break;
                }
                if seen.insert(cur) {
                    stack.extend(self.parents(cur));
                }
            }
        }
        out
    }
}

/// One document's chunks in reading order.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub chunks: Vec<Chunk>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus not found: {0}")]
    NotFound(String),
    #[error("failed to read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("chunk {0} has empty text")]
    EmptyText(ChunkId),
    #[error("duplicate chunk id {0}")]
    DuplicateChunk(ChunkId),
    #[error("duplicate ordinal {ordinal} in document {doc_id}")]
    DuplicateOrdinal { doc_id: String, ordinal: u32 },
}

/// Group chunks into documents (first-appearance order) sorted by ordinal,
/// enforcing the chunk invariants.
pub fn documents_from_chunks(chunks: Vec<Chunk>) -> Result<Vec<Document>, CorpusError> {
    let mut docs: Vec<Document> = Vec::new();
    let mut ids = BTreeSet::new();
    let mut positions = BTreeSet::new();
    for chunk in chunks {
        if chunk.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(chunk.id));
        }
        if !ids.insert(chunk.id.clone()) {
            return Err(CorpusError::DuplicateChunk(chunk.id));
        }
        if !positions.insert((chunk.doc_id.clone(), chunk.ordinal)) {
            return Err(CorpusError::DuplicateOrdinal { doc_id: chunk.doc_id, ordinal: chunk.ordinal });
        }
        match docs.iter_mut().find(|d| d.id == chunk.doc_id) {
            Some(doc) => doc.chunks.push(chunk),
            None => docs.push(Document { id: chunk.doc_id.clone(), chunks: vec![chunk] }),
        }
    }
    for doc in &mut docs {
        doc.chunks.sort_by_key(|c| c.ordinal);
    }
    Ok(docs)
}

/// Read a JSON-Lines corpus: one `{"doc_id","chunk_id","ordinal","text"}` per line.
pub fn load_corpus(path: &Path) -> Result<Vec<Document>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::NotFound(path.display().to_string()));
    }
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut chunks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
        chunks.push(chunk);
    }
    documents_from_chunks(chunks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedEntity {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinedEdge {
    pub parent: String,
    pub child: String,
}

/// What the miner reports for one chunk: entities mentioned in it (new or
/// already known) and hierarchy edges between named entities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinedChunk {
    #[serde(default)]
    pub entities: Vec<MinedEntity>,
    #[serde(default)]
    pub hierarchy: Vec<MinedEdge>,
}

#[derive(Debug, Error)]
#[error("miner failed: {0}")]
pub struct MinerError(pub String);

impl From<LlmError> for MinerError {
    fn from(e: LlmError) -> Self {
        MinerError(e.to_string())
    }
}

/// Extracts entities and hierarchy edges from one chunk given the ontology
/// built so far.
pub trait OntologyMiner {
    fn mine(
        &mut self,
        entities: &[Entity],
        hierarchy: &BTreeSet<(EntityId, EntityId)>,
        chunk: &Chunk,
    ) -> Result<MinedChunk, MinerError>;
}

impl<F> OntologyMiner for F
where
    F: FnMut(&[Entity], &BTreeSet<(EntityId, EntityId)>, &Chunk) -> Result<MinedChunk, MinerError>,
{
    fn mine(
        &mut self,
        entities: &[Entity],
        hierarchy: &BTreeSet<(EntityId, EntityId)>,
        chunk: &Chunk,
    ) -> Result<MinedChunk, MinerError> {
        self(entities, hierarchy, chunk)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RejectedEdge {
    pub chunk: ChunkId,
    pub parent: String,
    pub child: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Construction {
    pub ontology: Ontology,
    pub rejected_edges: Vec<RejectedEdge>,
}

#[derive(Debug, Error)]
#[error("ontology construction failed at chunk {chunk}: {source}")]
pub struct ConstructionError {
    pub chunk: ChunkId,
    #[source]
    pub source: MinerError,
    /// Everything built before the failing chunk.
    pub partial: Box<Ontology>,
}

pub fn construct_ontology(
    documents: &[Document],
    miner: &mut dyn OntologyMiner,
) -> Result<Construction, ConstructionError> {
    construct_ontology_filtered(documents, miner, |_| true)
}

/// Build the ontology chunk by chunk, keeping only chunks that pass `keep`.
pub fn construct_ontology_filtered(
    documents: &[Document],
    miner: &mut dyn OntologyMiner,
    mut keep: impl FnMut(&Chunk) -> bool,
) -> Result<Construction, ConstructionError> {
    let mut ontology = Ontology::default();
    let mut rejected_edges = Vec::new();
    for doc in documents {
        for chunk in doc.chunks.iter().filter(|c| keep(c)) {
            let mined = miner.mine(&ontology.entities, &ontology.hierarchy, chunk).map_err(|source| {
                ConstructionError { chunk: chunk.id.clone(), source, partial: Box::new(ontology.clone()) }
            })?;
            let mut mentioned = Vec::new();
            for e in &mined.entities {
                match ontology.intern_entity(&e.name, e.description.clone()) {
                    Ok(id) => mentioned.push(id),
                    Err(err) => warn!(chunk = %chunk.id, "skipping mined entity: {err}"),
                }
            }
            ontology.chunks.push(chunk.clone());
            for edge in &mined.hierarchy {
                let resolve = |name: &str| ontology.find_by_name(name).map(|e| e.id.clone());
                let outcome = match (resolve(&edge.parent), resolve(&edge.child)) {
                    (Some(p), Some(c)) => ontology.add_edge(&p, &c).map_err(|e| e.to_string()),
                    _ => Err("edge references an entity that was never mined".to_owned()),
                };
                if let Err(reason) = outcome {
                    warn!(chunk = %chunk.id, parent = %edge.parent, child = %edge.child, "rejected hierarchy edge: {reason}");
                    rejected_edges.push(RejectedEdge {
                        chunk: chunk.id.clone(),
                        parent: edge.parent.clone(),
                        child: edge.child.clone(),
                        reason,
                    });
                }
            }
            for id in mentioned {
                ontology.provenance.insert((id, chunk.id.clone()));
            }
            debug_assert!(ontology.problems().is_empty());
        }
    }
    Ok(Construction { ontology, rejected_edges })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCriteria {
    pub min_documents: usize,
    pub leaf_only: bool,
    pub single_root_ancestor: bool,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        SelectionCriteria { min_documents: 3, leaf_only: true, single_root_ancestor: true }
    }
}

/// Number of distinct documents whose chunks mention `id`.
pub fn document_count(ontology: &Ontology, id: &EntityId) -> usize {
    let doc_of: BTreeMap<&ChunkId, &str> = ontology.chunks.iter().map(|c| (&c.id, c.doc_id.as_str())).collect();
    ontology
        .provenance
        .iter()
        .filter(|(e, _)| e == id)
        .filter_map(|(_, c)| doc_of.get(c).copied())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Decision options to build frameworks for, ordered by name.
pub fn select_options(ontology: &Ontology, criteria: SelectionCriteria) -> Vec<Entity> {
    let min_documents = criteria.min_documents.max(1);
    let mut out: Vec<Entity> = ontology
        .entities
        .iter()
        .filter(|e| !criteria.leaf_only || ontology.children(&e.id).is_empty())
        .filter(|e| document_count(ontology, &e.id) >= min_documents)
        .filter(|e| !criteria.single_root_ancestor || ontology.root_ancestors(&e.id).len() == 1)
        .cloned()
        .collect();
    out.sort_by(|a, b| name_key(&a.name).cmp(&name_key(&b.name)).then_with(|| a.id.cmp(&b.id)));
    out
}

pub fn chunks_for<'a>(ontology: &'a Ontology, entity: &EntityId) -> Result<Vec<&'a Chunk>, OntologyError> {
    if ontology.entity(entity).is_none() {
        return Err(OntologyError::UnknownEntity(entity.clone()));
    }
    let linked: BTreeSet<&ChunkId> = ontology.provenance.iter().filter(|(e, _)| e == entity).map(|(_, c)| c).collect();
    Ok(ontology.chunks.iter().filter(|c| linked.contains(&c.id)).collect())
}

/// Ontology file layout: the ontology plus the ids of the selected options.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OntologyFile {
    #[serde(flatten)]
    pub ontology: Ontology,
    #[serde(default)]
    pub options: Vec<EntityId>,
}

const MINER_SYSTEM: &str = "You build an ontology of decision options from policy documents. \
Given the current ontology and one text chunk, list every decision option mentioned in the chunk \
and any parent/child relations between options (a child is a specific variant of its parent). \
Reuse the exact names of existing options when the chunk mentions them. \
Reply with JSON only.";

/// Miner backed by a language model with a structured JSON reply.
pub struct LlmOntologyMiner<'a> {
    generator: &'a Generator,
}

impl<'a> LlmOntologyMiner<'a> {
    pub fn new(generator: &'a Generator) -> Self {
        LlmOntologyMiner { generator }
    }

    pub fn response_schema() -> serde_json::Value {
        json!({
            "type": "object",
            "properties": {
                "entities": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {"name": {"type": "string", "minLength": 1}, "description": {"type": "string"}},
                        "required": ["name"]
                    }
                },
                "hierarchy": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {"parent": {"type": "string"}, "child": {"type": "string"}},
                        "required": ["parent", "child"]
                    }
                }
            },
            "required": ["entities", "hierarchy"]
        })
    }
}

impl OntologyMiner for LlmOntologyMiner<'_> {
    fn mine(
        &mut self,
        entities: &[Entity],
        hierarchy: &BTreeSet<(EntityId, EntityId)>,
        chunk: &Chunk,
    ) -> Result<MinedChunk, MinerError> {
        let name_of: BTreeMap<&EntityId, &str> = entities.iter().map(|e| (&e.id, e.name.as_str())).collect();
        let names: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
        let edges: Vec<String> = hierarchy.iter().map(|(p, c)| format!("{} > {}", name_of[p], name_of[c])).collect();
        let user = format!(
            "Known options:\n{}\n\nKnown hierarchy:\n{}\n\nChunk ({} #{}):\n{}\n\n\
             Reply as {{\"entities\": [{{\"name\", \"description\"}}], \"hierarchy\": [{{\"parent\", \"child\"}}]}}.",
            serde_json::to_string(&names).unwrap_or_default(),
            if edges.is_empty() { "(none)".to_owned() } else { edges.join("\n") },
            chunk.doc_id,
            chunk.ordinal,
            chunk.text
        );
        let request = GenerationRequest::new(MINER_SYSTEM, user).with_schema(Self::response_schema());
        let mined = self.generator.generate_with(Stage::Ontology, &request, |_, json| {
            let json = json.ok_or("reply is not JSON")?;
            serde_json::from_value::<MinedChunk>(json.clone()).map_err(|e| e.to_string())
        })?;
        Ok(mined)
    }
}
