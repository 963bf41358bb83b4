//! Knowledge graph over the clause forest: entity nodes linked to the clauses
//! that mention them, with retrieval keys on nodes and edges.
//!
//! Ids are stable: `ent:<Category>:<name>` for entities and
//! `edge:` + the first 16 hex digits of `sha256(sorted endpoints, description)`
//! for edges. Default edge weight is `min(1, 0.5 + 0.1 k)` where `k` counts
//! mentions of the entity in the clause.

pub mod external;
pub mod lexicon;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Forest, ForestNode};
use crate::seed::sha256_hex;
use crate::text::content_phrases;

pub use lexicon::{Lexicon, LexiconExtractor};

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityCategory {
    TrafficSignDevice,
    RoadUser,
    DrivingManeuver,
    RoadCondition,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 4] =
        [Self::TrafficSignDevice, Self::RoadUser, Self::DrivingManeuver, Self::RoadCondition];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrafficSignDevice => "TrafficSignDevice",
            Self::RoadUser => "RoadUser",
            Self::DrivingManeuver => "DrivingManeuver",
            Self::RoadCondition => "RoadCondition",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedEntity {
    /// Normalized name (lowercase, singular).
    pub name: String,
    pub category: EntityCategory,
    /// Byte span of the first mention in the source text.
    pub span: (usize, usize),
    pub occurrences: usize,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("malformed extractor output: {0}")]
    MalformedExtractorOutput(String),
}

pub trait EntityExtractor {
    /// Entities found in `text`, one per (name, category), in order of first
    /// mention.
    fn extract(&self, text: &str) -> Result<Vec<ExtractedEntity>, ExtractError>;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot link an empty forest")]
    EmptyForest,
    #[error("graph schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt graph payload: {0}")]
    CorruptPayload(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: String,
    pub name: String,
    pub category: EntityCategory,
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub edge_id: String,
    pub endpoints: (String, String),
    pub weight: f64,
    pub description: String,
    pub keys: Vec<String>,
}

impl GraphEdge {
    pub fn other(&self, id: &str) -> Option<&str> {
        if self.endpoints.0 == id {
            Some(&self.endpoints.1)
        } else if self.endpoints.1 == id {
            Some(&self.endpoints.0)
        } else {
            None
        }
    }
}

pub fn entity_id(category: EntityCategory, name: &str) -> String {
    format!("ent:{}:{}", category.as_str(), name)
}

pub fn edge_id(a: &str, b: &str, description: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let payload = format!("{lo}\n{hi}\n{description}");
    format!("edge:{}", &sha256_hex(payload.as_bytes())[..16])
}

pub fn default_edge_weight(occurrences: usize) -> f64 {
    (0.5 + 0.1 * occurrences as f64).min(1.0)
}

/// Anything that can receive retrieval keys.
#[derive(Debug, Clone, Copy)]
pub enum Keyed<'a> {
    Entity(&'a EntityNode),
    Edge(&'a GraphEdge),
}

pub trait KeyProfiler {
    fn profile(&self, item: Keyed<'_>) -> Vec<String>;
}

/// Literal keys: the entity name and `category:name` for nodes; the
/// stopword-separated phrases of the description for edges.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultProfiler;

impl KeyProfiler for DefaultProfiler {
    fn profile(&self, item: Keyed<'_>) -> Vec<String> {
        match item {
            Keyed::Entity(e) => vec![e.name.clone(), format!("{}:{}", e.category.as_str().to_lowercase(), e.name)],
            Keyed::Edge(e) => content_phrases(&e.description),
        }
    }
}

/// Existing keys followed by new profiler keys not already present.
pub fn generate_keys(item: Keyed<'_>, profiler: &dyn KeyProfiler) -> Vec<String> {
    let mut keys: Vec<String> = match item {
        Keyed::Entity(e) => e.keys.clone(),
        Keyed::Edge(e) => e.keys.clone(),
    };
    for k in profiler.profile(item) {
        if !k.is_empty() && !keys.contains(&k) {
            keys.push(k);
        }
    }
    if keys.is_empty() {
        // descriptions made only of stopwords still need one key
        keys.push(match item {
            Keyed::Entity(e) => e.name.clone(),
            Keyed::Edge(e) => e.description.trim().to_lowercase(),
        });
    }
    keys
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub native_nodes: BTreeMap<String, ForestNode>,
    pub roots: Vec<String>,
    pub entities: BTreeMap<String, EntityNode>,
    pub edges: BTreeMap<String, GraphEdge>,
    pub key_index: BTreeMap<String, Vec<String>>,
    pub adjacency: BTreeMap<String, Vec<(String, String)>>,
}

/// Clauses whose extraction failed during linking.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkReport {
    pub clauses_visited: usize,
    pub failures: Vec<(String, ExtractError)>,
}

impl LinkReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

impl KnowledgeGraph {
    pub fn forest(&self) -> Forest {
        Forest { roots: self.roots.clone(), nodes: self.native_nodes.clone() }
    }

    pub fn clause(&self, id: &str) -> Option<&ForestNode> {
        self.native_nodes.get(id).filter(|n| n.is_clause())
    }

    pub fn clause_ids(&self) -> impl Iterator<Item = &str> {
        self.native_nodes.values().filter(|n| n.is_clause()).map(|n| n.node_id.as_str())
    }

    pub fn neighbors(&self, id: &str) -> &[(String, String)] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, id: &str) -> usize {
        self.neighbors(id).len()
    }

    pub fn entity_by_name<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a EntityNode> + 'a {
        self.entities.values().filter(move |e| e.name == name)
    }

    /// Titles of the branch ancestors of a node, nearest first.
    pub fn ancestor_titles(&self, node_id: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = self.native_nodes.get(node_id).and_then(|n| n.parent.as_deref());
        while let Some(id) = cur {
            let Some(node) = self.native_nodes.get(id) else { break };
            if let Some(t) = node.title.as_deref() {
                out.push(t);
            }
            cur = node.parent.as_deref();
        }
        out
    }

    /// Largest weight among edges touching `id`; 0 for isolated nodes.
    pub fn max_edge_weight(&self, id: &str) -> f64 {
        self.neighbors(id).iter().filter_map(|(_, e)| self.edges.get(e)).map(|e| e.weight).fold(0.0, f64::max)
    }

    fn add_edge(&mut self, edge: GraphEdge) {
        let (a, b) = edge.endpoints.clone();
        self.adjacency.entry(a.clone()).or_default().push((b.clone(), edge.edge_id.clone()));
        self.adjacency.entry(b).or_default().push((a, edge.edge_id.clone()));
        self.edges.insert(edge.edge_id.clone(), edge);
    }

    /// Regenerate keys on every entity and edge and rebuild the key index.
    pub fn apply_profiler(&mut self, profiler: &dyn KeyProfiler) {
        let ids: Vec<String> = self.entities.keys().cloned().collect();
        for id in ids {
            let keys = generate_keys(Keyed::Entity(&self.entities[&id]), profiler);
            self.entities.get_mut(&id).unwrap().keys = keys;
        }
        let ids: Vec<String> = self.edges.keys().cloned().collect();
        for id in ids {
            let keys = generate_keys(Keyed::Edge(&self.edges[&id]), profiler);
            self.edges.get_mut(&id).unwrap().keys = keys;
        }
        self.rebuild_key_index();
    }

    pub fn rebuild_key_index(&mut self) {
        let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for e in self.entities.values() {
            for k in &e.keys {
                index.entry(k.clone()).or_default().insert(e.entity_id.clone());
            }
        }
        for e in self.edges.values() {
            for k in &e.keys {
                index.entry(k.clone()).or_default().insert(e.edge_id.clone());
            }
        }
        self.key_index = index.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
    }

    /// Checks every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Invariant(m));
        let mut seen = BTreeSet::new();
        for (id, e) in &self.entities {
            if *id != e.entity_id || *id != entity_id(e.category, &e.name) {
                return bad(format!("entity id mismatch {id}"));
            }
            if !seen.insert((e.name.clone(), e.category)) {
                return bad(format!("duplicate entity {}", e.name));
            }
            if e.keys.is_empty() {
                return bad(format!("entity {id} has no keys"));
            }
        }
        for (id, e) in &self.edges {
            let (a, b) = &e.endpoints;
            if a == b {
                return bad(format!("edge {id} is a self loop"));
            }
            if !(e.weight > 0.0 && e.weight <= 1.0) {
                return bad(format!("edge {id} weight {}", e.weight));
            }
            if !self.entities.contains_key(a) && !self.entities.contains_key(b) {
                return bad(format!("edge {id} has no entity endpoint"));
            }
            for end in [a, b] {
                if !self.entities.contains_key(end) && !self.native_nodes.contains_key(end) {
                    return bad(format!("edge {id} endpoint {end} missing"));
                }
            }
        }
        for (k, ids) in &self.key_index {
            for id in ids {
                let has = self.entities.get(id).map(|e| e.keys.contains(k)).or_else(|| self.edges.get(id).map(|e| e.keys.contains(k)));
                if has != Some(true) {
                    return bad(format!("key index entry {k} -> {id} is stale"));
                }
            }
        }
        Ok(())
    }

    /// Serialized form: a versioned JSON document with sorted maps.
    pub fn save(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            schema_version: u32,
            graph: &'a KnowledgeGraph,
        }
        serde_json::to_vec_pretty(&Envelope { schema_version: GRAPH_SCHEMA_VERSION, graph: self }).expect("graph serializes")
    }

    pub fn load(bytes: &[u8]) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        struct Head {
            schema_version: u32,
        }
        #[derive(Deserialize)]
        struct Envelope {
            graph: KnowledgeGraph,
        }
        let head: Head = serde_json::from_slice(bytes).map_err(|e| GraphError::CorruptPayload(e.to_string()))?;
        if head.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersionMismatch { found: head.schema_version, expected: GRAPH_SCHEMA_VERSION });
        }
        let env: Envelope = serde_json::from_slice(bytes).map_err(|e| GraphError::CorruptPayload(e.to_string()))?;
        env.graph.validate().map_err(|e| GraphError::CorruptPayload(e.to_string()))?;
        Ok(env.graph)
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "graph: {} native nodes, {} entities, {} edges, {} keys",
            self.native_nodes.len(),
            self.entities.len(),
            self.edges.len(),
            self.key_index.len()
        )
    }
}

fn edge_description(entity: &str, forest: &Forest, clause_id: &str) -> String {
    match forest.ancestor_titles(clause_id).first() {
        Some(section) => format!("{entity} in {section}"),
        None => entity.to_string(),
    }
}

/// Visit every clause once and connect each extracted entity to it. Clauses
/// whose extraction fails are reported and left unlinked.
pub fn link_entities(
    forest: &Forest,
    extractor: &dyn EntityExtractor,
    profiler: &dyn KeyProfiler,
) -> Result<(KnowledgeGraph, LinkReport), GraphError> {
    if forest.nodes.is_empty() {
        return Err(GraphError::EmptyForest);
    }
    let mut g = KnowledgeGraph { native_nodes: forest.nodes.clone(), roots: forest.roots.clone(), ..Default::default() };
    let mut report = LinkReport::default();
    for clause in forest.nodes.values().filter(|n| n.is_clause()) {
        report.clauses_visited += 1;
        let text = clause.text();
        if text.trim().is_empty() {
            continue;
        }
        let found = match extractor.extract(text) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("extraction failed on {}: {e}", clause.node_id);
                report.failures.push((clause.node_id.clone(), e));
                continue;
            }
        };
        for ent in found {
            let id = entity_id(ent.category, &ent.name);
            g.entities.entry(id.clone()).or_insert_with(|| EntityNode {
                entity_id: id.clone(),
                name: ent.name.clone(),
                category: ent.category,
                keys: Vec::new(),
            });
            let description = edge_description(&ent.name, forest, &clause.node_id);
            let eid = edge_id(&id, &clause.node_id, &description);
            if g.edges.contains_key(&eid) {
                continue;
            }
            g.add_edge(GraphEdge {
                edge_id: eid,
                endpoints: (id, clause.node_id.clone()),
                weight: default_edge_weight(ent.occurrences),
                description,
                keys: Vec::new(),
            });
        }
    }
    g.apply_profiler(profiler);
    g.validate()?;
    Ok((g, report))
}

/// Lexicon linking with the default profiler.
pub fn build_graph(forest: &Forest, lexicon: &Lexicon) -> Result<KnowledgeGraph, GraphError> {
    let (g, _) = link_entities(forest, &LexiconExtractor::new(lexicon.clone()), &DefaultProfiler)?;
    Ok(g)
}
