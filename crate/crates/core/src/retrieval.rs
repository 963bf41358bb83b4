//! Query text → ranked verbatim clauses plus a supplementary perception list.
//!
//! Pipeline: two-layer keywords, exact key lookup in the graph, per-seed
//! top-K neighbor expansion, reduction to native clauses, symbolic ranking,
//! then token embeddings for the final items only.
//!
//! Relevance of a clause is
//! `entity_weight * entity hits + context_weight * context hits + max edge weight`
//! where an entity keyword hits if it occurs in the clause text or names a
//! linked entity, and a context keyword hits if any ancestor title contains it.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kgraph::external::{ExternalExtractor, TextEndpoint};
use crate::kgraph::{EntityCategory, ExtractError, KnowledgeGraph, Lexicon};
use crate::text::{contains_phrase, normalize_term, normalized_tokens, tokenize};
use crate::verbalizer::{grid_label_phrase, scene_query, SceneState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub n_k: usize,
    /// Neighbors added per seed during expansion.
    pub top_k: usize,
    pub entity_weight: f64,
    pub context_weight: f64,
    pub supplement_cap: usize,
    pub embed_dim: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { n_k: 16, top_k: 8, entity_weight: 2.0, context_weight: 1.0, supplement_cap: 8, embed_dim: 64 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub context_keywords: Vec<String>,
    pub entity_keywords: Vec<String>,
}

impl KeywordSet {
    fn push_unique(list: &mut Vec<String>, k: String) {
        if !k.is_empty() && !list.contains(&k) {
            list.push(k);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.context_keywords.is_empty() && self.entity_keywords.is_empty()
    }
}

/// Theme for a matched entity.
pub fn theme_for(name: &str, category: EntityCategory) -> &'static str {
    match (category, name) {
        (EntityCategory::RoadUser, _) => "driving security",
        (EntityCategory::RoadCondition, "tunnel" | "bridge" | "expressway") => "special road sections",
        (EntityCategory::RoadCondition, _) => "scene analysis",
        (EntityCategory::TrafficSignDevice, _) => "signals and markings",
        (EntityCategory::DrivingManeuver, _) => "driving behavior",
    }
}

pub trait KeywordExtractor {
    fn keywords(&self, query: &str) -> Result<KeywordSet, ExtractError>;
}

/// Lexicon matches as the entity layer, the theme map as the context layer.
/// Lines starting with `Concepts:` also contribute "scene analysis" when they
/// mention weather, time or road surface.
#[derive(Debug, Clone)]
pub struct LexiconKeywords<'a> {
    pub lexicon: &'a Lexicon,
}

impl KeywordExtractor for LexiconKeywords<'_> {
    fn keywords(&self, query: &str) -> Result<KeywordSet, ExtractError> {
        let mut kw = KeywordSet::default();
        for (idx, _) in self.lexicon.scan(query) {
            let e = &self.lexicon.entries[idx];
            let name = normalize_term(&e.name);
            KeywordSet::push_unique(&mut kw.context_keywords, theme_for(&name, e.category).to_string());
            KeywordSet::push_unique(&mut kw.entity_keywords, name);
        }
        if let Some(line) = query.lines().find(|l| l.starts_with("Concepts:")) {
            if ["weather", "time", "road surface"].iter().any(|k| line.contains(k)) {
                KeywordSet::push_unique(&mut kw.context_keywords, "scene analysis".into());
            }
        }
        Ok(kw)
    }
}

impl<E: TextEndpoint> KeywordExtractor for ExternalExtractor<E> {
    fn keywords(&self, query: &str) -> Result<KeywordSet, ExtractError> {
        let parsed = self.query(query)?;
        let mut kw = KeywordSet::default();
        for (name, _, _) in parsed.entities {
            KeywordSet::push_unique(&mut kw.entity_keywords, name);
        }
        for k in parsed.content_keywords {
            KeywordSet::push_unique(&mut kw.context_keywords, k);
        }
        Ok(kw)
    }
}

/// Keywords from `primary`, falling back to the lexicon layers if it fails.
pub fn extract_keywords(query: &str, primary: &dyn KeywordExtractor, lexicon: &Lexicon) -> KeywordSet {
    match primary.keywords(query) {
        Ok(kw) => kw,
        Err(e) => {
            log::warn!("keyword extraction failed ({e}); using lexicon layers");
            LexiconKeywords { lexicon }.keywords(query).unwrap_or_default()
        }
    }
}

pub fn seed_lookup(g: &KnowledgeGraph, kw: &KeywordSet) -> BTreeSet<String> {
    kw.entity_keywords
        .iter()
        .chain(&kw.context_keywords)
        .filter_map(|k| g.key_index.get(&normalize_term(k)))
        .flatten()
        .cloned()
        .collect()
}

/// Neighbors of a node or edge with the connecting weight.
fn weighted_neighbors<'a>(g: &'a KnowledgeGraph, id: &'a str) -> Vec<(&'a str, f64)> {
    if let Some(e) = g.edges.get(id) {
        return vec![(e.endpoints.0.as_str(), e.weight), (e.endpoints.1.as_str(), e.weight)];
    }
    g.neighbors(id).iter().map(|(n, e)| (n.as_str(), g.edges[e].weight)).collect()
}

pub fn expand_topk(g: &KnowledgeGraph, seeds: &BTreeSet<String>, k: usize) -> BTreeSet<String> {
    let mut out = seeds.clone();
    for s in seeds {
        let mut nb = weighted_neighbors(g, s);
        nb.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        out.extend(nb.into_iter().take(k).map(|(n, _)| n.to_string()));
    }
    out
}

/// Reduce a mixed id set to clause ids: clauses stay, entities and edges are
/// replaced by the clauses they touch, branches are dropped.
pub fn filter_native(g: &KnowledgeGraph, ids: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for id in ids {
        if g.clause(id).is_some() {
            out.insert(id.clone());
        } else if g.entities.contains_key(id) || g.edges.contains_key(id) {
            out.extend(weighted_neighbors(g, id).into_iter().filter(|(n, _)| g.clause(n).is_some()).map(|(n, _)| n.to_string()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub clause_id: String,
    pub verbatim_text: String,
    pub relevance: f64,
    pub rank: usize,
    /// Token embeddings, one row per token. Not serialized.
    #[serde(skip, default = "empty_embedding")]
    pub embedding: Array2<f64>,
}

fn empty_embedding() -> Array2<f64> {
    Array2::zeros((0, 0))
}

pub fn relevance(g: &KnowledgeGraph, clause_id: &str, kw: &KeywordSet, cfg: &RetrievalConfig) -> f64 {
    let Some(node) = g.clause(clause_id) else { return 0.0 };
    let toks = normalized_tokens(node.text());
    let linked: BTreeSet<&str> =
        g.neighbors(clause_id).iter().filter_map(|(n, _)| g.entities.get(n)).map(|e| e.name.as_str()).collect();
    let entity_hits = kw
        .entity_keywords
        .iter()
        .filter(|k| linked.contains(normalize_term(k).as_str()) || contains_phrase(&toks, &normalized_tokens(k)))
        .count();
    let titles: Vec<Vec<String>> = g.ancestor_titles(clause_id).into_iter().map(normalized_tokens).collect();
    let context_hits = kw
        .context_keywords
        .iter()
        .filter(|k| {
            let p = normalized_tokens(k);
            titles.iter().any(|t| contains_phrase(t, &p))
        })
        .count();
    cfg.entity_weight * entity_hits as f64 + cfg.context_weight * context_hits as f64 + g.max_edge_weight(clause_id)
}

/// Ranked items without embeddings.
pub fn rank_items(g: &KnowledgeGraph, clause_ids: &BTreeSet<String>, kw: &KeywordSet, cfg: &RetrievalConfig) -> Vec<RetrievedItem> {
    let mut scored: Vec<(f64, &String)> = clause_ids.iter().map(|c| (relevance(g, c, kw, cfg), c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(cfg.n_k)
        .enumerate()
        .map(|(i, (r, c))| RetrievedItem {
            clause_id: c.clone(),
            verbatim_text: g.native_nodes[c].text().to_string(),
            relevance: r,
            rank: i + 1,
            embedding: empty_embedding(),
        })
        .collect()
}

pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Array2<f64>;
}

/// Each token maps to a unit vector drawn from a generator seeded by the
/// token's sha256, so equal tokens always get equal rows.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Array2<f64> {
        let toks = tokenize(text);
        if toks.is_empty() {
            log::warn!("TokenlessClause: text has no tokens, embedding is empty");
        }
        let mut m = Array2::zeros((toks.len(), self.dim));
        for (i, t) in toks.iter().enumerate() {
            for (j, x) in self.token_vector(t).into_iter().enumerate() {
                m[[i, j]] = x;
            }
        }
        m
    }
}

pub fn embed_item(item: &mut RetrievedItem, embedder: &dyn Embedder) {
    item.embedding = embedder.embed(&item.verbatim_text);
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplementRequest {
    pub items: Vec<String>,
}

/// Names present in the scene: the ego (a vehicle), instance labels and their
/// canonical lexicon names, grid labels, concept keys and values, and revealed
/// hidden keys.
pub fn scene_terms(scene: &SceneState, lexicon: &Lexicon) -> BTreeSet<String> {
    let mut seen = BTreeSet::from(["vehicle".to_string()]);
    for i in &scene.instances {
        seen.insert(normalize_term(&i.label));
        if let Some(e) = lexicon.canonicalize(&i.label) {
            seen.insert(normalize_term(&e.name));
        }
    }
    for l in scene.grid.present_labels() {
        seen.insert(normalize_term(&grid_label_phrase(l)));
    }
    for (k, v) in &scene.concepts {
        seen.insert(normalize_term(v));
        seen.insert(normalize_term(k));
        match k.as_str() {
            "speed_limit" => seen.insert("speed limit".into()),
            "min_speed" => seen.insert("minimum speed".into()),
            _ => false,
        };
    }
    seen.extend(scene.revealed.iter().map(|r| normalize_term(r)));
    seen
}

/// Scene terms plus every lexicon term in the query text.
pub fn observed_terms(scene: &SceneState, query: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    let mut seen = scene_terms(scene, lexicon);
    for (idx, _) in lexicon.scan(query) {
        seen.insert(normalize_term(&lexicon.entries[idx].name));
    }
    seen
}

/// Perceivable entities linked to retrieved clauses that the scene does not
/// cover yet, ordered by clause rank then link order. Maneuvers are never
/// requested since they cannot be perceived.
pub fn supplement_list(
    g: &KnowledgeGraph,
    items: &[RetrievedItem],
    observed: &BTreeSet<String>,
    cap: usize,
) -> SupplementRequest {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        for (n, _) in g.neighbors(&item.clause_id) {
            let Some(e) = g.entities.get(n) else { continue };
            if e.category == EntityCategory::DrivingManeuver || observed.contains(&e.name) || out.contains(&e.name) {
                continue;
            }
            out.push(e.name.clone());
        }
    }
    out.truncate(cap);
    SupplementRequest { items: out }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub keywords: KeywordSet,
    pub items: Vec<RetrievedItem>,
    pub supplement: SupplementRequest,
}

/// Retrieval front end bundling the graph, lexicon, configuration and
/// embedder.
pub struct Retriever<'a> {
    pub graph: &'a KnowledgeGraph,
    pub lexicon: &'a Lexicon,
    pub config: RetrievalConfig,
    pub embedder: Box<dyn Embedder + Send + Sync + 'a>,
    pub keyword_extractor: Option<Box<dyn KeywordExtractor + Send + Sync + 'a>>,
}

impl<'a> Retriever<'a> {
    pub fn new(graph: &'a KnowledgeGraph, lexicon: &'a Lexicon, config: RetrievalConfig) -> Self {
        let embedder = Box::new(HashEmbedder { dim: config.embed_dim });
        Self { graph, lexicon, config, embedder, keyword_extractor: None }
    }

    pub fn keywords(&self, query: &str) -> KeywordSet {
        match &self.keyword_extractor {
            Some(x) => extract_keywords(query, x.as_ref(), self.lexicon),
            None => LexiconKeywords { lexicon: self.lexicon }.keywords(query).unwrap_or_default(),
        }
    }

    pub fn retrieve_text(&self, query: &str) -> (KeywordSet, Vec<RetrievedItem>) {
        let kw = self.keywords(query);
        let seeds = seed_lookup(self.graph, &kw);
        let expanded = expand_topk(self.graph, &seeds, self.config.top_k);
        let clauses = filter_native(self.graph, &expanded);
        let mut items = rank_items(self.graph, &clauses, &kw, &self.config);
        for it in &mut items {
            embed_item(it, self.embedder.as_ref());
        }
        (kw, items)
    }

    pub fn retrieve(&self, scene: &SceneState) -> RetrievalResult {
        let query = scene_query(scene);
        let (keywords, items) = self.retrieve_text(&query);
        let observed = observed_terms(scene, &query, self.lexicon);
        let supplement = supplement_list(self.graph, &items, &observed, self.config.supplement_cap);
        RetrievalResult { query, keywords, items, supplement }
    }
}
