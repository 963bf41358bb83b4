//! Hierarchical knowledge forest built from driving-knowledge documents.
//!
//! Two input formats are understood:
//!
//! * **heading markup**: `#` count gives the hierarchy level of a branch
//!   title; every blank-line separated paragraph that is not a heading is a
//!   clause under the most recent heading.
//! * **pre-segmented**: one record per line, `level<TAB>kind<TAB>text` with
//!   `kind` either `branch` or `clause`. Level 1 records hang off the document
//!   root.
//!
//! Clause leaves keep the exact bytes of the body they came from: `raw_text`
//! always equals `body[origin.span]`. Every node is tagged native.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document `{doc_id}` contains no clauses")]
    EmptyDocument { doc_id: String },
    #[error("document `{doc_id}` line {line}: {reason}")]
    MalformedHierarchy { doc_id: String, line: usize, reason: String },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("bad front matter in {path}: {reason}")]
    FrontMatter { path: String, reason: String },
    #[error("corpus directory {0} contains no documents")]
    EmptyCorpus(String),
    #[error("forest payload: {0}")]
    Payload(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocCategory {
    Law,
    Regulation,
    DefensiveDriving,
    Ethics,
    Interview,
}

impl DocCategory {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "law" => Self::Law,
            "regulation" => Self::Regulation,
            "defensive_driving" => Self::DefensiveDriving,
            "ethics" => Self::Ethics,
            "interview" => Self::Interview,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFormat {
    HeadingMarkup,
    PreSegmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub category: DocCategory,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Branch,
    Clause,
}

/// Marker carried by every forest node. There is only one value; the field
/// exists so serialized graphs state provenance explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeTag {
    #[default]
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ByteSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub doc_id: String,
    pub span: ByteSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestNode {
    pub node_id: String,
    pub kind: NodeKind,
    /// Branch title, verbatim. `None` for clauses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Clause text, byte-identical to the origin span. `None` for branches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default)]
    pub children: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub level: usize,
    pub origin: Origin,
    #[serde(default)]
    pub tag: NodeTag,
}

impl ForestNode {
    pub fn is_clause(&self) -> bool {
        self.kind == NodeKind::Clause
    }

    /// Clause text or branch title.
    pub fn text(&self) -> &str {
        self.raw_text.as_deref().or(self.title.as_deref()).unwrap_or("")
    }
}

/// One parsed document: its root id plus every node keyed by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentTree {
    pub root: String,
    pub nodes: BTreeMap<String, ForestNode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forest {
    pub roots: Vec<String>,
    pub nodes: BTreeMap<String, ForestNode>,
}

impl Forest {
    pub fn clause_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.values().filter(|n| n.is_clause()).map(|n| n.node_id.as_str())
    }

    pub fn clause_count(&self) -> usize {
        self.clause_ids().count()
    }

    /// Titles of all branch ancestors of `node_id`, nearest first.
    pub fn ancestor_titles(&self, node_id: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut cur = self.nodes.get(node_id).and_then(|n| n.parent.as_deref());
        while let Some(id) = cur {
            let Some(node) = self.nodes.get(id) else { break };
            if let Some(t) = node.title.as_deref() {
                out.push(t);
            }
            cur = node.parent.as_deref();
        }
        out
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(s)?)
    }
}

impl fmt::Display for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "forest: {} trees, {} nodes, {} clauses", self.roots.len(), self.nodes.len(), self.clause_count())
    }
}

struct TreeBuilder<'a> {
    doc: &'a SourceDocument,
    nodes: BTreeMap<String, ForestNode>,
    counter: usize,
    root: String,
}

impl<'a> TreeBuilder<'a> {
    fn new(doc: &'a SourceDocument) -> Self {
        let root = format!("{}:000", doc.doc_id);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root.clone(),
            ForestNode {
                node_id: root.clone(),
                kind: NodeKind::Branch,
                title: Some(doc.title.clone()),
                raw_text: None,
                children: Vec::new(),
                parent: None,
                level: 0,
                origin: Origin { doc_id: doc.doc_id.clone(), span: ByteSpan { start: 0, end: doc.body.len() } },
                tag: NodeTag::Native,
            },
        );
        Self { doc, nodes, counter: 0, root }
    }

    fn add(&mut self, parent: &str, kind: NodeKind, span: ByteSpan, title: Option<String>) -> String {
        self.counter += 1;
        let id = format!("{}:{:03}", self.doc.doc_id, self.counter);
        let level = self.nodes[parent].level + 1;
        let raw_text = match kind {
            NodeKind::Clause => Some(self.doc.body[span.start..span.end].to_string()),
            NodeKind::Branch => None,
        };
        self.nodes.insert(
            id.clone(),
            ForestNode {
                node_id: id.clone(),
                kind,
                title,
                raw_text,
                children: Vec::new(),
                parent: Some(parent.to_string()),
                level,
                origin: Origin { doc_id: self.doc.doc_id.clone(), span },
                tag: NodeTag::Native,
            },
        );
        self.nodes.get_mut(parent).expect("parent exists").children.push(id.clone());
        id
    }

    fn finish(self) -> Result<DocumentTree, CorpusError> {
        if !self.nodes.values().any(ForestNode::is_clause) {
            return Err(CorpusError::EmptyDocument { doc_id: self.doc.doc_id.clone() });
        }
        Ok(DocumentTree { root: self.root, nodes: self.nodes })
    }
}

/// Lines of `body` with their byte offsets, line terminator excluded.
fn lines_with_offsets(body: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in body.split_inclusive('\n') {
        let content = piece.trim_end_matches(['\n', '\r']);
        out.push((start, content));
        start += piece.len();
    }
    out
}

/// Span of `line` (at `offset`) with surrounding whitespace removed.
fn trimmed_span(offset: usize, line: &str) -> ByteSpan {
    let lead = line.len() - line.trim_start().len();
    let trimmed = line.trim();
    ByteSpan { start: offset + lead, end: offset + lead + trimmed.len() }
}

fn heading_level(line: &str) -> Option<(usize, &str)> {
    let hashes = line.bytes().take_while(|b| *b == b'#').count();
    if hashes == 0 {
        return None;
    }
    let rest = &line[hashes..];
    if rest.is_empty() || rest.starts_with(' ') {
        Some((hashes, rest.trim()))
    } else {
        None
    }
}

fn parse_heading_markup(doc: &SourceDocument) -> Result<DocumentTree, CorpusError> {
    let mut b = TreeBuilder::new(doc);
    // (level, node id) of the open branches; the root sits at level 0
    let mut stack: Vec<(usize, String)> = vec![(0, b.root.clone())];
    let mut para: Option<ByteSpan> = None;

    let flush = |b: &mut TreeBuilder, stack: &[(usize, String)], para: &mut Option<ByteSpan>| {
        if let Some(span) = para.take() {
            let parent = stack.last().expect("root never popped").1.clone();
            b.add(&parent, NodeKind::Clause, span, None);
        }
    };

    for (lineno, (offset, line)) in lines_with_offsets(&doc.body).into_iter().enumerate() {
        if line.trim().is_empty() {
            flush(&mut b, &stack, &mut para);
            continue;
        }
        if let Some((level, title)) = heading_level(line.trim_start()) {
            flush(&mut b, &stack, &mut para);
            let depth = stack.last().map(|(l, _)| *l).unwrap_or(0);
            if level > depth + 1 {
                return Err(CorpusError::MalformedHierarchy {
                    doc_id: doc.doc_id.clone(),
                    line: lineno + 1,
                    reason: format!("heading level {level} directly under level {depth}"),
                });
            }
            while stack.last().map(|(l, _)| *l >= level).unwrap_or(false) {
                stack.pop();
            }
            let parent = stack.last().expect("root never popped").1.clone();
            let id = b.add(&parent, NodeKind::Branch, trimmed_span(offset, line), Some(title.to_string()));
            stack.push((level, id));
            continue;
        }
        let span = trimmed_span(offset, line);
        para = Some(match para {
            Some(open) => ByteSpan { start: open.start, end: span.end },
            None => span,
        });
    }
    flush(&mut b, &stack, &mut para);
    b.finish()
}

fn parse_pre_segmented(doc: &SourceDocument) -> Result<DocumentTree, CorpusError> {
    let mut b = TreeBuilder::new(doc);
    // most recent node at each level; index 0 is the root
    let mut open: Vec<(String, NodeKind)> = vec![(b.root.clone(), NodeKind::Branch)];
    for (lineno, (offset, line)) in lines_with_offsets(&doc.body).into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedHierarchy {
            doc_id: doc.doc_id.clone(),
            line: lineno + 1,
            reason,
        };
        let mut fields = line.splitn(3, '\t');
        let (Some(level), Some(kind), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected `level<TAB>kind<TAB>text`".into()));
        };
        let level: usize = level.trim().parse().map_err(|_| malformed(format!("bad level `{level}`")))?;
        let kind = match kind.trim() {
            "branch" => NodeKind::Branch,
            "clause" => NodeKind::Clause,
            other => return Err(malformed(format!("unknown record kind `{other}`"))),
        };
        if level == 0 || level > open.len() {
            return Err(malformed(format!("level {level} follows depth {}", open.len() - 1)));
        }
        open.truncate(level);
        let (parent, parent_kind) = open.last().cloned().expect("root present");
        if parent_kind == NodeKind::Clause {
            return Err(malformed("record nested under a clause".into()));
        }
        let text_offset = offset + (line.len() - text.len());
        let span = trimmed_span(text_offset, text);
        if span.start == span.end {
            return Err(malformed("empty record text".into()));
        }
        let title = (kind == NodeKind::Branch).then(|| doc.body[span.start..span.end].to_string());
        let id = b.add(&parent, kind, span, title);
        open.push((id, kind));
    }
    b.finish()
}

pub fn parse_document(doc: &SourceDocument, format: DocFormat) -> Result<DocumentTree, CorpusError> {
    if doc.body.trim().is_empty() {
        return Err(CorpusError::EmptyDocument { doc_id: doc.doc_id.clone() });
    }
    match format {
        DocFormat::HeadingMarkup => parse_heading_markup(doc),
        DocFormat::PreSegmented => parse_pre_segmented(doc),
    }
}

pub fn build_forest(docs: &[(SourceDocument, DocFormat)]) -> Result<Forest, CorpusError> {
    let mut forest = Forest::default();
    let mut seen = std::collections::BTreeSet::new();
    for (doc, _) in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
        }
    }
    for (doc, format) in docs {
        let tree = parse_document(doc, *format)?;
        forest.roots.push(tree.root);
        forest.nodes.extend(tree.nodes);
    }
    Ok(forest)
}

/// Split a file into front-matter fields and body. Front matter is a block of
/// `key: value` lines fenced by `---` lines at the very top of the file.
fn split_front_matter(path: &str, content: &str) -> Result<(BTreeMap<String, String>, String), CorpusError> {
    let err = |reason: &str| CorpusError::FrontMatter { path: path.to_string(), reason: reason.to_string() };
    let rest = content.strip_prefix("---\n").ok_or_else(|| err("missing opening `---`"))?;
    let end = rest.find("\n---\n").ok_or_else(|| err("missing closing `---`"))?;
    let mut fields = BTreeMap::new();
    for line in rest[..end].lines() {
        let (k, v) = line.split_once(':').ok_or_else(|| err("expected `key: value`"))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((fields, rest[end + 5..].to_string()))
}

/// Parse one corpus file. `.md` files are heading markup, `.tsv` files are
/// pre-segmented records.
pub fn load_document(path: &Path) -> Result<(SourceDocument, DocFormat), CorpusError> {
    let display = path.display().to_string();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => DocFormat::PreSegmented,
        _ => DocFormat::HeadingMarkup,
    };
    let content = std::fs::read_to_string(path)?;
    let (fields, body) = split_front_matter(&display, &content)?;
    let field = |k: &str| {
        fields.get(k).cloned().ok_or_else(|| CorpusError::FrontMatter { path: display.clone(), reason: format!("missing `{k}`") })
    };
    let category = field("category")?;
    let category = DocCategory::parse(&category)
        .ok_or_else(|| CorpusError::FrontMatter { path: display.clone(), reason: format!("unknown category `{category}`") })?;
    Ok((SourceDocument { doc_id: field("doc_id")?, title: field("title")?, category, body }, format))
}

/// Every `.md`/`.tsv` file in `dir`, sorted by file name.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<(SourceDocument, DocFormat)>, CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("md" | "tsv")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CorpusError::EmptyCorpus(dir.display().to_string()));
    }
    paths.iter().map(|p| load_document(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, body: &str) -> SourceDocument {
        SourceDocument { doc_id: id.into(), title: format!("{id} title"), category: DocCategory::Law, body: body.into() }
    }

    const TWO_CHAPTERS: &str = "# Chapter 1\n\n## Article 1\n\nFirst clause.\n\n## Article 2\n\nSecond clause\nspans two lines.\n\n# Chapter 2\n\n## Article 3\n\nThird clause.\n\n## Article 4\n\nFourth clause.\n";

    #[test]
    fn single_clause_without_headings() {
        let t = parse_document(&doc("d", "Keep right.\n"), DocFormat::HeadingMarkup).unwrap();
        let root = &t.nodes[&t.root];
        assert_eq!(root.children.len(), 1);
        let leaf = &t.nodes[&root.children[0]];
        assert!(leaf.is_clause());
        assert_eq!(leaf.raw_text.as_deref(), Some("Keep right."));
    }

    #[test]
    fn two_chapters_two_articles_each() {
        let d = doc("d", TWO_CHAPTERS);
        let t = parse_document(&d, DocFormat::HeadingMarkup).unwrap();
        let clauses: Vec<_> = t.nodes.values().filter(|n| n.is_clause()).collect();
        assert_eq!(clauses.len(), 4);
        assert_eq!(clauses.iter().map(|n| n.level).max(), Some(3));
        // ids are assigned in document order
        let texts: Vec<_> = clauses.iter().map(|n| n.raw_text.clone().unwrap()).collect();
        assert_eq!(texts, ["First clause.", "Second clause\nspans two lines.", "Third clause.", "Fourth clause."]);
        for n in &clauses {
            assert_eq!(&d.body[n.origin.span.start..n.origin.span.end], n.raw_text.as_deref().unwrap());
        }
    }

    #[test]
    fn empty_body_is_rejected() {
        assert!(matches!(parse_document(&doc("d", ""), DocFormat::HeadingMarkup), Err(CorpusError::EmptyDocument { .. })));
        assert!(matches!(
            parse_document(&doc("d", "# Only a heading\n"), DocFormat::HeadingMarkup),
            Err(CorpusError::EmptyDocument { .. })
        ));
    }

    #[test]
    fn level_jump_is_malformed() {
        let r = parse_document(&doc("d", "# A\n\n### C\n\ntext\n"), DocFormat::HeadingMarkup);
        assert!(matches!(r, Err(CorpusError::MalformedHierarchy { line: 3, .. })));
    }

    #[test]
    fn pre_segmented_records() {
        let body = "1\tbranch\tChapter 1\n2\tclause\tStop at the line.\n2\tclause\tYield.\n1\tclause\tTop level.\n";
        let d = doc("p", body);
        let t = parse_document(&d, DocFormat::PreSegmented).unwrap();
        let clauses: Vec<_> = t.nodes.values().filter(|n| n.is_clause()).collect();
        assert_eq!(clauses.len(), 3);
        for n in clauses {
            assert_eq!(&body[n.origin.span.start..n.origin.span.end], n.raw_text.as_deref().unwrap());
        }
    }

    #[test]
    fn pre_segmented_clause_under_clause() {
        let body = "1\tclause\tA clause.\n2\tclause\tNested.\n";
        let r = parse_document(&doc("p", body), DocFormat::PreSegmented);
        assert!(matches!(r, Err(CorpusError::MalformedHierarchy { line: 2, .. })));
        let body = "1\tbranch\tA\n3\tclause\tToo deep.\n";
        assert!(matches!(parse_document(&doc("p", body), DocFormat::PreSegmented), Err(CorpusError::MalformedHierarchy { .. })));
    }

    #[test]
    fn forest_counts_and_duplicates() {
        assert_eq!(build_forest(&[]).unwrap().roots.len(), 0);
        let body = "# A\n\none.\n\ntwo.\n\nthree.\n\n# B\n\nfour.\n\nfive.\n";
        let docs: Vec<_> = ["a", "b", "c"].iter().map(|id| (doc(id, body), DocFormat::HeadingMarkup)).collect();
        let f = build_forest(&docs).unwrap();
        assert_eq!(f.roots.len(), 3);
        assert_eq!(f.clause_count(), 15);
        let dup = vec![(doc("a", body), DocFormat::HeadingMarkup), (doc("a", body), DocFormat::HeadingMarkup)];
        assert!(matches!(build_forest(&dup), Err(CorpusError::DuplicateDocId(id)) if id == "a"));
    }

    #[test]
    fn front_matter_split() {
        let (fields, body) = split_front_matter("x", "---\ndoc_id: a\ntitle: T\ncategory: law\n---\n# H\n\nc.\n").unwrap();
        assert_eq!(fields["doc_id"], "a");
        assert_eq!(body, "# H\n\nc.\n");
    }
}
