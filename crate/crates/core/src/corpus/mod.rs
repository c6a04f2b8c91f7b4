//! Corpus data model: documents, mentions, clusters, split-antecedent maps,
//! candidate windows, and gold-cluster anaphor extension.
//!
//! Documents arrive pre-tokenized. Mention spans are token-indexed and
//! inclusive at both ends. A mention `m` *precedes* a mention `a` when
//! `(m.start, m.end) < (a.start, a.end)` lexicographically; every split
//! anaphor's antecedents must precede it and lie in pairwise-distinct
//! gold clusters.

mod jsonl;
pub mod synth;

pub use jsonl::{load_corpus, load_corpus_opts, save_corpus, LoadOpts};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of a mention within one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MentionId(pub String);

impl MentionId {
    pub fn new(id: impl Into<String>) -> Self {
        MentionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MentionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MentionId {
    fn from(s: &str) -> Self {
        MentionId(s.to_string())
    }
}

/// A gold mention: a token span, inclusive at both ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub id: MentionId,
    pub start: usize,
    pub end: usize,
}

impl Mention {
    /// Width in tokens (inclusive span).
    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    /// Document-order precedence: start strictly smaller, ties broken by end.
    pub fn precedes(&self, other: &Mention) -> bool {
        (self.start, self.end) < (other.start, other.end)
    }
}

/// Bridging relation label on a (anaphor, antecedent) link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BridgingRelation {
    #[serde(rename = "element-of")]
    ElementOf,
    #[serde(rename = "element-of-inverse")]
    ElementOfInverse,
    #[serde(rename = "other")]
    Other,
}

/// A bridging link between two mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgingLink {
    pub anaphor: MentionId,
    pub antecedent: MentionId,
    pub relation: BridgingRelation,
}

/// One player's raw annotation of a single anaphor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrowdAnnotation {
    pub annotator: String,
    pub anaphor: MentionId,
    pub antecedents: BTreeSet<MentionId>,
}

/// A document with gold mentions and all annotation layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
    /// Partition of mention ids into gold single-antecedent clusters.
    pub clusters: Vec<Vec<MentionId>>,
    /// Anaphor mention id to its set of split antecedents.
    pub split_anaphors: BTreeMap<MentionId, BTreeSet<MentionId>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bridging: Vec<BridgingLink>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crowd: Vec<CrowdAnnotation>,
}

impl Document {
    /// Total number of anaphor-to-antecedent training links.
    pub fn link_count(&self) -> usize {
        self.split_anaphors.values().map(|s| s.len()).sum()
    }
}

/// Annotation quality of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityTier {
    Gold,
    Silver,
    Noisy,
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub quality_tier: QualityTier,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, tier: QualityTier) -> Self {
        Corpus {
            name: name.into(),
            quality_tier: tier,
            documents: Vec::new(),
        }
    }

    pub fn anaphor_count(&self) -> usize {
        self.documents.iter().map(|d| d.split_anaphors.len()).sum()
    }

    pub fn link_count(&self) -> usize {
        self.documents.iter().map(|d| d.link_count()).sum()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// The rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationRule {
    DuplicateMentionId,
    SpanBounds,
    UnknownMention,
    ClusterPartition,
    AntecedentCount,
    AntecedentOrder,
    AntecedentClusters,
    EmptyCrowdAnnotation,
}

/// A single invariant violation found by [`validate_document`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: ValidationRule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violation(rule: ValidationRule, message: String) -> Violation {
    Violation { rule, message }
}

/// Options for [`validate_document_opts`].
///
/// Auxiliary corpora built from element-of bridging links or
/// single-antecedent coreference legitimately carry one-antecedent
/// training items; `allow_single_antecedent` relaxes the two-antecedent
/// floor for those. Everything else stays strict.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOpts {
    pub allow_single_antecedent: bool,
}

/// Checks every document invariant; returns one entry per violation.
///
/// Violations are data, not errors: an empty result means the document is
/// well-formed.
pub fn validate_document(doc: &Document) -> Vec<Violation> {
    validate_document_opts(doc, ValidateOpts::default())
}

pub fn validate_document_opts(doc: &Document, opts: ValidateOpts) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut by_id: HashMap<&MentionId, &Mention> = HashMap::new();
    for m in &doc.mentions {
        if by_id.insert(&m.id, m).is_some() {
            out.push(violation(
                ValidationRule::DuplicateMentionId,
                format!("duplicate mention id: {}", m.id),
            ));
        }
        if m.start > m.end || m.end >= doc.tokens.len() {
            out.push(violation(
                ValidationRule::SpanBounds,
                format!(
                    "mention {} span ({}, {}) out of bounds for {} tokens",
                    m.id,
                    m.start,
                    m.end,
                    doc.tokens.len()
                ),
            ));
        }
    }

    let check_exists = |id: &MentionId, context: &str, out: &mut Vec<Violation>| {
        if !by_id.contains_key(id) {
            out.push(violation(
                ValidationRule::UnknownMention,
                format!("unknown mention id {id} referenced in {context}"),
            ));
        }
    };

    // Clusters must partition the mention set.
    let mut seen_in_cluster: HashSet<&MentionId> = HashSet::new();
    for cluster in &doc.clusters {
        for id in cluster {
            check_exists(id, "clusters", &mut out);
            if !seen_in_cluster.insert(id) {
                out.push(violation(
                    ValidationRule::ClusterPartition,
                    format!("mention {id} appears in more than one cluster"),
                ));
            }
        }
    }
    for m in &doc.mentions {
        if !seen_in_cluster.contains(&m.id) {
            out.push(violation(
                ValidationRule::ClusterPartition,
                format!("mention {} belongs to no cluster", m.id),
            ));
        }
    }
    let cluster_of = cluster_map(doc);

    for (anaphor, antecedents) in &doc.split_anaphors {
        check_exists(anaphor, "split_anaphors", &mut out);
        for ante in antecedents {
            check_exists(ante, "split_anaphors", &mut out);
        }
        let floor = if opts.allow_single_antecedent { 1 } else { 2 };
        if antecedents.len() < floor {
            out.push(violation(
                ValidationRule::AntecedentCount,
                format!("split anaphor must have >=2 antecedents: {anaphor}"),
            ));
        }
        let Some(a) = by_id.get(anaphor) else {
            continue;
        };
        let mut clusters_seen: HashSet<usize> = HashSet::new();
        for ante in antecedents {
            let Some(m) = by_id.get(ante) else { continue };
            if !m.precedes(a) {
                out.push(violation(
                    ValidationRule::AntecedentOrder,
                    format!("antecedent {ante} does not precede anaphor {anaphor}"),
                ));
            }
            if let Some(c) = cluster_of.get(ante) {
                if !clusters_seen.insert(*c) {
                    out.push(violation(
                        ValidationRule::AntecedentClusters,
                        format!(
                            "antecedents of {anaphor} are not in pairwise-distinct clusters ({ante})"
                        ),
                    ));
                }
            }
        }
    }

    for ann in &doc.crowd {
        check_exists(&ann.anaphor, "crowd", &mut out);
        for ante in &ann.antecedents {
            check_exists(ante, "crowd", &mut out);
        }
        if ann.antecedents.is_empty() {
            out.push(violation(
                ValidationRule::EmptyCrowdAnnotation,
                format!(
                    "crowd annotation by {} on {} has no antecedents",
                    ann.annotator, ann.anaphor
                ),
            ));
        }
    }

    for link in &doc.bridging {
        check_exists(&link.anaphor, "bridging", &mut out);
        check_exists(&link.antecedent, "bridging", &mut out);
    }

    out
}

fn cluster_map(doc: &Document) -> HashMap<&MentionId, usize> {
    let mut map = HashMap::new();
    for (ci, cluster) in doc.clusters.iter().enumerate() {
        for id in cluster {
            map.entry(id).or_insert(ci);
        }
    }
    map
}

/// Precomputed lookup structures for one document.
///
/// Mentions are held in document order: sorted by `(start, end)` with the
/// id as a deterministic tie-break for identical spans.
pub struct DocIndex<'d> {
    doc: &'d Document,
    order: Vec<usize>,
    position: HashMap<&'d MentionId, usize>,
    cluster: HashMap<&'d MentionId, usize>,
}

impl<'d> DocIndex<'d> {
    pub fn new(doc: &'d Document) -> Self {
        let mut order: Vec<usize> = (0..doc.mentions.len()).collect();
        order.sort_by(|&a, &b| {
            let (ma, mb) = (&doc.mentions[a], &doc.mentions[b]);
            (ma.start, ma.end, &ma.id).cmp(&(mb.start, mb.end, &mb.id))
        });
        let mut position = HashMap::new();
        for (pos, &mi) in order.iter().enumerate() {
            position.insert(&doc.mentions[mi].id, pos);
        }
        let cluster = cluster_map(doc);
        DocIndex {
            doc,
            order,
            position,
            cluster,
        }
    }

    pub fn doc(&self) -> &'d Document {
        self.doc
    }

    /// Mentions in document order.
    pub fn mentions_in_order(&self) -> impl Iterator<Item = &'d Mention> + '_ {
        self.order.iter().map(|&mi| &self.doc.mentions[mi])
    }

    pub fn mention(&self, id: &MentionId) -> Result<&'d Mention> {
        self.position
            .get(id)
            .map(|&pos| &self.doc.mentions[self.order[pos]])
        .ok_or_else(|| Error::UnknownMention {
            doc_id: self.doc.doc_id.clone(),
            id: id.to_string(),
        })
    }

    /// Position of a mention in document order.
    pub fn order_position(&self, id: &MentionId) -> Result<usize> {
        self.position
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownMention {
                doc_id: self.doc.doc_id.clone(),
                id: id.to_string(),
            })
    }

    /// Gold cluster index of a mention, if it belongs to any cluster.
    pub fn cluster_of(&self, id: &MentionId) -> Option<usize> {
        self.cluster.get(id).copied()
    }

    /// Cluster indices of a set of mentions.
    pub fn cluster_set<'a>(&self, ids: impl IntoIterator<Item = &'a MentionId>) -> BTreeSet<usize> {
        ids.into_iter()
            .filter_map(|id| self.cluster_of(id))
            .collect()
    }

    /// Owned anaphor-to-cluster map over all mentions.
    pub fn cluster_assignment(&self) -> BTreeMap<MentionId, usize> {
        self.cluster
            .iter()
            .map(|(id, &c)| ((*id).clone(), c))
            .collect()
    }
}

/// Hard cap on candidate antecedents per anaphor.
pub const DEFAULT_CANDIDATE_WINDOW: usize = 250;

/// The up-to-`window` mentions preceding `anaphor` in document order,
/// nearest first.
///
/// Mentions sharing the anaphor's exact span are not predecessors.
pub fn candidate_antecedents(
    doc: &Document,
    anaphor: &MentionId,
    window: usize,
) -> Result<Vec<MentionId>> {
    let index = DocIndex::new(doc);
    candidate_antecedents_indexed(&index, anaphor, window)
}

pub fn candidate_antecedents_indexed(
    index: &DocIndex<'_>,
    anaphor: &MentionId,
    window: usize,
) -> Result<Vec<MentionId>> {
    let a = index.mention(anaphor)?;
    let pos = index.order_position(anaphor)?;
    let preceding: Vec<&Mention> = index.mentions_in_order().take(pos).collect();
    let mut out = Vec::new();
    for m in preceding.into_iter().rev() {
        if !m.precedes(a) {
            continue;
        }
        out.push(m.id.clone());
        if out.len() == window {
            break;
        }
    }
    Ok(out)
}

/// Extends the split-anaphor list through gold single-antecedent clusters.
///
/// For every split anaphor `a` and every cluster-mate `m` of `a` that all
/// of `a`'s antecedents precede, `m` becomes a split anaphor with `a`'s
/// antecedent set. Pre-existing entries are never altered; when two
/// anaphors in one cluster compete for the same mate, the earlier anaphor
/// in document order wins. Intended for training data only. Idempotent.
pub fn extend_anaphors(doc: &Document) -> Document {
    let index = DocIndex::new(doc);
    let mut extended = doc.clone();

    let mut anaphors: Vec<&MentionId> = doc.split_anaphors.keys().collect();
    anaphors.sort_by_key(|id| index.order_position(id).unwrap_or(usize::MAX));

    for anaphor in anaphors {
        let antecedents = &doc.split_anaphors[anaphor];
        let Some(ci) = index.cluster_of(anaphor) else {
            continue;
        };
        let ante_mentions: Vec<&Mention> = antecedents
            .iter()
            .filter_map(|id| index.mention(id).ok())
            .collect();

        let mut mates: Vec<&MentionId> = doc.clusters[ci]
            .iter()
            .filter(|m| *m != anaphor)
            .collect();
        mates.sort_by_key(|id| index.order_position(id).unwrap_or(usize::MAX));

        for mate in mates {
            if extended.split_anaphors.contains_key(mate) {
                continue;
            }
            let Ok(mate_mention) = index.mention(mate) else {
                continue;
            };
            if ante_mentions.iter().all(|a| a.precedes(mate_mention)) {
                extended
                    .split_anaphors
                    .insert(mate.clone(), antecedents.clone());
            }
        }
    }
    extended
}

/// [`extend_anaphors`] over every document of a corpus.
pub fn extend_corpus(corpus: &Corpus) -> Corpus {
    Corpus {
        name: corpus.name.clone(),
        quality_tier: corpus.quality_tier,
        documents: corpus.documents.iter().map(extend_anaphors).collect(),
    }
}
