//! Builders for the four auxiliary training corpora and their quality
//! measurement against gold links.
//!
//! - silver: documents whose split anaphors come from released silver labels
//! - crowd: majority-voted raw annotations, maximising recall at the cost
//!   of precision
//! - element-of: bridging links between a singular element and a plural
//!   set, in both directions
//! - single-coref: one link per non-first mention of each coreference
//!   cluster, to its nearest preceding cluster-mate
//!
//! Output documents carry tokens, mentions, clusters, and the derived
//! training links only; bridging and crowd layers are dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    BridgingRelation, Corpus, CrowdAnnotation, DocIndex, Document, MentionId, QualityTier,
};
use crate::{Error, Result};

/// Construction path of an auxiliary corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuxSource {
    PdSilver,
    PdCrowd,
    ElementOf,
    SingleCoref,
}

impl AuxSource {
    pub fn name(&self) -> &'static str {
        match self {
            AuxSource::PdSilver => "pd-silver",
            AuxSource::PdCrowd => "pd-crowd",
            AuxSource::ElementOf => "element-of",
            AuxSource::SingleCoref => "single-coref",
        }
    }
}

/// An auxiliary training corpus plus provenance and link count.
#[derive(Debug, Clone)]
pub struct AuxCorpus {
    pub corpus: Corpus,
    pub source: AuxSource,
    pub link_count: usize,
}

fn strip_doc(
    doc: &Document,
    split_anaphors: BTreeMap<MentionId, BTreeSet<MentionId>>,
) -> Document {
    Document {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens.clone(),
        mentions: doc.mentions.clone(),
        clusters: doc.clusters.clone(),
        split_anaphors,
        bridging: Vec::new(),
        crowd: Vec::new(),
    }
}

fn finish(documents: Vec<Document>, source: AuxSource, tier: QualityTier) -> AuxCorpus {
    let link_count = documents.iter().map(|d| d.link_count()).sum();
    AuxCorpus {
        corpus: Corpus {
            name: source.name().to_string(),
            quality_tier: tier,
            documents,
        },
        source,
        link_count,
    }
}

/// Keeps the documents whose silver labels contain at least one split
/// anaphor, dropping all other annotation layers.
pub fn build_silver(pd: &Corpus) -> AuxCorpus {
    let documents = pd
        .documents
        .iter()
        .filter(|d| !d.split_anaphors.is_empty())
        .map(|d| strip_doc(d, d.split_anaphors.clone()))
        .collect();
    finish(documents, AuxSource::PdSilver, QualityTier::Silver)
}

/// Majority vote over whole antecedent sets for one anaphor.
///
/// Ties break on the higher per-link vote total, then on the set
/// containing the earliest-starting distinct mention, so the result is
/// deterministic and invariant to annotation order.
pub fn majority_vote(
    doc: &Document,
    annotations: &[CrowdAnnotation],
) -> Result<BTreeSet<MentionId>> {
    let Some(first) = annotations.first() else {
        return Err(Error::EmptyVote);
    };
    for ann in annotations {
        if ann.anaphor != first.anaphor {
            return Err(Error::MixedVote {
                first: first.anaphor.to_string(),
                second: ann.anaphor.to_string(),
            });
        }
    }
    let index = DocIndex::new(doc);

    let mut set_votes: BTreeMap<&BTreeSet<MentionId>, usize> = BTreeMap::new();
    let mut link_votes: BTreeMap<&MentionId, usize> = BTreeMap::new();
    for ann in annotations {
        *set_votes.entry(&ann.antecedents).or_insert(0) += 1;
        for ante in &ann.antecedents {
            *link_votes.entry(ante).or_insert(0) += 1;
        }
    }

    let position = |id: &MentionId| index.order_position(id).unwrap_or(usize::MAX);
    // Document-order positions padded with MAX: lexicographically smaller
    // means "contains the earlier-starting distinct mention".
    let order_key = |set: &BTreeSet<MentionId>| -> Vec<usize> {
        let mut positions: Vec<usize> = set.iter().map(position).collect();
        positions.sort_unstable();
        positions
    };
    let pad_cmp = |a: &[usize], b: &[usize]| -> std::cmp::Ordering {
        let n = a.len().max(b.len());
        for i in 0..n {
            let x = a.get(i).copied().unwrap_or(usize::MAX);
            let y = b.get(i).copied().unwrap_or(usize::MAX);
            match x.cmp(&y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    };

    let winner = set_votes
        .iter()
        .max_by(|(set_a, votes_a), (set_b, votes_b)| {
            votes_a
                .cmp(votes_b)
                .then_with(|| {
                    let total = |s: &BTreeSet<MentionId>| -> usize {
                        s.iter()
                            .map(|m| link_votes.get(m).copied().unwrap_or(0))
                            .sum()
                    };
                    total(set_a).cmp(&total(set_b))
                })
                // max_by keeps the larger; the earlier-starting key must win,
                // so compare reversed.
                .then_with(|| pad_cmp(&order_key(set_b), &order_key(set_a)))
        })
        .map(|(set, _)| (*set).clone())
        .expect("non-empty annotations");
    Ok(winner)
}

/// True when `antecedents` is a legal split-antecedent set for `anaphor`.
fn link_set_is_valid(
    index: &DocIndex<'_>,
    anaphor: &MentionId,
    antecedents: &BTreeSet<MentionId>,
) -> bool {
    let Ok(a) = index.mention(anaphor) else {
        return false;
    };
    let mut clusters = BTreeSet::new();
    for ante in antecedents {
        let Ok(m) = index.mention(ante) else {
            return false;
        };
        if !m.precedes(a) {
            return false;
        }
        match index.cluster_of(ante) {
            Some(c) if clusters.insert(c) => {}
            _ => return false,
        }
    }
    true
}

/// Aggregates raw crowd annotations by majority voting.
///
/// Each anaphor with at least one split-antecedent annotation (two or more
/// antecedents) receives the voted set; voted sets that would violate
/// document invariants are discarded. Documents with at least one
/// surviving anaphor are retained.
pub fn build_crowd(pd_raw: &Corpus) -> AuxCorpus {
    let mut documents = Vec::new();
    for doc in &pd_raw.documents {
        let index = DocIndex::new(doc);
        let mut by_anaphor: BTreeMap<&MentionId, Vec<CrowdAnnotation>> = BTreeMap::new();
        for ann in &doc.crowd {
            if ann.antecedents.len() >= 2 {
                by_anaphor.entry(&ann.anaphor).or_default().push(ann.clone());
            }
        }
        let mut split_anaphors = BTreeMap::new();
        for (anaphor, annotations) in by_anaphor {
            let voted = majority_vote(doc, &annotations).expect("group is non-empty");
            if link_set_is_valid(&index, anaphor, &voted) {
                split_anaphors.insert(anaphor.clone(), voted);
            }
        }
        if !split_anaphors.is_empty() {
            documents.push(strip_doc(doc, split_anaphors));
        }
    }
    finish(documents, AuxSource::PdCrowd, QualityTier::Noisy)
}

/// Turns element-of and element-of-inverse bridging links into training
/// links from the anaphor to its antecedent, grouped per anaphor.
///
/// One-antecedent sets are kept; the two-antecedent floor applies only to
/// split anaphors at test time. Links that would violate ordering or the
/// distinct-cluster rule are skipped.
pub fn build_element_of(src: &Corpus) -> AuxCorpus {
    let mut documents = Vec::new();
    for doc in &src.documents {
        let index = DocIndex::new(doc);
        let mut links: BTreeMap<MentionId, BTreeSet<MentionId>> = BTreeMap::new();
        for link in &doc.bridging {
            if !matches!(
                link.relation,
                BridgingRelation::ElementOf | BridgingRelation::ElementOfInverse
            ) {
                continue;
            }
            let mut candidate = links.get(&link.anaphor).cloned().unwrap_or_default();
            candidate.insert(link.antecedent.clone());
            if link_set_is_valid(&index, &link.anaphor, &candidate) {
                links.insert(link.anaphor.clone(), candidate);
            }
        }
        if !links.is_empty() {
            documents.push(strip_doc(doc, links));
        }
    }
    finish(documents, AuxSource::ElementOf, QualityTier::Gold)
}

/// Emits one link per non-first mention of each non-singleton cluster, to
/// its nearest preceding cluster-mate. All documents are retained.
pub fn build_single_coref(src: &Corpus) -> AuxCorpus {
    let mut documents = Vec::new();
    for doc in &src.documents {
        let index = DocIndex::new(doc);
        let mut links: BTreeMap<MentionId, BTreeSet<MentionId>> = BTreeMap::new();
        for cluster in &doc.clusters {
            if cluster.len() < 2 {
                continue;
            }
            let mut ordered: Vec<&MentionId> = cluster.iter().collect();
            ordered.sort_by_key(|id| index.order_position(id).unwrap_or(usize::MAX));
            for pair in ordered.windows(2) {
                let (prev, curr) = (pair[0], pair[1]);
                let (Ok(p), Ok(c)) = (index.mention(prev), index.mention(curr)) else {
                    continue;
                };
                if p.precedes(c) {
                    links.insert(curr.clone(), BTreeSet::from([prev.clone()]));
                }
            }
        }
        documents.push(strip_doc(doc, links));
    }
    finish(documents, AuxSource::SingleCoref, QualityTier::Gold)
}

/// Link counts behind a [`QualityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounts {
    pub aux: usize,
    pub gold: usize,
    pub matched: usize,
}

/// Link-level quality of an auxiliary corpus against gold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub link_counts: LinkCounts,
}

/// Link-level precision/recall/F1 of `aux` against `gold`.
///
/// A link `(anaphor, antecedent)` is correct when the antecedent's gold
/// cluster appears among the clusters of that anaphor's gold antecedents,
/// each gold cluster creditable once per anaphor. Documents present only
/// in gold count as misses; documents present only in `aux` are an error.
pub fn corpus_quality(aux: &AuxCorpus, gold: &Corpus) -> Result<QualityReport> {
    let gold_docs: BTreeMap<&str, &Document> = gold
        .documents
        .iter()
        .map(|d| (d.doc_id.as_str(), d))
        .collect();
    let mut matched = 0usize;
    let mut aux_links = 0usize;
    for doc in &aux.corpus.documents {
        let Some(gold_doc) = gold_docs.get(doc.doc_id.as_str()) else {
            return Err(Error::DocIdMismatch {
                aux: aux.corpus.name.clone(),
                gold: gold.name.clone(),
                doc_id: doc.doc_id.clone(),
            });
        };
        let index = DocIndex::new(gold_doc);
        for (anaphor, antecedents) in &doc.split_anaphors {
            let gold_clusters: Option<BTreeSet<usize>> = gold_doc
                .split_anaphors
                .get(anaphor)
                .map(|g| index.cluster_set(g.iter()));
            let mut credited: BTreeSet<usize> = BTreeSet::new();
            for ante in antecedents {
                aux_links += 1;
                let cluster = match index.cluster_of(ante) {
                    Some(c) => c,
                    None => {
                        index.mention(ante)?; // unknown mention -> error
                        continue;
                    }
                };
                if let Some(gc) = &gold_clusters {
                    if gc.contains(&cluster) && credited.insert(cluster) {
                        matched += 1;
                    }
                }
            }
        }
    }
    let gold_links: usize = gold.documents.iter().map(|d| d.link_count()).sum();

    let ratio = |num: usize, denom: usize| {
        if denom == 0 {
            1.0
        } else {
            num as f64 / denom as f64
        }
    };
    let recall = ratio(matched, gold_links);
    let precision = ratio(matched, aux_links);
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    Ok(QualityReport {
        recall,
        precision,
        f1,
        link_counts: LinkCounts {
            aux: aux_links,
            gold: gold_links,
            matched,
        },
    })
}
