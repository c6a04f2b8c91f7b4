//! Lenient and strict evaluation of split-antecedent predictions, the
//! per-antecedent-count breakdown, and the recent-m / random baselines.
//!
//! Lenient scoring gives link-level partial credit: a predicted antecedent
//! is correct when its gold cluster equals the cluster of some gold
//! antecedent of that anaphor, each gold cluster creditable at most once
//! per anaphor. Micro-averaged recall divides total matches by total gold
//! links, precision by total predicted links; a macro (per-anaphor)
//! average is reported as a secondary column. Strict scoring counts an
//! anaphor as correct only when the predicted cluster set equals the gold
//! cluster set exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    candidate_antecedents_indexed, Corpus, DocIndex, Document, MentionId,
    DEFAULT_CANDIDATE_WINDOW,
};
use crate::scorer::{select_antecedents, PairScore, SELECT_MAX, SELECT_MIN};
use crate::{Error, Result};

/// Predicted antecedents for the gold anaphors of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    /// Anaphor to its predicted antecedents, in selection order.
    pub antecedents: BTreeMap<MentionId, Vec<MentionId>>,
    /// Selection probabilities, parallel to `antecedents`, when available.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<MentionId, Vec<f64>>,
}

impl PredictionSet {
    pub fn new(doc_id: &str) -> Self {
        PredictionSet {
            doc_id: doc_id.to_string(),
            antecedents: BTreeMap::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        anaphor: MentionId,
        antecedents: Vec<MentionId>,
        scores: Option<Vec<f64>>,
    ) {
        if let Some(s) = scores {
            self.scores.insert(anaphor.clone(), s);
        }
        self.antecedents.insert(anaphor, antecedents);
    }
}

/// Recall / precision / F1 as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pnr {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Pnr {
    fn from_counts(matched: usize, gold: usize, predicted: usize) -> Pnr {
        let ratio = |num: usize, denom: usize| {
            if denom == 0 {
                1.0
            } else {
                num as f64 / denom as f64
            }
        };
        Pnr::from_rp(ratio(matched, gold), ratio(matched, predicted))
    }

    fn from_rp(recall: f64, precision: f64) -> Pnr {
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Pnr {
            recall,
            precision,
            f1,
        }
    }
}

/// Link counts for one gold anaphor.
struct AnaphorCounts {
    gold_count: usize,
    gold_links: usize,
    pred_links: usize,
    matched: usize,
    strict_correct: bool,
}

/// Validates coverage and counts matches per anaphor.
fn per_anaphor_counts(preds: &[PredictionSet], gold: &Corpus) -> Result<Vec<AnaphorCounts>> {
    let by_doc: BTreeMap<&str, &PredictionSet> =
        preds.iter().map(|p| (p.doc_id.as_str(), p)).collect();
    let mut out = Vec::new();
    for doc in &gold.documents {
        let pred = by_doc.get(doc.doc_id.as_str());
        // Every predicted anaphor must be a gold split anaphor.
        if let Some(pred) = pred {
            for anaphor in pred.antecedents.keys() {
                if !doc.split_anaphors.contains_key(anaphor) {
                    return Err(Error::UnknownAnaphor {
                        doc_id: doc.doc_id.clone(),
                        anaphor: anaphor.to_string(),
                    });
                }
            }
        }
        if doc.split_anaphors.is_empty() {
            continue;
        }
        let index = DocIndex::new(doc);
        for (anaphor, gold_antecedents) in &doc.split_anaphors {
            let predicted = pred
                .and_then(|p| p.antecedents.get(anaphor))
                .ok_or_else(|| Error::MissingPrediction {
                    doc_id: doc.doc_id.clone(),
                    anaphor: anaphor.to_string(),
                })?;
            let gold_clusters = index.cluster_set(gold_antecedents.iter());
            let mut pred_clusters = BTreeSet::new();
            for p in predicted {
                index.mention(p)?; // unknown mention id -> error
                if let Some(c) = index.cluster_of(p) {
                    pred_clusters.insert(c);
                }
            }
            let matched = pred_clusters.intersection(&gold_clusters).count();
            out.push(AnaphorCounts {
                gold_count: gold_antecedents.len(),
                gold_links: gold_antecedents.len(),
                pred_links: predicted.len(),
                matched,
                strict_correct: pred_clusters == gold_clusters,
            });
        }
    }
    Ok(out)
}

fn micro(counts: &[AnaphorCounts]) -> Pnr {
    let gold: usize = counts.iter().map(|c| c.gold_links).sum();
    let pred: usize = counts.iter().map(|c| c.pred_links).sum();
    let matched: usize = counts.iter().map(|c| c.matched).sum();
    Pnr::from_counts(matched, gold, pred)
}

fn macro_avg(counts: &[AnaphorCounts]) -> Pnr {
    if counts.is_empty() {
        return Pnr::from_rp(1.0, 1.0);
    }
    let n = counts.len() as f64;
    let recall = counts
        .iter()
        .map(|c| Pnr::from_counts(c.matched, c.gold_links, c.pred_links).recall)
        .sum::<f64>()
        / n;
    let precision = counts
        .iter()
        .map(|c| Pnr::from_counts(c.matched, c.gold_links, c.pred_links).precision)
        .sum::<f64>()
        / n;
    Pnr::from_rp(recall, precision)
}

fn accuracy(counts: &[AnaphorCounts]) -> f64 {
    if counts.is_empty() {
        return 1.0;
    }
    counts.iter().filter(|c| c.strict_correct).count() as f64 / counts.len() as f64
}

/// Micro-averaged lenient link scores over all anaphors.
pub fn lenient_scores(preds: &[PredictionSet], gold: &Corpus) -> Result<Pnr> {
    Ok(micro(&per_anaphor_counts(preds, gold)?))
}

/// Per-anaphor (macro) lenient average, the secondary reported column.
pub fn lenient_scores_macro(preds: &[PredictionSet], gold: &Corpus) -> Result<Pnr> {
    Ok(macro_avg(&per_anaphor_counts(preds, gold)?))
}

/// Fraction of anaphors whose predicted cluster set equals gold exactly.
pub fn strict_accuracy(preds: &[PredictionSet], gold: &Corpus) -> Result<f64> {
    Ok(accuracy(&per_anaphor_counts(preds, gold)?))
}

/// One row of the per-antecedent-count breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountGroupReport {
    pub label: String,
    pub anaphors: usize,
    pub gold_links: usize,
    pub predicted_links: usize,
    pub matched_links: usize,
    /// Percent metrics; absent when the group is empty.
    pub lenient_f1: Option<f64>,
    pub strict_accuracy: Option<f64>,
}

/// Partitions anaphors by gold antecedent count into {2} and {3+}.
pub fn breakdown_by_count(
    preds: &[PredictionSet],
    gold: &Corpus,
) -> Result<Vec<CountGroupReport>> {
    let counts = per_anaphor_counts(preds, gold)?;
    let group = |label: &str, keep: &dyn Fn(usize) -> bool| {
        let subset: Vec<&AnaphorCounts> = counts.iter().filter(|c| keep(c.gold_count)).collect();
        let owned: Vec<AnaphorCounts> = subset
            .iter()
            .map(|c| AnaphorCounts {
                gold_count: c.gold_count,
                gold_links: c.gold_links,
                pred_links: c.pred_links,
                matched: c.matched,
                strict_correct: c.strict_correct,
            })
            .collect();
        let empty = owned.is_empty();
        CountGroupReport {
            label: label.to_string(),
            anaphors: owned.len(),
            gold_links: owned.iter().map(|c| c.gold_links).sum(),
            predicted_links: owned.iter().map(|c| c.pred_links).sum(),
            matched_links: owned.iter().map(|c| c.matched).sum(),
            lenient_f1: (!empty).then(|| micro(&owned).f1 * 100.0),
            strict_accuracy: (!empty).then(|| accuracy(&owned) * 100.0),
        }
    };
    Ok(vec![
        group("2", &|n| n == 2),
        group("3+", &|n| n >= 3),
    ])
}

/// Percent-scaled metric summary mirroring the reported table columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub lenient_recall: f64,
    pub lenient_precision: f64,
    pub lenient_f1: f64,
    pub lenient_macro_recall: f64,
    pub lenient_macro_precision: f64,
    pub lenient_macro_f1: f64,
    pub strict_accuracy: f64,
    pub anaphors: usize,
    pub gold_links: usize,
    pub predicted_links: usize,
    pub matched_links: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Vec<CountGroupReport>>,
}

/// Computes the full report; `with_breakdown` adds the {2, 3+} rows.
pub fn metric_report(
    preds: &[PredictionSet],
    gold: &Corpus,
    with_breakdown: bool,
) -> Result<MetricReport> {
    let counts = per_anaphor_counts(preds, gold)?;
    let lenient = micro(&counts);
    let lenient_macro = macro_avg(&counts);
    Ok(MetricReport {
        lenient_recall: lenient.recall * 100.0,
        lenient_precision: lenient.precision * 100.0,
        lenient_f1: lenient.f1 * 100.0,
        lenient_macro_recall: lenient_macro.recall * 100.0,
        lenient_macro_precision: lenient_macro.precision * 100.0,
        lenient_macro_f1: lenient_macro.f1 * 100.0,
        strict_accuracy: accuracy(&counts) * 100.0,
        anaphors: counts.len(),
        gold_links: counts.iter().map(|c| c.gold_links).sum(),
        predicted_links: counts.iter().map(|c| c.pred_links).sum(),
        matched_links: counts.iter().map(|c| c.matched).sum(),
        breakdown: if with_breakdown {
            Some(breakdown_by_count(preds, gold)?)
        } else {
            None
        },
    })
}

/// Renders labelled reports as an aligned text table.
pub fn render_table(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28}{:>8}{:>8}{:>8}  {:>8}\n",
        "", "Lenient", "", "", "Strict"
    ));
    out.push_str(&format!(
        "{:<28}{:>8}{:>8}{:>8}  {:>8}\n",
        "System", "R", "P", "F1", "Accuracy"
    ));
    for (label, report) in rows {
        out.push_str(&format!(
            "{:<28}{:>8.1}{:>8.1}{:>8.1}  {:>8.1}\n",
            label,
            report.lenient_recall,
            report.lenient_precision,
            report.lenient_f1,
            report.strict_accuracy
        ));
        if let Some(breakdown) = &report.breakdown {
            for row in breakdown {
                let fmt = |v: Option<f64>| match v {
                    Some(v) => format!("{v:>8.1}"),
                    None => format!("{:>8}", "-"),
                };
                out.push_str(&format!(
                    "{:<28}{:>8}{:>8}{}  {}\n",
                    format!("  antecedents={} (n={})", row.label, row.anaphors),
                    "",
                    "",
                    fmt(row.lenient_f1),
                    fmt(row.strict_accuracy),
                ));
            }
        }
    }
    out
}

/// Predicts the `m` nearest preceding cluster-distinct mentions for every
/// gold anaphor of a document.
pub fn baseline_recent_m(doc: &Document, m: usize) -> Result<PredictionSet> {
    if !(SELECT_MIN..=SELECT_MAX).contains(&m) {
        return Err(Error::Config(format!(
            "recent-m requires {SELECT_MIN} <= m <= {SELECT_MAX}, got {m}"
        )));
    }
    let index = DocIndex::new(doc);
    let mut prediction = PredictionSet::new(&doc.doc_id);
    for anaphor in doc.split_anaphors.keys() {
        let candidates = candidate_antecedents_indexed(&index, anaphor, usize::MAX)?;
        let mut picked = Vec::new();
        let mut used = BTreeSet::new();
        for cand in candidates {
            if picked.len() == m {
                break;
            }
            if let Some(c) = index.cluster_of(&cand) {
                if used.insert(c) {
                    picked.push(cand);
                }
            }
        }
        prediction.insert(anaphor.clone(), picked, None);
    }
    Ok(prediction)
}

/// Scores every candidate uniformly at random and applies the selection
/// rule used by the trained models. Deterministic per seed.
pub fn baseline_random(
    doc: &Document,
    window: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionSet> {
    let index = DocIndex::new(doc);
    let cluster_of = index.cluster_assignment();
    let mut prediction = PredictionSet::new(&doc.doc_id);
    let mut anaphors: Vec<&MentionId> = doc.split_anaphors.keys().collect();
    anaphors.sort_by_key(|id| index.order_position(id).unwrap_or(usize::MAX));
    for anaphor in anaphors {
        let candidates = candidate_antecedents_indexed(&index, anaphor, window)?;
        let scores: Vec<PairScore> = candidates
            .into_iter()
            .map(|cand| {
                let s: f64 = rng.random::<f64>();
                let logit = (s / (1.0 - s)).ln();
                PairScore {
                    anaphor: anaphor.clone(),
                    candidate: cand,
                    logit,
                    prob: s,
                }
            })
            .collect();
        let picked = select_antecedents(&doc.doc_id, anaphor, &scores, &cluster_of)?;
        let probs = picked
            .iter()
            .map(|id| {
                scores
                    .iter()
                    .find(|s| &s.candidate == id)
                    .map(|s| s.prob)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        prediction.insert(anaphor.clone(), picked, Some(probs));
    }
    Ok(prediction)
}

/// recent-m over a whole corpus.
pub fn baseline_recent_corpus(corpus: &Corpus, m: usize) -> Result<Vec<PredictionSet>> {
    corpus
        .documents
        .iter()
        .map(|d| baseline_recent_m(d, m))
        .collect()
}

/// Random baseline over a whole corpus, one RNG stream for all documents.
pub fn baseline_random_corpus(corpus: &Corpus, seed: u64) -> Result<Vec<PredictionSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .documents
        .iter()
        .map(|d| baseline_random(d, DEFAULT_CANDIDATE_WINDOW, &mut rng))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    doc_id: String,
    anaphor: MentionId,
    antecedents: Vec<MentionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
}

/// Writes predictions as JSONL, one record per anaphor.
pub fn write_predictions(preds: &[PredictionSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    for pred in preds {
        for (anaphor, antecedents) in &pred.antecedents {
            let record = PredictionRecord {
                doc_id: pred.doc_id.clone(),
                anaphor: anaphor.clone(),
                antecedents: antecedents.clone(),
                scores: pred.scores.get(anaphor).cloned(),
            };
            let line = serde_json::to_string(&record).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: e.to_string(),
            })?;
            writeln!(w, "{line}").map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Reads predictions grouped by document, preserving first-seen order.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionSet>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut by_doc: BTreeMap<String, PredictionSet> = BTreeMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !by_doc.contains_key(&record.doc_id) {
            order.push(record.doc_id.clone());
        }
        by_doc
            .entry(record.doc_id.clone())
            .or_insert_with(|| PredictionSet::new(&record.doc_id))
            .insert(record.anaphor, record.antecedents, record.scores);
    }
    Ok(order.into_iter().map(|id| by_doc.remove(&id).unwrap()).collect())
}
