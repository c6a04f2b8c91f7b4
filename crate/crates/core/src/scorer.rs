//! Pairwise antecedent scoring and selection.
//!
//! A pair of mention representations is scored by a feed-forward network
//! over `[M_i, M_j, M_i * M_j, distance-embedding]` (antecedent block
//! first, `*` elementwise). The logit `r` maps to a probability through
//! the exact logistic `s = 1 / (1 + e^-r)`.
//!
//! Training optimizes the marginal log-likelihood of all correct
//! antecedents, with candidate scores softmax-normalized over the
//! candidate window plus a dummy antecedent whose logit is fixed at zero;
//! a candidate is correct when it lies in the same gold single-antecedent
//! cluster as any gold antecedent. Anaphors with no correct candidate in
//! the window, and mentions that are not split anaphors, assign all
//! probability mass to the dummy.
//!
//! At test time the dummy is dropped and two to five cluster-distinct
//! antecedents are selected: every candidate scoring above 0.5 in rank
//! order (skipping represented clusters, capped at five), with the top
//! two as a fallback when fewer than two clear the threshold.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::MentionId;
use crate::encoder::distance_bucket;
use crate::nn::{ParamId, Params, Tape, VarId};
use crate::{Error, Result};

/// Selection bounds and threshold.
pub const SELECT_MIN: usize = 2;
pub const SELECT_MAX: usize = 5;
pub const SELECT_THRESHOLD: f64 = 0.5;

/// Scorer parameter handles.
#[derive(Debug, Clone)]
pub struct ScorerLayout {
    pub dist_emb: ParamId,
    pub hidden: Vec<(ParamId, ParamId)>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub dist_dim: usize,
    pub pair_dim: usize,
}

/// Registers scorer parameters: `layers` hidden layers of `hidden` units
/// with rectifier nonlinearities, then a scalar output.
pub fn build_scorer(
    params: &mut Params,
    mention_dim: usize,
    dist_dim: usize,
    hidden: usize,
    layers: usize,
    rng: &mut impl Rng,
) -> ScorerLayout {
    let pair_dim = 3 * mention_dim + dist_dim;
    let dist_emb = params.add_embedding("dist.emb", crate::encoder::NUM_BUCKETS, dist_dim, rng);
    let mut hidden_params = Vec::new();
    let mut in_dim = pair_dim;
    for layer in 0..layers {
        let w = params.add_xavier(&format!("ffnn.{layer}.w"), hidden, in_dim, rng);
        let b = params.add_zeros(&format!("ffnn.{layer}.b"), hidden, 1);
        hidden_params.push((w, b));
        in_dim = hidden;
    }
    let out_w = params.add_xavier("ffnn.out.w", 1, in_dim, rng);
    let out_b = params.add_zeros("ffnn.out.b", 1, 1);
    ScorerLayout {
        dist_emb,
        hidden: hidden_params,
        out_w,
        out_b,
        dist_dim,
        pair_dim,
    }
}

/// `[M_antecedent, M_anaphor, product, distance-embedding]`.
///
/// `mention_distance` counts positions back in document mention order;
/// the nearest candidate has distance 1.
pub fn pair_repr(
    tape: &mut Tape,
    params: &Params,
    sc: &ScorerLayout,
    m_antecedent: VarId,
    m_anaphor: VarId,
    mention_distance: usize,
) -> Result<VarId> {
    let bucket = distance_bucket(mention_distance)?;
    let prod = tape.mul(m_antecedent, m_anaphor);
    let demb = tape.param_row(params, sc.dist_emb, bucket);
    Ok(tape.concat(&[m_antecedent, m_anaphor, prod, demb]))
}

/// Feed-forward scalar logit `r` for one pair representation.
pub fn pair_logit(
    tape: &mut Tape,
    params: &Params,
    sc: &ScorerLayout,
    pair: VarId,
) -> Result<VarId> {
    let mut h = pair;
    for (w, b) in &sc.hidden {
        let a = tape.affine(params, *w, *b, h);
        h = tape.relu(a);
    }
    let out = tape.affine(params, sc.out_w, sc.out_b, h);
    if !tape.value(out)[0].is_finite() {
        return Err(Error::NonFinite {
            context: "pair scorer output".to_string(),
        });
    }
    Ok(out)
}

/// Exact logistic `s = 1 / (1 + e^-r)`.
pub fn pair_prob(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

/// Logit of the dummy antecedent; fixed, not trained.
pub const EPSILON_LOGIT: f64 = 0.0;

/// Correctness mask over `candidates` plus the dummy antecedent (last).
///
/// A candidate is correct when its cluster equals the cluster of any gold
/// antecedent; when the mention is not a split anaphor or no candidate
/// matches, only the dummy is correct.
pub fn correct_candidates(
    candidates: &[MentionId],
    gold_antecedents: Option<&BTreeSet<MentionId>>,
    cluster_of: &BTreeMap<MentionId, usize>,
) -> Vec<bool> {
    let mut mask = vec![false; candidates.len() + 1];
    if let Some(gold) = gold_antecedents {
        let gold_clusters: BTreeSet<usize> = gold
            .iter()
            .filter_map(|id| cluster_of.get(id).copied())
            .collect();
        for (i, c) in candidates.iter().enumerate() {
            if let Some(cluster) = cluster_of.get(c) {
                if gold_clusters.contains(cluster) {
                    mask[i] = true;
                }
            }
        }
    }
    if !mask.iter().any(|m| *m) {
        let last = mask.len() - 1;
        mask[last] = true;
    }
    mask
}

/// Marginal log-likelihood loss for one anaphor.
///
/// `logits` are the scalar candidate logit nodes in candidate order; the
/// dummy logit is appended as a constant. `correct` must cover candidates
/// plus the dummy, as produced by [`correct_candidates`].
pub fn marginal_loss(
    tape: &mut Tape,
    candidate_logits: &[VarId],
    epsilon_logit: f64,
    correct: Vec<bool>,
) -> VarId {
    assert_eq!(candidate_logits.len() + 1, correct.len());
    let eps = tape.scalar(epsilon_logit);
    let mut all: Vec<VarId> = candidate_logits.to_vec();
    all.push(eps);
    let stacked = tape.stack_scalars(&all);
    tape.marginal_nll(stacked, correct)
}

/// One scored candidate antecedent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub anaphor: MentionId,
    pub candidate: MentionId,
    pub logit: f64,
    pub prob: f64,
}

impl PairScore {
    pub fn new(anaphor: MentionId, candidate: MentionId, logit: f64) -> Self {
        let prob = pair_prob(logit);
        PairScore {
            anaphor,
            candidate,
            logit,
            prob,
        }
    }
}

/// Applies the two-to-five selection rule to one anaphor's scores.
///
/// `scores` must be in candidate order (nearest first), which breaks
/// probability ties deterministically in favour of nearer candidates.
pub fn select_antecedents(
    doc_id: &str,
    anaphor: &MentionId,
    scores: &[PairScore],
    cluster_of: &BTreeMap<MentionId, usize>,
) -> Result<Vec<MentionId>> {
    let mut ranked: Vec<&PairScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.prob.partial_cmp(&a.prob).unwrap_or(std::cmp::Ordering::Equal));

    let mut distinct = BTreeSet::new();
    for s in &ranked {
        let Some(c) = cluster_of.get(&s.candidate) else {
            return Err(Error::UnknownMention {
                doc_id: doc_id.to_string(),
                id: s.candidate.to_string(),
            });
        };
        distinct.insert(*c);
    }
    if distinct.len() < SELECT_MIN {
        return Err(Error::TooFewCandidates {
            doc_id: doc_id.to_string(),
            anaphor: anaphor.to_string(),
        });
    }

    let mut taken: Vec<MentionId> = Vec::new();
    let mut used: BTreeSet<usize> = BTreeSet::new();
    for s in &ranked {
        if taken.len() == SELECT_MAX {
            break;
        }
        if s.prob <= SELECT_THRESHOLD {
            break;
        }
        let cluster = cluster_of[&s.candidate];
        if used.insert(cluster) {
            taken.push(s.candidate.clone());
        }
    }
    if taken.len() < SELECT_MIN {
        // Top two of the ranking, cluster-distinct, threshold ignored.
        taken.clear();
        used.clear();
        for s in &ranked {
            if taken.len() == SELECT_MIN {
                break;
            }
            let cluster = cluster_of[&s.candidate];
            if used.insert(cluster) {
                taken.push(s.candidate.clone());
            }
        }
    }
    Ok(taken)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mid(s: &str) -> MentionId {
        MentionId::from(s)
    }

    fn scorer_for(mention_dim: usize, seed: u64) -> (Params, ScorerLayout) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let sc = build_scorer(&mut params, mention_dim, 4, 6, 2, &mut rng);
        (params, sc)
    }

    #[test]
    fn pair_repr_orders_blocks_and_sizes() {
        let (params, sc) = scorer_for(28, 1);
        assert_eq!(sc.pair_dim, 88);
        let mut tape = Tape::new();
        let v: Vec<f64> = (0..28).map(|i| 0.1 * i as f64).collect();
        let a = tape.constant(v.clone());
        let b = tape.constant(v.clone());
        let p = pair_repr(&mut tape, &params, &sc, a, b, 1).unwrap();
        assert_eq!(tape.len(p), 88);
        let pv = tape.value(p);
        assert_eq!(&pv[..28], &v[..]);
        assert_eq!(&pv[28..56], &v[..]);
        // Identical representations: the product block is v*v.
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        assert_eq!(&pv[56..84], &sq[..]);
        assert_eq!(&pv[84..], &params.data(sc.dist_emb)[..4]);
    }

    #[test]
    fn distances_one_and_hundred_use_distinct_buckets() {
        let (params, sc) = scorer_for(8, 2);
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.0; 8]);
        let b = tape.constant(vec![0.0; 8]);
        let near = pair_repr(&mut tape, &params, &sc, a, b, 1).unwrap();
        let far = pair_repr(&mut tape, &params, &sc, a, b, 100).unwrap();
        let tail = |v: &[f64]| v[v.len() - 4..].to_vec();
        assert_ne!(tail(tape.value(near)), tail(tape.value(far)));
    }

    #[test]
    fn zero_parameters_give_zero_logit() {
        let mut params = Params::new();
        let sc = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut sc = build_scorer(&mut params, 8, 4, 6, 2, &mut rng);
            // Zero every scorer weight.
            for id in params.ids().collect::<Vec<_>>() {
                params.entry_mut(id).data.fill(0.0);
            }
            sc.dist_dim = 4;
            sc
        };
        let mut tape = Tape::new();
        let a = tape.constant(vec![0.3; 8]);
        let b = tape.constant(vec![-0.7; 8]);
        let p = pair_repr(&mut tape, &params, &sc, a, b, 2).unwrap();
        let r = pair_logit(&mut tape, &params, &sc, p).unwrap();
        assert_eq!(tape.value(r)[0], 0.0);
    }

    #[test]
    fn logit_matches_independent_matrix_arithmetic() {
        let (params, sc) = scorer_for(6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut tape = Tape::new();
        let a_v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b_v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = tape.constant(a_v.clone());
        let b = tape.constant(b_v.clone());
        let p = pair_repr(&mut tape, &params, &sc, a, b, 3).unwrap();
        let r1 = pair_logit(&mut tape, &params, &sc, p).unwrap();
        let r2 = pair_logit(&mut tape, &params, &sc, p).unwrap();
        assert_eq!(tape.value(r1)[0], tape.value(r2)[0]);

        // Re-evaluate with plain loops over the raw parameter data.
        let mut x: Vec<f64> = Vec::new();
        x.extend(&a_v);
        x.extend(&b_v);
        x.extend(a_v.iter().zip(&b_v).map(|(p, q)| p * q));
        x.extend(&params.data(sc.dist_emb)[2 * 4..3 * 4]); // bucket for distance 3
        let matvec = |w: &[f64], b: &[f64], x: &[f64], rows: usize| -> Vec<f64> {
            let cols = x.len();
            (0..rows)
                .map(|i| {
                    w[i * cols..(i + 1) * cols]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + b[i]
                })
                .collect()
        };
        let mut h = x;
        for (w, b) in &sc.hidden {
            let rows = params.entry(*w).rows;
            h = matvec(params.data(*w), params.data(*b), &h, rows)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
        }
        let expected = matvec(params.data(sc.out_w), params.data(sc.out_b), &h, 1)[0];
        let got = tape.value(r1)[0];
        assert!(
            (got - expected).abs() / expected.abs().max(1.0) < 1e-6,
            "got {got}, expected {expected}"
        );
    }

    #[test]
    fn logistic_closed_forms() {
        assert_eq!(pair_prob(0.0), 0.5);
        assert!((pair_prob(3.0f64.ln()) - 0.75).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let r: f64 = rng.random_range(-20.0..20.0);
            assert!((pair_prob(r) + pair_prob(-r) - 1.0).abs() < 1e-12);
        }
    }

    fn singleton_clusters(ids: &[&str]) -> BTreeMap<MentionId, usize> {
        ids.iter()
            .enumerate()
            .map(|(i, s)| (mid(s), i))
            .collect()
    }

    #[test]
    fn loss_uses_dummy_when_nothing_matches() {
        let clusters = singleton_clusters(&["c1", "c2", "g"]);
        // Candidate c1 in the gold cluster of antecedent c1 itself.
        let mask = correct_candidates(
            &[mid("c1"), mid("c2")],
            Some(&BTreeSet::from([mid("c1")])),
            &clusters,
        );
        assert_eq!(mask, vec![true, false, false]);
        // Gold antecedent outside the window: dummy takes over.
        let mask = correct_candidates(
            &[mid("c1"), mid("c2")],
            Some(&BTreeSet::from([mid("g")])),
            &clusters,
        );
        assert_eq!(mask, vec![false, false, true]);
        // Not a split anaphor.
        let mask = correct_candidates(&[mid("c1"), mid("c2")], None, &clusters);
        assert_eq!(mask, vec![false, false, true]);
        // No candidates at all: loss over the dummy alone is zero.
        let mask = correct_candidates(&[], None, &clusters);
        assert_eq!(mask, vec![true]);
        let mut tape = Tape::new();
        let loss = marginal_loss(&mut tape, &[], EPSILON_LOGIT, mask);
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn loss_closed_forms_with_dummy() {
        let mut tape = Tape::new();
        let c1 = tape.scalar(0.0);
        let loss = marginal_loss(&mut tape, &[c1], 0.0, vec![true, false]);
        assert!((tape.value(loss)[0] - 0.6931).abs() < 1e-4);

        let c1 = tape.scalar(0.0);
        let c2 = tape.scalar(0.0);
        let loss = marginal_loss(&mut tape, &[c1, c2], 0.0, vec![true, true, false]);
        assert!((tape.value(loss)[0] - 0.4055).abs() < 1e-4);

        let c1 = tape.scalar(0.0);
        let c2 = tape.scalar(0.0);
        let loss = marginal_loss(&mut tape, &[c1, c2], 30.0, vec![false, false, true]);
        assert!(tape.value(loss)[0] < 1e-10);
    }

    #[test]
    fn raising_a_correct_logit_never_raises_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let correct = vec![true, false, true, false, false];
            let loss_at = |bump: f64| {
                let mut tape = Tape::new();
                let vars: Vec<VarId> = logits
                    .iter()
                    .enumerate()
                    .map(|(i, l)| tape.scalar(if i == 0 { l + bump } else { *l }))
                    .collect();
                let loss = marginal_loss(&mut tape, &vars, 0.0, correct.clone());
                tape.value(loss)[0]
            };
            let base = loss_at(0.0);
            let bumped = loss_at(0.5);
            assert!(bumped <= base + 1e-12, "loss rose from {base} to {bumped}");
            assert!(base >= 0.0);
        }
    }

    fn score(anaphor: &str, cand: &str, prob: f64) -> PairScore {
        let logit = (prob / (1.0 - prob)).ln();
        PairScore {
            anaphor: mid(anaphor),
            candidate: mid(cand),
            logit,
            prob,
        }
    }

    #[test]
    fn selection_takes_up_to_five_above_threshold() {
        let clusters = singleton_clusters(&["c1", "c2", "c3", "c4", "c5", "c6"]);
        let scores: Vec<PairScore> = [0.9, 0.7, 0.6, 0.55, 0.52, 0.51]
            .iter()
            .enumerate()
            .map(|(i, p)| score("a", &format!("c{}", i + 1), *p))
            .collect();
        let picked = select_antecedents("d", &mid("a"), &scores, &clusters).unwrap();
        assert_eq!(
            picked,
            vec![mid("c1"), mid("c2"), mid("c3"), mid("c4"), mid("c5")]
        );
    }

    #[test]
    fn selection_falls_back_to_top_two() {
        let clusters = singleton_clusters(&["c1", "c2", "c3"]);
        let scores = vec![
            score("a", "c1", 0.4),
            score("a", "c2", 0.3),
            score("a", "c3", 0.2),
        ];
        let picked = select_antecedents("d", &mid("a"), &scores, &clusters).unwrap();
        assert_eq!(picked, vec![mid("c1"), mid("c2")]);
    }

    #[test]
    fn selection_skips_cluster_repeats() {
        let mut clusters = BTreeMap::new();
        clusters.insert(mid("c1"), 0);
        clusters.insert(mid("c2"), 0); // same cluster as c1
        clusters.insert(mid("c3"), 1);
        let scores = vec![
            score("a", "c1", 0.9),
            score("a", "c2", 0.8),
            score("a", "c3", 0.7),
        ];
        let picked = select_antecedents("d", &mid("a"), &scores, &clusters).unwrap();
        assert_eq!(picked, vec![mid("c1"), mid("c3")]);
    }

    #[test]
    fn selection_needs_two_distinct_clusters() {
        let mut clusters = BTreeMap::new();
        clusters.insert(mid("c1"), 0);
        clusters.insert(mid("c2"), 0);
        let scores = vec![score("a", "c1", 0.9), score("a", "c2", 0.8)];
        assert!(matches!(
            select_antecedents("d", &mid("a"), &scores, &clusters),
            Err(Error::TooFewCandidates { .. })
        ));
    }

    #[test]
    fn selection_depends_only_on_ranking_and_threshold_side() {
        let clusters = singleton_clusters(&["c1", "c2", "c3", "c4"]);
        let probs = [0.85, 0.7, 0.45, 0.2];
        let scores: Vec<PairScore> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| score("a", &format!("c{}", i + 1), *p))
            .collect();
        let base = select_antecedents("d", &mid("a"), &scores, &clusters).unwrap();
        // Monotone transform that keeps each score on its threshold side.
        let transformed: Vec<PairScore> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let squeezed = 0.5 + (p - 0.5) * 0.2;
                score("a", &format!("c{}", i + 1), squeezed)
            })
            .collect();
        let after = select_antecedents("d", &mid("a"), &transformed, &clusters).unwrap();
        assert_eq!(base, after);
    }
}
