//! Seeded synthetic corpora for desk-scale testing.
//!
//! Every entity gets a marker token (`e17`); a mention of the entity is
//! that single token. A split anaphor spans the marker tokens of its
//! antecedent entities, so antecedent mentions share a marker token with
//! their anaphor and a model can learn the link lexically. Optional layers
//! add plural cluster-mates (for anaphor extension), element-of bridging
//! links, and noisy crowd annotations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    validate_document, BridgingLink, BridgingRelation, Corpus, CrowdAnnotation, Document, Mention,
    MentionId, QualityTier,
};
use crate::{Error, Result};

/// Configuration of the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub documents: usize,
    pub tokens_per_doc: usize,
    /// Probability that a token position starts a mention.
    pub mention_density: f64,
    /// Probability that an eligible mention site becomes a split anaphor.
    pub split_anaphor_rate: f64,
    /// Weights over antecedent counts 2, 3, 4, 5.
    pub antecedent_weights: [f64; 4],
    /// Number of distinct filler words.
    pub vocabulary: usize,
    /// Number of distinct entity marker tokens shared across documents.
    pub marker_pool: usize,
    /// Probability of re-mentioning an existing entity instead of
    /// introducing a new one.
    pub entity_reuse: f64,
    /// Probability that a split anaphor later gets a coreferent
    /// cluster-mate mention.
    pub anaphor_cluster_rate: f64,
    /// Probability of emitting a bridging link at an eligible site.
    pub bridging_rate: f64,
    /// Raw crowd annotations generated per split anaphor (0 = no crowd layer).
    pub crowd_annotators: usize,
    /// Probability that a crowd annotation is corrupted.
    pub crowd_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            documents: 20,
            tokens_per_doc: 80,
            mention_density: 0.25,
            split_anaphor_rate: 0.2,
            antecedent_weights: [0.6, 0.25, 0.1, 0.05],
            vocabulary: 50,
            marker_pool: 60,
            entity_reuse: 0.3,
            anaphor_cluster_rate: 0.15,
            bridging_rate: 0.0,
            crowd_annotators: 0,
            crowd_noise: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn check(&self) -> Result<()> {
        let unit = |v: f64, what: &str| {
            if !(0.0..=1.0).contains(&v) {
                Err(Error::InfeasibleConfig(format!("{what} must be in [0,1], got {v}")))
            } else {
                Ok(())
            }
        };
        unit(self.mention_density, "mention_density")?;
        unit(self.split_anaphor_rate, "split_anaphor_rate")?;
        unit(self.entity_reuse, "entity_reuse")?;
        unit(self.anaphor_cluster_rate, "anaphor_cluster_rate")?;
        unit(self.bridging_rate, "bridging_rate")?;
        unit(self.crowd_noise, "crowd_noise")?;
        if self.antecedent_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InfeasibleConfig(
                "antecedent_weights must be non-negative".into(),
            ));
        }
        if self.antecedent_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InfeasibleConfig(
                "antecedent_weights must not all be zero".into(),
            ));
        }
        if self.vocabulary == 0 {
            return Err(Error::InfeasibleConfig("vocabulary must be at least 1".into()));
        }
        if self.mention_density > 0.0 && self.marker_pool == 0 {
            return Err(Error::InfeasibleConfig(
                "marker_pool must be at least 1 when mentions are generated".into(),
            ));
        }
        Ok(())
    }
}

struct PlacedMention {
    id: MentionId,
    start: usize,
    end: usize,
    entity: usize,
}

struct Entity {
    /// Markers naming this entity; one for singular entities, several for
    /// the plural entity introduced by a split anaphor.
    markers: Vec<String>,
    singular: bool,
    mention_positions: Vec<usize>, // indices into `placed`
}

/// Generates a corpus deterministically from `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Corpus::new("synth", QualityTier::Gold);
    for di in 0..config.documents {
        let doc = generate_document(config, &format!("d{di:04}"), &mut rng)?;
        debug_assert!(validate_document(&doc).is_empty());
        corpus.documents.push(doc);
    }
    // Generator bugs must never leak invalid data into tests.
    for doc in &corpus.documents {
        let violations = validate_document(doc);
        if !violations.is_empty() {
            return Err(Error::Validation {
                doc_id: doc.doc_id.clone(),
                violations,
            });
        }
    }
    Ok(corpus)
}

fn draw_antecedent_count(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        r -= w;
        if r <= 0.0 {
            return i + 2;
        }
    }
    5
}

fn generate_document(config: &SynthConfig, doc_id: &str, rng: &mut ChaCha8Rng) -> Result<Document> {
    let t_total = config.tokens_per_doc;
    let mut tokens: Vec<String> = Vec::with_capacity(t_total);
    let mut placed: Vec<PlacedMention> = Vec::new();
    let mut entities: Vec<Entity> = Vec::new();
    let mut split_anaphors: BTreeMap<MentionId, BTreeSet<MentionId>> = BTreeMap::new();
    let mut bridging: Vec<BridgingLink> = Vec::new();
    let mut repeat_queue: VecDeque<usize> = VecDeque::new(); // entity indices

    // Per-document marker assignment: shuffled pool, consumed in order.
    let mut marker_order: Vec<usize> = (0..config.marker_pool).collect();
    for i in (1..marker_order.len()).rev() {
        marker_order.swap(i, rng.random_range(0..=i));
    }
    let mut next_marker = 0usize;

    let mut mention_counter = 0usize;
    let mut new_mention_id = move || {
        let id = MentionId::new(format!("m{mention_counter:03}"));
        mention_counter += 1;
        id
    };

    while tokens.len() < t_total {
        if rng.random::<f64>() >= config.mention_density {
            tokens.push(format!("w{}", rng.random_range(0..config.vocabulary)));
            continue;
        }
        let pos = tokens.len();

        // A queued plural repeat takes priority half the time.
        if !repeat_queue.is_empty() && rng.random::<f64>() < 0.5 {
            let entity = repeat_queue[0];
            let k = entities[entity].markers.len();
            if pos + k <= t_total {
                repeat_queue.pop_front();
                let id = new_mention_id();
                for marker in &entities[entity].markers {
                    tokens.push(marker.clone());
                }
                entities[entity].mention_positions.push(placed.len());
                let plural_mention = placed.len();
                placed.push(PlacedMention {
                    id: id.clone(),
                    start: pos,
                    end: pos + k - 1,
                    entity,
                });
                maybe_bridge_inverse(config, rng, &placed, plural_mention, &mut bridging);
                continue;
            }
        }

        // Split anaphor over k preceding singular entities.
        if rng.random::<f64>() < config.split_anaphor_rate {
            let k = draw_antecedent_count(&config.antecedent_weights, rng);
            let available: Vec<usize> = (0..entities.len())
                .filter(|&e| entities[e].singular && !entities[e].mention_positions.is_empty())
                .collect();
            if available.len() >= k && pos + k <= t_total {
                let chosen = sample(rng, available.len(), k);
                let mut antecedents = BTreeSet::new();
                let mut markers = Vec::with_capacity(k);
                for ci in chosen.iter() {
                    let entity = &entities[available[ci]];
                    let last = *entity.mention_positions.last().unwrap();
                    antecedents.insert(placed[last].id.clone());
                    markers.push(entity.markers[0].clone());
                }
                let id = new_mention_id();
                for marker in &markers {
                    tokens.push(marker.clone());
                }
                let plural_entity = entities.len();
                entities.push(Entity {
                    markers,
                    singular: false,
                    mention_positions: vec![placed.len()],
                });
                let plural_mention = placed.len();
                placed.push(PlacedMention {
                    id: id.clone(),
                    start: pos,
                    end: pos + k - 1,
                    entity: plural_entity,
                });
                split_anaphors.insert(id, antecedents);
                if rng.random::<f64>() < config.anaphor_cluster_rate {
                    repeat_queue.push_back(plural_entity);
                }
                maybe_bridge_inverse(config, rng, &placed, plural_mention, &mut bridging);
                continue;
            }
        }

        // Plain singular entity mention, reused or fresh.
        let reusable: Vec<usize> = (0..entities.len()).filter(|&e| entities[e].singular).collect();
        let entity = if !reusable.is_empty() && rng.random::<f64>() < config.entity_reuse {
            reusable[rng.random_range(0..reusable.len())]
        } else if next_marker < marker_order.len() {
            let marker = format!("e{}", marker_order[next_marker]);
            next_marker += 1;
            entities.push(Entity {
                markers: vec![marker],
                singular: true,
                mention_positions: Vec::new(),
            });
            entities.len() - 1
        } else if !reusable.is_empty() {
            // Marker pool exhausted for this document.
            reusable[rng.random_range(0..reusable.len())]
        } else {
            tokens.push(format!("w{}", rng.random_range(0..config.vocabulary)));
            continue;
        };
        let id = new_mention_id();
        tokens.push(entities[entity].markers[0].clone());
        entities[entity].mention_positions.push(placed.len());
        let singular_mention = placed.len();
        placed.push(PlacedMention {
            id,
            start: pos,
            end: pos,
            entity,
        });
        // element-of: a later singular is an element of an earlier plural.
        if config.bridging_rate > 0.0 && rng.random::<f64>() < config.bridging_rate {
            let plurals: Vec<usize> = (0..singular_mention)
                .filter(|&p| !entities[placed[p].entity].singular)
                .collect();
            if !plurals.is_empty() {
                let antecedent = plurals[rng.random_range(0..plurals.len())];
                bridging.push(BridgingLink {
                    anaphor: placed[singular_mention].id.clone(),
                    antecedent: placed[antecedent].id.clone(),
                    relation: BridgingRelation::ElementOf,
                });
            }
        }
    }
    tokens.truncate(t_total);

    let mentions: Vec<Mention> = placed
        .iter()
        .map(|p| Mention {
            id: p.id.clone(),
            start: p.start,
            end: p.end,
        })
        .collect();
    let clusters: Vec<Vec<MentionId>> = entities
        .iter()
        .filter(|e| !e.mention_positions.is_empty())
        .map(|e| {
            e.mention_positions
                .iter()
                .map(|&pi| placed[pi].id.clone())
                .collect()
        })
        .collect();

    let crowd = generate_crowd(config, rng, &placed, &split_anaphors);

    Ok(Document {
        doc_id: doc_id.to_string(),
        tokens,
        mentions,
        clusters,
        split_anaphors,
        bridging,
        crowd,
    })
}

/// element-of-inverse: an occasional plural mention bridging back to one
/// earlier singular, plus a rare `other` link that builders must ignore.
fn maybe_bridge_inverse(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    placed: &[PlacedMention],
    plural_mention: usize,
    bridging: &mut Vec<BridgingLink>,
) {
    if config.bridging_rate == 0.0 || plural_mention == 0 {
        return;
    }
    if rng.random::<f64>() < config.bridging_rate {
        let antecedent = rng.random_range(0..plural_mention);
        bridging.push(BridgingLink {
            anaphor: placed[plural_mention].id.clone(),
            antecedent: placed[antecedent].id.clone(),
            relation: BridgingRelation::ElementOfInverse,
        });
    }
    if rng.random::<f64>() < config.bridging_rate / 4.0 {
        let antecedent = rng.random_range(0..plural_mention);
        bridging.push(BridgingLink {
            anaphor: placed[plural_mention].id.clone(),
            antecedent: placed[antecedent].id.clone(),
            relation: BridgingRelation::Other,
        });
    }
}

fn generate_crowd(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    placed: &[PlacedMention],
    split_anaphors: &BTreeMap<MentionId, BTreeSet<MentionId>>,
) -> Vec<CrowdAnnotation> {
    if config.crowd_annotators == 0 {
        return Vec::new();
    }
    let position: BTreeMap<&MentionId, usize> = placed
        .iter()
        .enumerate()
        .map(|(i, p)| (&p.id, i))
        .collect();
    let mut crowd = Vec::new();
    for (anaphor, gold) in split_anaphors {
        let anaphor_pos = position[anaphor];
        for ai in 0..config.crowd_annotators {
            let mut antecedents = gold.clone();
            if rng.random::<f64>() < config.crowd_noise && anaphor_pos >= 3 {
                // Swap one gold antecedent for a random earlier mention.
                let victim_idx = rng.random_range(0..antecedents.len());
                let victim = antecedents.iter().nth(victim_idx).unwrap().clone();
                for _ in 0..8 {
                    let replacement = &placed[rng.random_range(0..anaphor_pos)].id;
                    if !antecedents.contains(replacement) {
                        antecedents.remove(&victim);
                        antecedents.insert(replacement.clone());
                        break;
                    }
                }
            }
            crowd.push(CrowdAnnotation {
                annotator: format!("ann{ai}"),
                anaphor: anaphor.clone(),
                antecedents,
            });
        }
        // Occasional spurious annotation on a non-anaphor mention.
        if rng.random::<f64>() < config.crowd_noise && anaphor_pos >= 3 {
            let target = &placed[rng.random_range(2..anaphor_pos)];
            if !split_anaphors.contains_key(&target.id) {
                let target_pos = position[&target.id];
                if target_pos >= 2 {
                    let picks = sample(rng, target_pos, 2);
                    let antecedents: BTreeSet<MentionId> = picks
                        .iter()
                        .map(|i| placed[i].id.clone())
                        .collect();
                    crowd.push(CrowdAnnotation {
                        annotator: "ann0".to_string(),
                        anaphor: target.id.clone(),
                        antecedents,
                    });
                }
            }
        }
    }
    crowd
}

/// Histogram of gold antecedent counts over all anaphors of a corpus.
pub fn antecedent_count_histogram(corpus: &Corpus) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for doc in &corpus.documents {
        for antecedents in doc.split_anaphors.values() {
            *hist.entry(antecedents.len()).or_insert(0) += 1;
        }
    }
    hist
}
