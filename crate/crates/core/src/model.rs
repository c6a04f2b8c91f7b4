//! The antecedent-ranking model: configuration, parameters, vocabulary,
//! and the forward passes for training and prediction.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    candidate_antecedents_indexed, Corpus, DocIndex, Document, MentionId,
    DEFAULT_CANDIDATE_WINDOW,
};
use crate::encoder::{
    build_encoder, embed_tokens, mention_dim, mention_repr, EncoderLayout, ProviderConfig,
    Resources, TokenRepr, Vocab,
};
use crate::eval::PredictionSet;
use crate::nn::{Params, SavedParam, Tape, VarId};
use crate::scorer::{
    build_scorer, correct_candidates, marginal_loss, pair_logit, pair_repr, select_antecedents,
    PairScore, ScorerLayout, EPSILON_LOGIT,
};
use crate::Result;

/// Model hyperparameters.
///
/// The defaults mirror the cited baseline configuration (trainable lookup
/// plus character convolution, one BiLSTM layer of 200 units per
/// direction, two 150-unit hidden layers in the pair scorer, a
/// 250-candidate window); desk-scale tests shrink them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub providers: Vec<ProviderConfig>,
    pub lstm_hidden: usize,
    pub width_dim: usize,
    pub dist_dim: usize,
    pub ffnn_hidden: usize,
    pub ffnn_layers: usize,
    pub window: usize,
    /// Train on non-anaphor mentions as dummy-antecedent examples.
    pub train_non_anaphors: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            providers: vec![
                ProviderConfig::TrainableLookup { dim: 64 },
                ProviderConfig::CharConv {
                    char_dim: 16,
                    filters: 50,
                    widths: vec![3, 4, 5],
                },
            ],
            lstm_hidden: 200,
            width_dim: 20,
            dist_dim: 20,
            ffnn_hidden: 150,
            ffnn_layers: 2,
            window: DEFAULT_CANDIDATE_WINDOW,
            train_non_anaphors: true,
        }
    }
}

impl ModelConfig {
    pub fn mention_dim(&self) -> usize {
        mention_dim(2 * self.lstm_hidden, self.width_dim)
    }
}

/// Serialized model: configuration, vocabulary, and parameter data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Vec<SavedParam>,
}

/// A ranker with its parameters and frozen embedding resources.
pub struct Model {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub params: Params,
    pub encoder: EncoderLayout,
    pub scorer: ScorerLayout,
    pub resources: Resources,
}

/// Training loss of one document.
pub struct DocLoss {
    pub loss: VarId,
    /// Number of mentions that contributed a loss term.
    pub targets: usize,
}

/// Scores of all candidates of one anaphor, nearest candidate first.
pub struct AnaphorScores {
    pub anaphor: MentionId,
    pub scores: Vec<PairScore>,
}

impl Model {
    /// Initializes parameters seeded by `seed`, with the vocabulary built
    /// from `corpora`.
    pub fn new(cfg: ModelConfig, corpora: &[&Corpus], seed: u64) -> Result<Model> {
        let vocab = Vocab::build(corpora.iter().flat_map(|c| c.documents.iter()));
        Model::with_vocab(cfg, vocab, seed)
    }

    pub fn with_vocab(cfg: ModelConfig, vocab: Vocab, seed: u64) -> Result<Model> {
        let resources = Resources::load(&cfg.providers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let encoder = build_encoder(
            &mut params,
            &cfg.providers,
            cfg.lstm_hidden,
            cfg.width_dim,
            &vocab,
            &mut rng,
        );
        let scorer = build_scorer(
            &mut params,
            cfg.mention_dim(),
            cfg.dist_dim,
            cfg.ffnn_hidden,
            cfg.ffnn_layers,
            &mut rng,
        );
        Ok(Model {
            cfg,
            vocab,
            params,
            encoder,
            scorer,
            resources,
        })
    }

    pub fn to_saved(&self) -> SavedModel {
        SavedModel {
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            params: self.params.to_saved(),
        }
    }

    pub fn from_saved(saved: SavedModel) -> Result<Model> {
        let mut model = Model::with_vocab(saved.config, saved.vocab, 0)?;
        model.params.load_saved(&saved.params)?;
        Ok(model)
    }

    /// Token representations plus one mention representation per mention,
    /// keyed by document order position.
    fn encode_document<'d>(
        &self,
        tape: &mut Tape,
        doc: &'d Document,
        index: &DocIndex<'d>,
    ) -> Result<(TokenRepr, BTreeMap<usize, VarId>)> {
        let x = embed_tokens(tape, &self.params, &self.encoder, &self.vocab, &self.resources, doc)?;
        let mut mentions = BTreeMap::new();
        for (pos, m) in index.mentions_in_order().enumerate() {
            let var = mention_repr(tape, &self.params, &self.encoder, (m.start, m.end), &x)?;
            mentions.insert(pos, var);
        }
        Ok((x, mentions))
    }

    /// Candidate logits for one target mention, nearest candidate first.
    fn candidate_logits(
        &self,
        tape: &mut Tape,
        index: &DocIndex<'_>,
        mentions: &BTreeMap<usize, VarId>,
        target: &MentionId,
    ) -> Result<(Vec<MentionId>, Vec<VarId>)> {
        let candidates = candidate_antecedents_indexed(index, target, self.cfg.window)?;
        let target_pos = index.order_position(target)?;
        let m_target = mentions[&target_pos];
        let mut logits = Vec::with_capacity(candidates.len());
        for cand in &candidates {
            let cand_pos = index.order_position(cand)?;
            let distance = target_pos - cand_pos;
            let m_cand = mentions[&cand_pos];
            let pair = pair_repr(tape, &self.params, &self.scorer, m_cand, m_target, distance)?;
            let logit = pair_logit(tape, &self.params, &self.scorer, pair)?;
            logits.push(logit);
        }
        Ok((candidates, logits))
    }

    /// Summed marginal-likelihood loss over the document's training targets.
    ///
    /// Targets are all mentions when `train_non_anaphors` is set (mentions
    /// that are not split anaphors train the dummy antecedent), otherwise
    /// the split anaphors only.
    pub fn document_loss(&self, tape: &mut Tape, doc: &Document) -> Result<DocLoss> {
        let index = DocIndex::new(doc);
        let (_x, mentions) = self.encode_document(tape, doc, &index)?;
        let cluster_of = index.cluster_assignment();

        let targets: Vec<MentionId> = index
            .mentions_in_order()
            .map(|m| m.id.clone())
            .filter(|id| self.cfg.train_non_anaphors || doc.split_anaphors.contains_key(id))
            .collect();

        let mut losses = Vec::with_capacity(targets.len());
        for target in &targets {
            let (candidates, logits) = self.candidate_logits(tape, &index, &mentions, target)?;
            let mask = correct_candidates(
                &candidates,
                doc.split_anaphors.get(target),
                &cluster_of,
            );
            losses.push(marginal_loss(tape, &logits, EPSILON_LOGIT, mask));
        }
        let loss = tape.sum_scalars(&losses);
        Ok(DocLoss {
            loss,
            targets: targets.len(),
        })
    }

    /// Scores every gold split anaphor of a document.
    pub fn score_document(&self, doc: &Document) -> Result<Vec<AnaphorScores>> {
        let index = DocIndex::new(doc);
        let mut tape = Tape::new();
        let (_x, mentions) = self.encode_document(&mut tape, doc, &index)?;
        let mut anaphors: Vec<&MentionId> = doc.split_anaphors.keys().collect();
        anaphors.sort_by_key(|id| index.order_position(id).unwrap_or(usize::MAX));

        let mut out = Vec::with_capacity(anaphors.len());
        for anaphor in anaphors {
            let (candidates, logits) =
                self.candidate_logits(&mut tape, &index, &mentions, anaphor)?;
            let scores = candidates
                .into_iter()
                .zip(&logits)
                .map(|(cand, logit)| {
                    PairScore::new((*anaphor).clone(), cand, tape.value(*logit)[0])
                })
                .collect();
            out.push(AnaphorScores {
                anaphor: (*anaphor).clone(),
                scores,
            });
        }
        Ok(out)
    }

    /// Applies the selection rule to every gold anaphor.
    pub fn predict_document(&self, doc: &Document) -> Result<PredictionSet> {
        let index = DocIndex::new(doc);
        let cluster_of = index.cluster_assignment();
        let mut prediction = PredictionSet::new(&doc.doc_id);
        for scored in self.score_document(doc)? {
            let picked =
                select_antecedents(&doc.doc_id, &scored.anaphor, &scored.scores, &cluster_of)?;
            let probs: Vec<f64> = picked
                .iter()
                .map(|id| {
                    scored
                        .scores
                        .iter()
                        .find(|s| &s.candidate == id)
                        .map(|s| s.prob)
                        .unwrap_or(f64::NAN)
                })
                .collect();
            prediction.insert(scored.anaphor.clone(), picked, Some(probs));
        }
        Ok(prediction)
    }

    /// Predictions for a whole corpus, in document order.
    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<Vec<PredictionSet>> {
        corpus
            .documents
            .iter()
            .map(|d| self.predict_document(d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic, SynthConfig};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            providers: vec![ProviderConfig::TrainableLookup { dim: 6 }],
            lstm_hidden: 4,
            width_dim: 3,
            dist_dim: 3,
            ffnn_hidden: 8,
            ffnn_layers: 2,
            window: 250,
            train_non_anaphors: true,
        }
    }

    fn tiny_corpus(seed: u64) -> Corpus {
        generate_synthetic(&SynthConfig {
            seed,
            documents: 3,
            tokens_per_doc: 30,
            mention_density: 0.3,
            split_anaphor_rate: 0.4,
            antecedent_weights: [1.0, 0.0, 0.0, 0.0],
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn loss_is_finite_and_deterministic() {
        let corpus = tiny_corpus(3);
        let model = Model::new(tiny_config(), &[&corpus], 7).unwrap();
        let doc = &corpus.documents[0];
        let run = || {
            let mut tape = Tape::new();
            let dl = model.document_loss(&mut tape, doc).unwrap();
            tape.value(dl.loss)[0]
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert!(a >= 0.0);
    }

    #[test]
    fn document_loss_gradients_match_finite_differences() {
        let corpus = generate_synthetic(&SynthConfig {
            seed: 5,
            documents: 1,
            tokens_per_doc: 14,
            mention_density: 0.45,
            split_anaphor_rate: 0.5,
            antecedent_weights: [1.0, 0.0, 0.0, 0.0],
            marker_pool: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let doc = &corpus.documents[0];
        assert!(!doc.mentions.is_empty());
        let mut model = Model::new(tiny_config(), &[&corpus], 11).unwrap();

        let mut tape = Tape::new();
        let dl = model.document_loss(&mut tape, doc).unwrap();
        model.params.zero_grad();
        tape.backward(dl.loss, &mut model.params);
        let analytic: Vec<Vec<f64>> = model
            .params
            .ids()
            .map(|id| model.params.entry(id).grad.clone())
            .collect();

        let h = 1e-5;
        for id in model.params.ids().collect::<Vec<_>>() {
            let n = model.params.entry(id).data.len();
            // Sample a few coordinates per group to keep the test quick.
            for i in (0..n).step_by(n.div_ceil(7).max(1)) {
                let orig = model.params.entry(id).data[i];
                model.params.entry_mut(id).data[i] = orig + h;
                let mut t = Tape::new();
                let up = {
                    let dl = model.document_loss(&mut t, doc).unwrap();
                    t.value(dl.loss)[0]
                };
                model.params.entry_mut(id).data[i] = orig - h;
                let mut t = Tape::new();
                let down = {
                    let dl = model.document_loss(&mut t, doc).unwrap();
                    t.value(dl.loss)[0]
                };
                model.params.entry_mut(id).data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = analytic[id.0][i];
                let denom = fd.abs().max(an.abs()).max(1.0);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "{} [{i}]: fd={fd} analytic={an}",
                    model.params.entry(id).name
                );
            }
        }
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let corpus = tiny_corpus(9);
        let model = Model::new(tiny_config(), &[&corpus], 13).unwrap();
        let saved = model.to_saved();
        let json = serde_json::to_string(&saved).unwrap();
        let restored = Model::from_saved(serde_json::from_str(&json).unwrap()).unwrap();
        for doc in &corpus.documents {
            if doc.split_anaphors.is_empty() {
                continue;
            }
            let a = model.predict_document(doc).unwrap();
            let b = restored.predict_document(doc).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let corpus = tiny_corpus(9);
        let model = Model::new(tiny_config(), &[&corpus], 13).unwrap();
        let mut saved = model.to_saved();
        saved.config.lstm_hidden = 6; // params no longer match
        assert!(Model::from_saved(saved).is_err());
    }
}
