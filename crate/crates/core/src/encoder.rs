//! Token and mention representations.
//!
//! Per-token vectors from the configured embedding providers are
//! concatenated and contextualized by a single-layer BiLSTM; the token
//! representation `x_t` is the concatenation of the forward and backward
//! states. A mention `(b, e)` is represented as
//! `[x_b, x_e, h, width-embedding]`, where the head `h` is an
//! attention-weighted sum of the span's token vectors:
//!
//! ```text
//! alpha_t = ffnn_alpha(x_t)
//! a_t     = exp(alpha_t) / sum_{k=b..e} exp(alpha_k)
//! h       = sum_{t=b..e} a_t * x_t
//! ```
//!
//! Contextual embeddings are consumed from precomputed files, never
//! computed in-process; static word vectors are frozen. Unknown tokens and
//! characters map to a single trained unknown entry.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::nn::{ParamId, Params, Tape, VarId};
use crate::{Error, Result};

/// Number of width/distance buckets.
pub const NUM_BUCKETS: usize = 9;

fn bucket9(n: usize) -> usize {
    match n {
        1 => 0,
        2 => 1,
        3 => 2,
        4 => 3,
        5..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        32..=63 => 7,
        _ => 8,
    }
}

/// Bucket id for a mention width in tokens: [1][2][3][4][5-7][8-15][16-31][32-63][64+].
pub fn width_bucket(width: usize) -> Result<usize> {
    if width < 1 {
        return Err(Error::Config(format!(
            "mention width must be >= 1, got {width}"
        )));
    }
    Ok(bucket9(width))
}

/// Bucket id for a mention distance, same scheme as widths.
pub fn distance_bucket(distance: usize) -> Result<usize> {
    if distance < 1 {
        return Err(Error::Config(format!(
            "mention distance must be >= 1, got {distance}"
        )));
    }
    Ok(bucket9(distance))
}

/// One embedding provider in the token stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderConfig {
    /// Trained lookup table over the training vocabulary.
    TrainableLookup { dim: usize },
    /// Frozen word vectors from a text file (`token v1 .. vd` per line).
    StaticLookup { path: PathBuf, dim: usize },
    /// Frozen per-(doc, token) vectors from a JSONL sidecar.
    PrecomputedContextual { path: PathBuf, dim: usize },
    /// Character convolution with max-over-time pooling per filter width.
    CharConv {
        char_dim: usize,
        filters: usize,
        widths: Vec<usize>,
    },
}

impl ProviderConfig {
    /// Output dimension contributed per token.
    pub fn dim(&self) -> usize {
        match self {
            ProviderConfig::TrainableLookup { dim } => *dim,
            ProviderConfig::StaticLookup { dim, .. } => *dim,
            ProviderConfig::PrecomputedContextual { dim, .. } => *dim,
            ProviderConfig::CharConv {
                filters, widths, ..
            } => filters * widths.len(),
        }
    }
}

/// Frozen word-vector table.
#[derive(Debug, Clone)]
pub struct StaticTable {
    pub dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl StaticTable {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut map = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default().to_string();
            let vector: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            if vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: format!("static vector for {token}"),
                    declared: dim,
                    found: vector.len(),
                });
            }
            map.insert(token, vector);
        }
        Ok(StaticTable { dim, map })
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.map.get(token).map(|v| v.as_slice())
    }
}

#[derive(Debug, Deserialize)]
struct ContextualRecord {
    doc_id: String,
    vectors: Vec<Vec<f64>>,
}

/// Frozen contextual vectors keyed by (doc_id, token index).
#[derive(Debug, Clone)]
pub struct ContextualTable {
    pub dim: usize,
    map: HashMap<String, Vec<Vec<f64>>>,
}

impl ContextualTable {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut map = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ContextualRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            for v in &record.vectors {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: format!("contextual vectors for {}", record.doc_id),
                        declared: dim,
                        found: v.len(),
                    });
                }
            }
            map.insert(record.doc_id, record.vectors);
        }
        Ok(ContextualTable { dim, map })
    }

    pub fn vectors(&self, doc_id: &str) -> Option<&Vec<Vec<f64>>> {
        self.map.get(doc_id)
    }

    /// Every token of the document must be covered.
    pub fn validate_coverage(&self, doc: &Document) -> Result<()> {
        let vectors = self.vectors(&doc.doc_id).ok_or(Error::MissingEmbedding {
            what: format!("document {}", doc.doc_id),
        })?;
        if vectors.len() != doc.tokens.len() {
            return Err(Error::MissingEmbedding {
                what: format!(
                    "document {}: {} vectors for {} tokens",
                    doc.doc_id,
                    vectors.len(),
                    doc.tokens.len()
                ),
            });
        }
        Ok(())
    }
}

/// Loaded frozen tables, in provider order.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    pub static_tables: Vec<StaticTable>,
    pub contextual_tables: Vec<ContextualTable>,
}

impl Resources {
    pub fn load(providers: &[ProviderConfig]) -> Result<Self> {
        let mut out = Resources::default();
        for p in providers {
            match p {
                ProviderConfig::StaticLookup { path, dim } => {
                    out.static_tables.push(StaticTable::load(path, *dim)?);
                }
                ProviderConfig::PrecomputedContextual { path, dim } => {
                    out.contextual_tables
                        .push(ContextualTable::load(path, *dim)?);
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

/// Token and character inventories built from the training corpora.
///
/// Index 0 is the trained unknown entry in both tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SavedVocab", into = "SavedVocab")]
pub struct Vocab {
    tokens: Vec<String>,
    chars: Vec<char>,
    token_index: HashMap<String, usize>,
    char_index: HashMap<char, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedVocab {
    tokens: Vec<String>,
    chars: Vec<char>,
}

impl From<SavedVocab> for Vocab {
    fn from(saved: SavedVocab) -> Self {
        Vocab::from_lists(saved.tokens, saved.chars)
    }
}

impl From<Vocab> for SavedVocab {
    fn from(vocab: Vocab) -> Self {
        SavedVocab {
            tokens: vocab.tokens,
            chars: vocab.chars,
        }
    }
}

impl Vocab {
    /// Deterministic inventory: sorted unique tokens and characters.
    pub fn build<'a>(docs: impl Iterator<Item = &'a Document>) -> Vocab {
        let mut tokens: Vec<String> = Vec::new();
        let mut chars: Vec<char> = Vec::new();
        for doc in docs {
            for token in &doc.tokens {
                tokens.push(token.clone());
                chars.extend(token.chars());
            }
        }
        tokens.sort();
        tokens.dedup();
        chars.sort();
        chars.dedup();
        Vocab::from_lists(tokens, chars)
    }

    fn from_lists(tokens: Vec<String>, chars: Vec<char>) -> Vocab {
        let token_index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 1))
            .collect();
        let char_index = chars.iter().enumerate().map(|(i, c)| (*c, i + 1)).collect();
        Vocab {
            tokens,
            chars,
            token_index,
            char_index,
        }
    }

    /// Lookup id; 0 for unknown tokens.
    pub fn token_id(&self, token: &str) -> usize {
        self.token_index.get(token).copied().unwrap_or(0)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(0)
    }

    /// Table size including the unknown entry.
    pub fn token_count(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn char_count(&self) -> usize {
        self.chars.len() + 1
    }
}

/// Parameter handles for one LSTM direction; gate order i, f, o, u.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

/// Parameter handles per provider.
#[derive(Debug, Clone)]
pub enum ProviderParams {
    Lookup {
        table: ParamId,
        dim: usize,
    },
    Static {
        index: usize,
        dim: usize,
    },
    Contextual {
        index: usize,
        dim: usize,
    },
    CharConv {
        embed: ParamId,
        filters: Vec<(ParamId, ParamId, usize)>,
        dim: usize,
    },
}

/// All encoder parameter handles.
#[derive(Debug, Clone)]
pub struct EncoderLayout {
    pub providers: Vec<ProviderParams>,
    pub input_dim: usize,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub attn: ParamId,
    pub width_emb: ParamId,
    pub token_dim: usize,
    pub width_dim: usize,
}

/// Registers all encoder parameters in a fixed order.
pub fn build_encoder(
    params: &mut Params,
    providers: &[ProviderConfig],
    lstm_hidden: usize,
    width_dim: usize,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> EncoderLayout {
    let mut provider_params = Vec::new();
    let (mut static_idx, mut ctx_idx) = (0usize, 0usize);
    for (pi, provider) in providers.iter().enumerate() {
        match provider {
            ProviderConfig::TrainableLookup { dim } => {
                let table = params.add_embedding(
                    &format!("embed.{pi}.lookup"),
                    vocab.token_count(),
                    *dim,
                    rng,
                );
                provider_params.push(ProviderParams::Lookup { table, dim: *dim });
            }
            ProviderConfig::StaticLookup { dim, .. } => {
                provider_params.push(ProviderParams::Static {
                    index: static_idx,
                    dim: *dim,
                });
                static_idx += 1;
            }
            ProviderConfig::PrecomputedContextual { dim, .. } => {
                provider_params.push(ProviderParams::Contextual {
                    index: ctx_idx,
                    dim: *dim,
                });
                ctx_idx += 1;
            }
            ProviderConfig::CharConv {
                char_dim,
                filters,
                widths,
            } => {
                let embed = params.add_embedding(
                    &format!("embed.{pi}.chars"),
                    vocab.char_count(),
                    *char_dim,
                    rng,
                );
                let filter_params = widths
                    .iter()
                    .map(|w| {
                        let wp = params.add_xavier(
                            &format!("embed.{pi}.conv{w}.w"),
                            *filters,
                            w * char_dim,
                            rng,
                        );
                        let bp = params.add_zeros(&format!("embed.{pi}.conv{w}.b"), *filters, 1);
                        (wp, bp, *w)
                    })
                    .collect();
                provider_params.push(ProviderParams::CharConv {
                    embed,
                    filters: filter_params,
                    dim: filters * widths.len(),
                });
            }
        }
    }
    let input_dim: usize = providers.iter().map(|p| p.dim()).sum();
    let mut lstm = |params: &mut Params, tag: &str| {
        let w_ih = params.add_xavier(&format!("lstm.{tag}.w_ih"), 4 * lstm_hidden, input_dim, rng);
        let w_hh = params.add_xavier(
            &format!("lstm.{tag}.w_hh"),
            4 * lstm_hidden,
            lstm_hidden,
            rng,
        );
        let bias = params.add(&format!("lstm.{tag}.bias"), 4 * lstm_hidden, 1, || 0.0);
        // Forget-gate bias starts at 1.
        let e = params.entry_mut(bias);
        for i in lstm_hidden..2 * lstm_hidden {
            e.data[i] = 1.0;
        }
        LstmParams {
            w_ih,
            w_hh,
            bias,
            hidden: lstm_hidden,
        }
    };
    let lstm_fwd = lstm(params, "fwd");
    let lstm_bwd = lstm(params, "bwd");
    let token_dim = 2 * lstm_hidden;
    let attn = params.add_xavier("attn.w", 1, token_dim, rng);
    let width_emb = params.add_embedding("width.emb", NUM_BUCKETS, width_dim, rng);
    EncoderLayout {
        providers: provider_params,
        input_dim,
        lstm_fwd,
        lstm_bwd,
        attn,
        width_emb,
        token_dim,
        width_dim,
    }
}

/// Contextualized token representations of one document.
pub struct TokenRepr {
    pub vars: Vec<VarId>,
    pub dim: usize,
}

fn lstm_step(
    tape: &mut Tape,
    params: &Params,
    p: &LstmParams,
    x: VarId,
    h: VarId,
    c: VarId,
) -> (VarId, VarId) {
    let gx = tape.affine(params, p.w_ih, p.bias, x);
    let gh = tape.matvec(params, p.w_hh, h);
    let gates = tape.add(gx, gh);
    let hs = p.hidden;
    let i_pre = tape.slice(gates, 0, hs);
    let f_pre = tape.slice(gates, hs, hs);
    let o_pre = tape.slice(gates, 2 * hs, hs);
    let u_pre = tape.slice(gates, 3 * hs, hs);
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let u = tape.tanh(u_pre);
    let fc = tape.mul(f, c);
    let iu = tape.mul(i, u);
    let c2 = tape.add(fc, iu);
    let c2t = tape.tanh(c2);
    let h2 = tape.mul(o, c2t);
    (h2, c2)
}

fn run_lstm(
    tape: &mut Tape,
    params: &Params,
    p: &LstmParams,
    inputs: &[VarId],
    reverse: bool,
) -> Vec<VarId> {
    let mut h = tape.zeros(p.hidden);
    let mut c = tape.zeros(p.hidden);
    let mut states = Vec::with_capacity(inputs.len());
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let (h2, c2) = lstm_step(tape, params, p, inputs[t], h, c);
        h = h2;
        c = c2;
        states.push(h);
    }
    if reverse {
        states.reverse();
    }
    states
}

/// Embeds and contextualizes every token of a document.
pub fn embed_tokens(
    tape: &mut Tape,
    params: &Params,
    enc: &EncoderLayout,
    vocab: &Vocab,
    resources: &Resources,
    doc: &Document,
) -> Result<TokenRepr> {
    let mut inputs = Vec::with_capacity(doc.tokens.len());
    for (t, token) in doc.tokens.iter().enumerate() {
        let mut parts = Vec::new();
        for provider in &enc.providers {
            match provider {
                ProviderParams::Lookup { table, .. } => {
                    parts.push(tape.param_row(params, *table, vocab.token_id(token)));
                }
                ProviderParams::Static { index, dim } => {
                    let table = &resources.static_tables[*index];
                    if table.dim != *dim {
                        return Err(Error::DimensionMismatch {
                            what: "static lookup table".to_string(),
                            declared: *dim,
                            found: table.dim,
                        });
                    }
                    let v = table
                        .get(token)
                        .map(|v| v.to_vec())
                        .unwrap_or_else(|| vec![0.0; *dim]);
                    parts.push(tape.constant(v));
                }
                ProviderParams::Contextual { index, dim } => {
                    let table = &resources.contextual_tables[*index];
                    if table.dim != *dim {
                        return Err(Error::DimensionMismatch {
                            what: "contextual table".to_string(),
                            declared: *dim,
                            found: table.dim,
                        });
                    }
                    table.validate_coverage(doc)?;
                    let v = table.vectors(&doc.doc_id).expect("coverage validated")[t].clone();
                    parts.push(tape.constant(v));
                }
                ProviderParams::CharConv { embed, filters, .. } => {
                    let mut chars: Vec<VarId> = token
                        .chars()
                        .map(|ch| tape.param_row(params, *embed, vocab.char_id(ch)))
                        .collect();
                    if chars.is_empty() {
                        chars.push(tape.param_row(params, *embed, 0));
                    }
                    for (w, b, window) in filters {
                        parts.push(tape.conv_max(params, *w, *b, *window, &chars));
                    }
                }
            }
        }
        let combined = tape.concat(&parts);
        if tape.len(combined) != enc.input_dim {
            return Err(Error::DimensionMismatch {
                what: format!("token {t} provider stack"),
                declared: enc.input_dim,
                found: tape.len(combined),
            });
        }
        inputs.push(combined);
    }
    let fwd = run_lstm(tape, params, &enc.lstm_fwd, &inputs, false);
    let bwd = run_lstm(tape, params, &enc.lstm_bwd, &inputs, true);
    let vars = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect();
    Ok(TokenRepr {
        vars,
        dim: enc.token_dim,
    })
}

/// Attention-weighted head vector of a span.
pub fn head_attention(
    tape: &mut Tape,
    params: &Params,
    attn: ParamId,
    span: (usize, usize),
    x: &TokenRepr,
) -> VarId {
    let (b, e) = span;
    let alphas: Vec<VarId> = (b..=e)
        .map(|t| tape.matvec(params, attn, x.vars[t]))
        .collect();
    let stacked = tape.stack_scalars(&alphas);
    let weights = tape.softmax(stacked);
    tape.weighted_sum(weights, &x.vars[b..=e])
}

/// `[x_b, x_e, head, width-embedding]` for one span.
pub fn mention_repr(
    tape: &mut Tape,
    params: &Params,
    enc: &EncoderLayout,
    span: (usize, usize),
    x: &TokenRepr,
) -> Result<VarId> {
    let (b, e) = span;
    let bucket = width_bucket(e - b + 1)?;
    let head = head_attention(tape, params, enc.attn, span, x);
    let wemb = tape.param_row(params, enc.width_emb, bucket);
    Ok(tape.concat(&[x.vars[b], x.vars[e], head, wemb]))
}

/// Dimension of a mention representation.
pub fn mention_dim(token_dim: usize, width_dim: usize) -> usize {
    3 * token_dim + width_dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc_with_tokens(tokens: &[&str]) -> Document {
        Document {
            doc_id: "enc".into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            mentions: vec![],
            clusters: vec![],
            split_anaphors: Default::default(),
            bridging: vec![],
            crowd: vec![],
        }
    }

    fn small_encoder(
        providers: &[ProviderConfig],
        vocab: &Vocab,
        seed: u64,
    ) -> (Params, EncoderLayout) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let enc = build_encoder(&mut params, providers, 4, 3, vocab, &mut rng);
        (params, enc)
    }

    fn lookup_only() -> Vec<ProviderConfig> {
        vec![ProviderConfig::TrainableLookup { dim: 5 }]
    }

    #[test]
    fn width_buckets_match_the_table() {
        let cases = [
            (1, 0),
            (2, 1),
            (3, 2),
            (4, 3),
            (5, 4),
            (6, 4),
            (7, 4),
            (8, 5),
            (15, 5),
            (16, 6),
            (31, 6),
            (32, 7),
            (63, 7),
            (64, 8),
            (1000, 8),
        ];
        for (w, b) in cases {
            assert_eq!(width_bucket(w).unwrap(), b, "width {w}");
        }
        assert!(width_bucket(0).is_err());
        assert!(distance_bucket(0).is_err());
        // Monotone in width.
        let mut prev = 0;
        for w in 1..200 {
            let b = width_bucket(w).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn embed_tokens_has_one_vector_per_token() {
        let doc = doc_with_tokens(&["a", "b", "c"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 1);
        let resources = Resources::default();
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
        assert_eq!(x.vars.len(), 3);
        assert_eq!(x.dim, 8);
        for v in &x.vars {
            assert_eq!(tape.len(*v), 8);
            assert!(tape.value(*v).iter().all(|f| f.is_finite()));
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let doc = doc_with_tokens(&["a", "b", "c", "a"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 2);
        let resources = Resources::default();
        let run = || {
            let mut tape = Tape::new();
            let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
            x.vars
                .iter()
                .map(|v| tape.value(*v).to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn context_layer_is_order_sensitive() {
        let doc_ab = doc_with_tokens(&["a", "b", "c", "d"]);
        let doc_ba = doc_with_tokens(&["b", "a", "c", "d"]);
        let vocab = Vocab::build(std::iter::once(&doc_ab));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 3);
        let resources = Resources::default();
        let encode = |doc: &Document| {
            let mut tape = Tape::new();
            let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, doc).unwrap();
            x.vars
                .iter()
                .map(|v| tape.value(*v).to_vec())
                .collect::<Vec<_>>()
        };
        let xs = encode(&doc_ab);
        let ys = encode(&doc_ba);
        assert_ne!(xs[0], ys[0]);
        assert_ne!(xs[1], ys[1]);
    }

    #[test]
    fn char_conv_contributes_per_width_filters() {
        let doc = doc_with_tokens(&["hello", "hi"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let providers = vec![
            ProviderConfig::TrainableLookup { dim: 5 },
            ProviderConfig::CharConv {
                char_dim: 3,
                filters: 2,
                widths: vec![2, 3],
            },
        ];
        let (params, enc) = small_encoder(&providers, &vocab, 4);
        assert_eq!(enc.input_dim, 5 + 4);
        let resources = Resources::default();
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
        assert_eq!(x.vars.len(), 2);
    }

    #[test]
    fn single_token_head_is_the_token_vector() {
        let doc = doc_with_tokens(&["a", "b", "c"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 5);
        let resources = Resources::default();
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
        let h = head_attention(&mut tape, &params, enc.attn, (1, 1), &x);
        assert_eq!(tape.value(h), tape.value(x.vars[1]));
    }

    #[test]
    fn head_matches_independent_softmax_computation() {
        let doc = doc_with_tokens(&["w", "x", "y", "z", "q"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 6);
        let resources = Resources::default();
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
        let (b, e) = (1usize, 4usize);
        let h = head_attention(&mut tape, &params, enc.attn, (b, e), &x);

        // Re-derive from raw parameter values.
        let w = params.data(enc.attn);
        let alphas: Vec<f64> = (b..=e)
            .map(|t| {
                tape.value(x.vars[t])
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        let max = alphas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = alphas.iter().map(|a| (a - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut expected = vec![0.0; x.dim];
        for (k, t) in (b..=e).enumerate() {
            let weight = exps[k] / total;
            for (acc, v) in expected.iter_mut().zip(tape.value(x.vars[t])) {
                *acc += weight * v;
            }
        }
        for (got, want) in tape.value(h).iter().zip(&expected) {
            let denom = want.abs().max(1e-12);
            assert!((got - want).abs() / denom < 1e-6, "got {got}, want {want}");
        }
    }

    #[test]
    fn mention_repr_layout_and_width_buckets() {
        let tokens: Vec<String> = (0..45).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = tokens.iter().map(|s| s.as_str()).collect();
        let doc = doc_with_tokens(&refs);
        let vocab = Vocab::build(std::iter::once(&doc));
        let (params, enc) = small_encoder(&lookup_only(), &vocab, 7);
        let resources = Resources::default();
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();

        // Single-token span: first two blocks and the head all equal x_t.
        let m = mention_repr(&mut tape, &params, &enc, (2, 2), &x).unwrap();
        assert_eq!(tape.len(m), mention_dim(enc.token_dim, enc.width_dim));
        let xv = tape.value(x.vars[2]).to_vec();
        let mv = tape.value(m);
        assert_eq!(&mv[..8], &xv[..]);
        assert_eq!(&mv[8..16], &xv[..]);
        assert_eq!(&mv[16..24], &xv[..]);

        // Widths 1 and 40 land in buckets 0 and 8: different embeddings.
        let m1 = mention_repr(&mut tape, &params, &enc, (0, 0), &x).unwrap();
        let m40 = mention_repr(&mut tape, &params, &enc, (0, 39), &x).unwrap();
        let tail = |v: &[f64]| v[v.len() - 3..].to_vec();
        assert_ne!(tail(tape.value(m1)), tail(tape.value(m40)));
        assert_eq!(
            tail(tape.value(m1)),
            params.data(enc.width_emb)[..3].to_vec()
        );
    }

    #[test]
    fn contextual_provider_validates_dimensions_and_coverage() {
        use std::io::Write;
        let doc = doc_with_tokens(&["a", "b"]);
        let vocab = Vocab::build(std::iter::once(&doc));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"doc_id":"enc","vectors":[[0.1,0.2],[0.3,0.4]]}}"#).unwrap();
        drop(f);

        let providers = vec![ProviderConfig::PrecomputedContextual {
            path: path.clone(),
            dim: 2,
        }];
        let resources = Resources::load(&providers).unwrap();
        let (params, enc) = small_encoder(&providers, &vocab, 8);
        let mut tape = Tape::new();
        let x = embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc).unwrap();
        assert_eq!(x.vars.len(), 2);

        // Declared dimension mismatch fails at load.
        let bad = vec![ProviderConfig::PrecomputedContextual {
            path: path.clone(),
            dim: 3,
        }];
        assert!(matches!(
            Resources::load(&bad),
            Err(Error::DimensionMismatch { .. })
        ));

        // Missing coverage fails at embed time.
        let doc3 = doc_with_tokens(&["a", "b", "c"]);
        let mut tape = Tape::new();
        assert!(matches!(
            embed_tokens(&mut tape, &params, &enc, &vocab, &resources, &doc3),
            Err(Error::MissingEmbedding { .. })
        ));
    }
}
