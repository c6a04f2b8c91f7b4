//! Training: declarative configs, the optimization loop over document
//! steps, stage chaining, checkpointing, and the reproducible TSV log.
//!
//! One document is one optimization step. A run is a sequence of stages;
//! pre-training stages draw from an auxiliary corpus only, and the single
//! final stage targets the main corpus, either alone, concatenated with
//! an auxiliary corpus at a fixed 0.5 ratio, or under the annealing
//! schedule. Runs are bit-reproducible given (seed, config, platform).

pub mod schedule;

pub use schedule::{annealing_p_main, concat_next, CorpusChoice, EpochSampler, ScheduleState};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{extend_corpus, load_corpus, load_corpus_opts, Corpus, LoadOpts, QualityTier};
use crate::eval::{metric_report, MetricReport};
use crate::model::{Model, ModelConfig, SavedModel};
use crate::nn::{Adam, Tape};
use crate::{Error, Result};

/// Paper-fidelity default step budget.
pub const DEFAULT_TOTAL_STEPS: u64 = 200_000;

/// Optimizer settings: Adam with gradient-norm clipping and a linearly
/// decaying learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    /// Final learning rate as a fraction of the initial one; decay is
    /// linear over the run's total steps. 1.0 keeps it constant.
    pub lr_decay_floor: f64,
    /// Keep Adam moments across stage boundaries instead of resetting.
    pub carry_over_moments: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            lr_decay_floor: 0.1,
            carry_over_moments: false,
        }
    }
}

/// Corpus-mixing strategy of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Main corpus only (plain training or fine-tuning).
    MainOnly,
    /// Auxiliary corpus only (pre-training).
    AuxOnly,
    /// Main with probability 0.5, auxiliary otherwise.
    Concat,
    /// Main with probability t/T at stage step t.
    Annealing,
}

/// One training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub aux: Option<PathBuf>,
    pub steps: u64,
}

/// A full training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub main_corpus: PathBuf,
    #[serde(default)]
    pub dev_corpus: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimConfig,
    /// Checkpoint every n steps; 0 writes the final checkpoint only.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Extend the main corpus's split anaphors through gold clusters.
    #[serde(default = "default_true")]
    pub extend_anaphors: bool,
    /// Strict main/aux alternation instead of the Bernoulli concat draw.
    #[serde(default)]
    pub strict_alternation: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Parses TOML; a missing `stages` list becomes one main-only stage
    /// with the default step budget.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.stages.is_empty() {
            config.stages.push(StageConfig {
                strategy: Strategy::MainOnly,
                aux: None,
                steps: DEFAULT_TOTAL_STEPS,
            });
        }
        config.validate()?;
        Ok(config)
    }

    /// Single-stage run on the main corpus.
    pub fn single_stage(main_corpus: PathBuf, steps: u64) -> TrainConfig {
        TrainConfig {
            main_corpus,
            dev_corpus: None,
            seed: 0,
            stages: vec![StageConfig {
                strategy: Strategy::MainOnly,
                aux: None,
                steps,
            }],
            model: ModelConfig::default(),
            optimizer: OptimConfig::default(),
            checkpoint_interval: 0,
            extend_anaphors: true,
            strict_alternation: false,
        }
    }

    /// Pre-train on the auxiliary corpus, then fine-tune on main.
    pub fn pretrain_finetune(
        main_corpus: PathBuf,
        aux_corpus: PathBuf,
        pretrain_steps: u64,
        finetune_steps: u64,
    ) -> TrainConfig {
        let mut config = TrainConfig::single_stage(main_corpus, finetune_steps);
        config.stages.insert(
            0,
            StageConfig {
                strategy: Strategy::AuxOnly,
                aux: Some(aux_corpus),
                steps: pretrain_steps,
            },
        );
        config
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("stages must not be empty".into()));
        }
        if self.total_steps() == 0 {
            return Err(Error::Config("total steps must be positive".into()));
        }
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            match stage.strategy {
                Strategy::AuxOnly | Strategy::Annealing => {
                    if stage.aux.is_none() {
                        return Err(Error::Config(format!(
                            "stage {i}: {:?} requires an auxiliary corpus",
                            stage.strategy
                        )));
                    }
                }
                // Concat without an auxiliary corpus degenerates to plain
                // main-corpus training.
                Strategy::Concat | Strategy::MainOnly => {}
            }
            let targets_main = stage.strategy != Strategy::AuxOnly;
            if i == last && !targets_main {
                return Err(Error::Config(
                    "the final stage must target the main corpus".into(),
                ));
            }
            if i != last && targets_main {
                return Err(Error::Config(format!(
                    "stage {i}: only the final stage may target the main corpus"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Versioned parameter archive.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub step: u64,
    pub model: SavedModel,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if checkpoint.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} unsupported (expected {})",
                checkpoint.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(checkpoint)
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: Model,
    pub steps: u64,
    pub final_loss: f64,
    pub dev_report: Option<MetricReport>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

fn choose_corpus(
    strategy: Strategy,
    strict_alternation: bool,
    step_in_stage: u64,
    stage_steps: u64,
    rng: &mut ChaCha8Rng,
) -> CorpusChoice {
    match strategy {
        Strategy::MainOnly => CorpusChoice::Main,
        Strategy::AuxOnly => CorpusChoice::Aux,
        Strategy::Concat => {
            if strict_alternation {
                if step_in_stage % 2 == 0 {
                    CorpusChoice::Main
                } else {
                    CorpusChoice::Aux
                }
            } else {
                concat_next(rng)
            }
        }
        Strategy::Annealing => schedule::annealing_next(step_in_stage, stage_steps, rng),
    }
}

fn learning_rate(opt: &OptimConfig, step: u64, total: u64) -> f64 {
    if total == 0 {
        return opt.learning_rate;
    }
    let progress = step as f64 / total as f64;
    let factor = 1.0 - (1.0 - opt.lr_decay_floor) * progress;
    opt.learning_rate * factor
}

/// Runs all stages, writing `checkpoint.json` and `train_log.tsv` into
/// `out_dir`. Deterministic per (seed, config, platform).
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut main = load_corpus(&config.main_corpus)?;
    if config.extend_anaphors {
        main = extend_corpus(&main);
    }
    if main.documents.is_empty() {
        return Err(Error::Config("main corpus has no documents".into()));
    }
    let mut aux_corpora: Vec<Option<Corpus>> = Vec::new();
    for stage in &config.stages {
        let aux = match &stage.aux {
            Some(path) => {
                let corpus = load_corpus_opts(
                    path,
                    LoadOpts {
                        name: None,
                        quality_tier: QualityTier::Silver,
                        allow_single_antecedent: true,
                    },
                )?;
                if corpus.documents.is_empty() {
                    return Err(Error::Config(format!(
                        "auxiliary corpus {} has no documents",
                        path.display()
                    )));
                }
                Some(corpus)
            }
            None => None,
        };
        aux_corpora.push(aux);
    }
    let dev = config
        .dev_corpus
        .as_ref()
        .map(load_corpus)
        .transpose()?;

    let mut vocab_sources: Vec<&Corpus> = vec![&main];
    vocab_sources.extend(aux_corpora.iter().flatten());
    let mut model = Model::new(config.model.clone(), &vocab_sources, config.seed)?;
    let mut adam = Adam::new(
        &model.params,
        config.optimizer.beta1,
        config.optimizer.beta2,
        config.optimizer.eps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let log_path = out_dir.join("train_log.tsv");
    let log_file = fs::File::create(&log_path).map_err(|source| Error::Io {
        path: log_path.clone(),
        source,
    })?;
    let mut log = BufWriter::new(log_file);
    let write_log_err = |source: std::io::Error| Error::Io {
        path: log_path.clone(),
        source,
    };
    writeln!(log, "step\tstage\tcorpus\tloss").map_err(write_log_err)?;

    let checkpoint_path = out_dir.join("checkpoint.json");
    let config_hash = config.fingerprint();
    let total_steps = config.total_steps();
    let mut global_step: u64 = 0;
    let mut final_loss = 0.0;

    for (stage_idx, stage) in config.stages.iter().enumerate() {
        if !config.optimizer.carry_over_moments {
            adam.reset();
        }
        let mut main_sampler = EpochSampler::new(main.documents.len());
        let mut aux_sampler = aux_corpora[stage_idx]
            .as_ref()
            .map(|c| EpochSampler::new(c.documents.len()));

        for step_in_stage in 0..stage.steps {
            let choice = match (&aux_corpora[stage_idx], stage.strategy) {
                (None, _) => CorpusChoice::Main,
                (Some(_), strategy) => choose_corpus(
                    strategy,
                    config.strict_alternation,
                    step_in_stage,
                    stage.steps,
                    &mut rng,
                ),
            };
            let (doc, tag) = match choice {
                CorpusChoice::Main => {
                    let idx = main_sampler.next(&mut rng);
                    (&main.documents[idx], "main")
                }
                CorpusChoice::Aux => {
                    let corpus = aux_corpora[stage_idx].as_ref().expect("aux drawn");
                    let idx = aux_sampler.as_mut().expect("aux sampler").next(&mut rng);
                    (&corpus.documents[idx], "aux")
                }
            };

            let mut tape = Tape::new();
            let doc_loss = model.document_loss(&mut tape, doc)?;
            let loss = tape.value(doc_loss.loss)[0];
            if !loss.is_finite() {
                return Err(Error::Diverged { step: global_step });
            }
            if doc_loss.targets > 0 {
                model.params.zero_grad();
                tape.backward(doc_loss.loss, &mut model.params);
                model.params.clip_grad_norm(config.optimizer.clip_norm);
                let lr = learning_rate(&config.optimizer, global_step, total_steps);
                adam.step(&mut model.params, lr);
            }
            writeln!(log, "{step_in_stage}\t{stage_idx}\t{tag}\t{loss:.6}")
                .map_err(write_log_err)?;
            final_loss = loss;
            global_step += 1;

            if config.checkpoint_interval > 0 && global_step % config.checkpoint_interval == 0 {
                Checkpoint {
                    format_version: CHECKPOINT_FORMAT_VERSION,
                    config_hash: config_hash.clone(),
                    step: global_step,
                    model: model.to_saved(),
                }
                .save(&checkpoint_path)?;
            }
        }
    }
    log.flush().map_err(write_log_err)?;

    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config_hash,
        step: global_step,
        model: model.to_saved(),
    }
    .save(&checkpoint_path)?;

    let dev_report = match &dev {
        Some(dev) => {
            let preds = model.predict_corpus(dev)?;
            Some(metric_report(&preds, dev, false)?)
        }
        None => None,
    };

    Ok(TrainOutcome {
        model,
        steps: global_step,
        final_loss,
        dev_report,
        checkpoint_path,
        log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::save_corpus;
    use crate::corpus::synth::{generate_synthetic, SynthConfig};
    use crate::encoder::ProviderConfig;
    use crate::eval::lenient_scores;

    fn small_model() -> ModelConfig {
        ModelConfig {
            providers: vec![ProviderConfig::TrainableLookup { dim: 12 }],
            lstm_hidden: 8,
            width_dim: 4,
            dist_dim: 4,
            ffnn_hidden: 16,
            ffnn_layers: 2,
            window: 250,
            train_non_anaphors: true,
        }
    }

    fn write_synth(dir: &Path, name: &str, seed: u64, docs: usize) -> PathBuf {
        let corpus = generate_synthetic(&SynthConfig {
            seed,
            documents: docs,
            tokens_per_doc: 40,
            mention_density: 0.3,
            split_anaphor_rate: 0.35,
            antecedent_weights: [1.0, 0.0, 0.0, 0.0],
            marker_pool: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let path = dir.join(name);
        save_corpus(&corpus, &path).unwrap();
        path
    }

    #[test]
    fn config_validation_rules() {
        let mut config = TrainConfig::single_stage(PathBuf::from("main.jsonl"), 10);
        assert!(config.validate().is_ok());
        config.stages.clear();
        assert!(config.validate().is_err());

        // Aux-only final stage is rejected.
        let mut config = TrainConfig::single_stage(PathBuf::from("main.jsonl"), 10);
        config.stages[0].strategy = Strategy::AuxOnly;
        config.stages[0].aux = Some(PathBuf::from("aux.jsonl"));
        assert!(config.validate().is_err());

        // Annealing without aux is rejected.
        let mut config = TrainConfig::single_stage(PathBuf::from("main.jsonl"), 10);
        config.stages[0].strategy = Strategy::Annealing;
        assert!(config.validate().is_err());

        // Chained pre-train stages then one main-targeting stage pass.
        let config = TrainConfig::pretrain_finetune(
            PathBuf::from("main.jsonl"),
            PathBuf::from("aux.jsonl"),
            5,
            5,
        );
        assert!(config.validate().is_ok());

        // Zero-step fine-tune is allowed while total stays positive.
        let config = TrainConfig::pretrain_finetune(
            PathBuf::from("main.jsonl"),
            PathBuf::from("aux.jsonl"),
            5,
            0,
        );
        assert!(config.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_with_default_stage() {
        let config = TrainConfig::from_toml("main_corpus = \"m.jsonl\"").unwrap();
        assert_eq!(config.stages.len(), 1);
        assert_eq!(config.stages[0].steps, DEFAULT_TOTAL_STEPS);
        assert_eq!(config.stages[0].strategy, Strategy::MainOnly);

        let text = r#"
            main_corpus = "m.jsonl"
            seed = 9

            [[stages]]
            strategy = "aux-only"
            aux = "a.jsonl"
            steps = 100

            [[stages]]
            strategy = "annealing"
            aux = "b.jsonl"
            steps = 300

            [model]
            lstm_hidden = 8

            [optimizer]
            learning_rate = 0.01
        "#;
        let config = TrainConfig::from_toml(text).unwrap();
        assert_eq!(config.stages.len(), 2);
        assert_eq!(config.stages[1].strategy, Strategy::Annealing);
        assert_eq!(config.model.lstm_hidden, 8);
        assert_eq!(config.optimizer.learning_rate, 0.01);
        assert_eq!(config.total_steps(), 400);
    }

    #[test]
    fn training_is_reproducible_and_logs_every_step() {
        let dir = tempfile::tempdir().unwrap();
        let main = write_synth(dir.path(), "main.jsonl", 41, 4);
        let mut config = TrainConfig::single_stage(main, 25);
        config.model = small_model();
        config.seed = 5;

        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        train(&config, &out_a).unwrap();
        train(&config, &out_b).unwrap();
        let log_a = fs::read(out_a.join("train_log.tsv")).unwrap();
        let log_b = fs::read(out_b.join("train_log.tsv")).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.iter().filter(|b| **b == b'\n').count(), 26); // header + 25 steps
    }

    #[test]
    fn pretrain_then_zero_step_finetune_keeps_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let main = write_synth(dir.path(), "main.jsonl", 42, 3);
        let aux = write_synth(dir.path(), "aux.jsonl", 43, 4);

        let mut pre_only = TrainConfig {
            main_corpus: main.clone(),
            ..TrainConfig::pretrain_finetune(main.clone(), aux.clone(), 15, 0)
        };
        pre_only.model = small_model();
        pre_only.seed = 3;
        let out_a = dir.path().join("pre");
        let outcome_a = train(&pre_only, &out_a).unwrap();

        // The same run with fine-tune steps produces different parameters.
        let mut with_finetune = TrainConfig::pretrain_finetune(main, aux, 15, 10);
        with_finetune.model = small_model();
        with_finetune.seed = 3;
        let out_b = dir.path().join("fine");
        let outcome_b = train(&with_finetune, &out_b).unwrap();

        let a = Checkpoint::load(&outcome_a.checkpoint_path).unwrap();
        let b = Checkpoint::load(&outcome_b.checkpoint_path).unwrap();
        assert_eq!(a.step, 15);
        assert_eq!(b.step, 25);
        // Zero-step fine-tune: checkpoint equals the pre-train result; the
        // 10-step fine-tune diverges from it.
        let data = |m: &SavedModel| {
            m.params
                .iter()
                .flat_map(|p| p.data.iter().cloned())
                .collect::<Vec<f64>>()
        };
        let pre_a = data(&a.model);
        let pre_b = data(&b.model);
        assert_ne!(pre_a, pre_b);

        // Re-run pre-only and compare checkpoints byte for byte.
        let out_c = dir.path().join("pre2");
        let outcome_c = train(&pre_only, &out_c).unwrap();
        assert_eq!(
            fs::read(&outcome_a.checkpoint_path).unwrap(),
            fs::read(&outcome_c.checkpoint_path).unwrap()
        );
    }

    #[test]
    fn concat_without_aux_degenerates_to_plain_training() {
        let dir = tempfile::tempdir().unwrap();
        let main = write_synth(dir.path(), "main.jsonl", 44, 3);
        let mut config = TrainConfig::single_stage(main, 10);
        config.stages[0].strategy = Strategy::Concat;
        config.model = small_model();
        let out = dir.path().join("out");
        train(&config, &out).unwrap();
        let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
        for line in log.lines().skip(1) {
            assert!(line.contains("\tmain\t"), "unexpected corpus in {line}");
        }
    }

    #[test]
    fn overfit_smoke_run_reaches_high_training_f1() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_synthetic(&SynthConfig {
            seed: 50,
            documents: 8,
            tokens_per_doc: 40,
            mention_density: 0.3,
            split_anaphor_rate: 0.4,
            antecedent_weights: [1.0, 0.0, 0.0, 0.0],
            marker_pool: 15,
            ..SynthConfig::default()
        })
        .unwrap();
        let main = dir.path().join("main.jsonl");
        save_corpus(&corpus, &main).unwrap();

        let mut config = TrainConfig::single_stage(main, 400);
        config.model = small_model();
        config.seed = 11;
        config.optimizer.learning_rate = 5e-3;
        let out = dir.path().join("out");
        let outcome = train(&config, &out).unwrap();

        let preds = outcome.model.predict_corpus(&corpus).unwrap();
        let lenient = lenient_scores(&preds, &corpus).unwrap();
        assert!(
            lenient.f1 >= 0.9,
            "training-set lenient F1 too low: {}",
            lenient.f1
        );
    }

    #[test]
    fn dev_evaluation_is_attached_when_configured() {
        let dir = tempfile::tempdir().unwrap();
        let main = write_synth(dir.path(), "main.jsonl", 45, 3);
        let dev = write_synth(dir.path(), "dev.jsonl", 46, 2);
        let mut config = TrainConfig::single_stage(main, 12);
        config.dev_corpus = Some(dev);
        config.model = small_model();
        let out = dir.path().join("out");
        let outcome = train(&config, &out).unwrap();
        let report = outcome.dev_report.expect("dev report");
        assert!(report.anaphors > 0);
    }
}
