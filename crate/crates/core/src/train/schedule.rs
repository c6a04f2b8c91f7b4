//! Corpus-mixing schedules.
//!
//! Concatenation draws the main corpus with a fixed probability of 0.5
//! per document; annealing linearly raises the main-corpus probability
//! from 0 to 1 over the stage, so training starts fully auxiliary and
//! ends fully on the main corpus. Within a corpus, documents are drawn
//! uniformly without replacement per epoch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which corpus a training step draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusChoice {
    Main,
    Aux,
}

/// Position within a stage, with the current main-corpus probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub step: u64,
    pub total: u64,
    pub stage: usize,
    pub p_main: f64,
}

/// Independent Bernoulli draw with `p_main = 0.5`.
pub fn concat_next(rng: &mut ChaCha8Rng) -> CorpusChoice {
    if rng.random::<f64>() < 0.5 {
        CorpusChoice::Main
    } else {
        CorpusChoice::Aux
    }
}

/// `p_main(t) = t / T`, clamped to 1 beyond the stage end.
pub fn annealing_p_main(t: u64, total: u64) -> f64 {
    if total == 0 || t >= total {
        return 1.0;
    }
    t as f64 / total as f64
}

/// Draw with the annealing probability for step `t` of `total`.
pub fn annealing_next(t: u64, total: u64, rng: &mut ChaCha8Rng) -> CorpusChoice {
    if rng.random::<f64>() < annealing_p_main(t, total) {
        CorpusChoice::Main
    } else {
        CorpusChoice::Aux
    }
}

/// Uniform without-replacement document sampler; reshuffles per epoch.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        EpochSampler {
            order: (0..len).collect(),
            pos: len, // force a shuffle on first draw
        }
    }

    pub fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        assert!(!self.order.is_empty(), "cannot sample from an empty corpus");
        if self.pos >= self.order.len() {
            for i in (1..self.order.len()).rev() {
                self.order.swap(i, rng.random_range(0..=i));
            }
            self.pos = 0;
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }
}
