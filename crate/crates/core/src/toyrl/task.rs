//! Synthetic order-sensitive retrieval task.
//!
//! A sample is a handful of `key: value` facts plus a question naming one
//! key; the label is that key's value. Facts are unordered, so a robust
//! policy should answer identically under every arrangement.
//!
//! The feature map gives the policy two routes to the answer. The *gated*
//! evidence block sees the matching fact with weight
//! `w(p) = 1 + position_bias * f(p)` where `f(p)` falls linearly from +1 at
//! the first rendered position to -1 at the last (clamped at zero), so for
//! `position_bias >= 1` an answer buried late in the context becomes
//! invisible to this block; non-matching facts additionally *leak* into the
//! block in proportion to `position_bias` and their earliness, so an early
//! distractor can outweigh a buried answer outright. The *stable* evidence
//! block always sees the matching fact but at a deliberately small scale,
//! so relying on it takes many more gradient steps. Order-stable accuracy is therefore learnable
//! but slow, while the gated route is fast and order-sensitive. With
//! `position_bias = 0` both blocks are position-independent and every
//! permutation of a group produces the same feature vector.
//!
//! Values are drawn from a skewed distribution (`value_skew` is the Zipf
//! exponent), so frequent values double as tempting fallback answers when
//! the gate silences the evidence.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{self, OrderedQuery, PromptElement, QueryGroup};
use crate::scalar::Real;
use crate::seed::derive_seed;

/// Task shape and bias strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskConfig {
    /// Facts per sample.
    pub n_facts: usize,
    /// Number of distinct keys facts can use.
    pub key_vocab: usize,
    /// Number of distinct values (also the answer vocabulary).
    pub value_vocab: usize,
    /// Strength of the positional weighting; 0 disables order sensitivity.
    pub position_bias: f64,
    /// Zipf exponent of the value distribution; 0 draws values uniformly.
    pub value_skew: f64,
    /// Fraction of the positional weight that non-matching facts leak into
    /// the evidence block.
    pub leak_scale: f64,
    /// Scale of the stable (position-independent) evidence block. Small by
    /// design: the order-stable route must exist but take visibly longer
    /// to learn than the gated route.
    pub stable_scale: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            n_facts: 4,
            key_vocab: 10,
            value_vocab: 8,
            position_bias: 2.5,
            value_skew: 1.75,
            leak_scale: 0.5,
            stable_scale: 0.15,
        }
    }
}

/// One drawn sample: facts, the questioned key, and its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySample {
    pub facts: Vec<(usize, usize)>,
    pub question_key: usize,
    pub label_value: usize,
}

/// A deterministic sample stream over the task distribution.
#[derive(Debug, Clone)]
pub struct ToyTask {
    cfg: ToyTaskConfig,
    seed: u64,
}

impl ToyTask {
    pub fn new(cfg: ToyTaskConfig, seed: u64) -> Result<Self> {
        if cfg.n_facts < 1 {
            return Err(Error::Config("n_facts must be at least 1".into()));
        }
        if cfg.key_vocab < 2 || cfg.value_vocab < 2 {
            return Err(Error::Config("vocab sizes must be at least 2".into()));
        }
        if cfg.key_vocab < cfg.n_facts {
            return Err(Error::Config(format!(
                "key_vocab {} too small to draw {} distinct keys",
                cfg.key_vocab, cfg.n_facts
            )));
        }
        if cfg.position_bias < 0.0 {
            return Err(Error::Config("position_bias must be >= 0".into()));
        }
        Ok(Self { cfg, seed })
    }

    pub fn config(&self) -> &ToyTaskConfig {
        &self.cfg
    }

    /// Answer vocabulary as strings, index-aligned with policy outputs.
    pub fn answer_labels(&self) -> Vec<String> {
        (0..self.cfg.value_vocab).map(answer_text).collect()
    }

    /// Draws sample `index`. Streams are counter-based: any subset of
    /// indices can be generated in any order with identical results.
    pub fn sample(&self, index: u64) -> ToySample {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        // partial Fisher-Yates over the key range for distinct keys
        let mut keys: Vec<usize> = (0..self.cfg.key_vocab).collect();
        for i in 0..self.cfg.n_facts {
            let j = rng.gen_range(i..keys.len());
            keys.swap(i, j);
        }
        let facts: Vec<(usize, usize)> = keys[..self.cfg.n_facts]
            .iter()
            .map(|&k| (k, self.draw_value(&mut rng)))
            .collect();
        let questioned = rng.gen_range(0..self.cfg.n_facts);
        ToySample {
            question_key: facts[questioned].0,
            label_value: facts[questioned].1,
            facts,
        }
    }

    /// Draws one value with probability proportional to 1/(v+1)^skew.
    fn draw_value<G: rand::Rng>(&self, rng: &mut G) -> usize {
        if self.cfg.value_skew == 0.0 {
            return rng.gen_range(0..self.cfg.value_vocab);
        }
        let weights: Vec<f64> = (0..self.cfg.value_vocab)
            .map(|v| 1.0 / ((v + 1) as f64).powf(self.cfg.value_skew))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (v, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return v;
            }
        }
        self.cfg.value_vocab - 1
    }

    /// Builds the permutation-variant group for sample `index`.
    pub fn sample_group(&self, index: u64, n_variants: usize) -> Result<QueryGroup> {
        let sample = self.sample(index);
        let elements: Vec<PromptElement> = sample
            .facts
            .iter()
            .enumerate()
            .map(|(i, &(k, v))| PromptElement {
                element_id: format!("f{i}"),
                text: fact_text(k, v),
            })
            .collect();
        grouping::build_variants(
            format!("toy-{index}"),
            elements,
            question_text(sample.question_key),
            answer_text(sample.label_value),
            n_variants,
            derive_seed(self.seed, &format!("perm/{index}")),
        )
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.cfg.value_vocab + 1
    }

    /// Gated positional weight at rendered position `p` among `n`:
    /// `1 + position_bias * f(p)` with `f` linear from +1 down to -1,
    /// clamped at 0.
    fn gate_weight(&self, p: usize, n: usize) -> f64 {
        let f = if n <= 1 {
            1.0
        } else {
            ((n - 1) as f64 - (2 * p) as f64) / (n - 1) as f64
        };
        (1.0 + self.cfg.position_bias * f).max(0.0)
    }

    /// Evidence leaked by a non-matching fact: decays from
    /// `position_bias * leak_scale` at the first position to 0 at the last.
    fn leak_weight(&self, p: usize, n: usize) -> f64 {
        let decay = if n <= 1 {
            1.0
        } else {
            (n - 1 - p) as f64 / (n - 1) as f64
        };
        self.cfg.position_bias * self.cfg.leak_scale * decay
    }

    /// Feature vector of a rendered variant.
    ///
    /// Layout: `[0, V)` gated evidence — the matching fact's value slot gets
    /// the position-gated weight; `[V, 2V)` stable evidence — the same slot
    /// at the fixed small `stable_scale`; `[2V, 3V)` plain value
    /// counts; `[3V]` constant bias. Queries not produced by this task are
    /// rejected.
    pub fn featurize<R: Real>(&self, query: &OrderedQuery) -> Result<Vec<R>> {
        let v = self.cfg.value_vocab;
        let lines: Vec<&str> = query.rendered_text.split('\n').collect();
        if lines.len() != self.cfg.n_facts + 1 {
            return Err(Error::Domain(format!(
                "query {} has {} lines, expected {}",
                query.group_id,
                lines.len(),
                self.cfg.n_facts + 1
            )));
        }
        let question_key = parse_question(lines[self.cfg.n_facts])
            .filter(|&k| k < self.cfg.key_vocab)
            .ok_or_else(|| {
                Error::Domain(format!("query {} has a foreign question line", query.group_id))
            })?;
        let mut features = vec![R::zero(); self.feature_dim()];
        let mut matches = 0usize;
        for (p, line) in lines[..self.cfg.n_facts].iter().enumerate() {
            let (key, value) = parse_fact(line)
                .filter(|&(k, val)| k < self.cfg.key_vocab && val < v)
                .ok_or_else(|| {
                    Error::Domain(format!("query {} has a foreign fact line", query.group_id))
                })?;
            if key == question_key {
                matches += 1;
                features[value] += R::of(self.gate_weight(p, self.cfg.n_facts));
                features[v + value] += R::of(self.cfg.stable_scale);
            } else {
                features[value] += R::of(self.leak_weight(p, self.cfg.n_facts));
            }
            features[2 * v + value] += R::one();
        }
        if matches != 1 {
            return Err(Error::Domain(format!(
                "query {} mentions the questioned key {matches} times, expected exactly once",
                query.group_id
            )));
        }
        features[3 * v] = R::one();
        Ok(features)
    }
}

pub fn fact_text(key: usize, value: usize) -> String {
    format!("k{key}: v{value}")
}

pub fn question_text(key: usize) -> String {
    format!("k{key}?")
}

pub fn answer_text(value: usize) -> String {
    format!("v{value}")
}

fn parse_question(line: &str) -> Option<usize> {
    line.strip_prefix('k')?.strip_suffix('?')?.parse().ok()
}

fn parse_fact(line: &str) -> Option<(usize, usize)> {
    let (k, v) = line.split_once(": ")?;
    Some((
        k.strip_prefix('k')?.parse().ok()?,
        v.strip_prefix('v')?.parse().ok()?,
    ))
}
