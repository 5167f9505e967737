//! Spatial topic model over visual words, sampled with collapsed Gibbs.
//!
//! Topics play the role of habitat types. A token with word `w` seen in cell
//! `c` takes topic `k` with weight
//! `(n[w][k] + beta) / (n[k] + V beta) * (m[N(c)][k] + alpha)`, where `N(c)`
//! is the cell and its 4-neighbours; a fresh topic competes with weight
//! `gamma / V` until `k_max` topics exist.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, Grid};
use crate::mission::MissionLog;

pub const CHECKPOINT_FORMAT: &str = "reefsurvey-topic-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("histogram has {got} bins, vocabulary has {expected}")]
    Histogram { got: usize, expected: usize },
    #[error("cell {0:?} is outside the model grid")]
    Cell(CellId),
    #[error("invalid topic config: {0}")]
    Config(String),
    #[error("mission log has no imaging records")]
    NoImages,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k_max: usize,
    /// Sweeps run after the survey pass.
    pub refine_sweeps: usize,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.5, gamma: 0.01, k_max: 20, refine_sweeps: 50 }
    }
}

impl TopicConfig {
    pub fn validate(&self) -> Result<(), TopicError> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma >= 0.0) {
            return Err(TopicError::Config("alpha and beta must be positive, gamma non-negative".into()));
        }
        if self.k_max == 0 {
            return Err(TopicError::Config("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub cell: u32,
    pub word: u32,
    pub topic: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub config: TopicConfig,
    pub grid: Grid,
    pub vocab_size: usize,
    /// Active topics; indices `0..n_topics` are in use.
    pub n_topics: usize,
    /// Word-topic counts, `[w * k_max + k]`.
    pub word_topic: Vec<u32>,
    pub topic_totals: Vec<u32>,
    /// Cell-topic counts, `[c * k_max + k]`.
    pub cell_topic: Vec<u32>,
    pub tokens: Vec<Token>,
    /// Stable label of each active topic index.
    pub labels: Vec<u32>,
    pub next_label: u32,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: TopicModel,
}

impl TopicModel {
    pub fn new(grid: Grid, vocab_size: usize, config: TopicConfig) -> Result<Self, TopicError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(TopicError::Config("vocabulary must be non-empty".into()));
        }
        let k = config.k_max;
        Ok(Self {
            word_topic: vec![0; vocab_size * k],
            topic_totals: vec![0; k],
            cell_topic: vec![0; grid.len() * k],
            tokens: Vec::new(),
            n_topics: 1,
            labels: vec![0],
            next_label: 1,
            vocab_size,
            grid,
            config,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    fn k_max(&self) -> usize {
        self.config.k_max
    }

    fn add(&mut self, t: Token) {
        let km = self.k_max();
        self.word_topic[t.word as usize * km + t.topic as usize] += 1;
        self.topic_totals[t.topic as usize] += 1;
        self.cell_topic[t.cell as usize * km + t.topic as usize] += 1;
    }

    fn remove(&mut self, t: Token) {
        let km = self.k_max();
        self.word_topic[t.word as usize * km + t.topic as usize] -= 1;
        self.topic_totals[t.topic as usize] -= 1;
        self.cell_topic[t.cell as usize * km + t.topic as usize] -= 1;
    }

    /// Topic counts summed over a cell and its 4-neighbours.
    fn neighbourhood_counts(&self, cell: CellId, out: &mut [f64]) {
        let km = self.k_max();
        out.iter_mut().for_each(|v| *v = 0.0);
        for c in self.grid.neighborhood(cell) {
            let row = &self.cell_topic[c.0 * km..c.0 * km + self.n_topics];
            for (o, &m) in out.iter_mut().zip(row) {
                *o += m as f64;
            }
        }
    }

    /// Fills `weights` with the unnormalized conditional over the active
    /// topics plus, when room remains, one slot for a new topic.
    fn conditional(&self, word: usize, cell: CellId, weights: &mut Vec<f64>) {
        let k = self.n_topics;
        let km = self.k_max();
        let v_beta = self.vocab_size as f64 * self.config.beta;
        weights.resize(k, 0.0);
        self.neighbourhood_counts(cell, weights);
        for (j, w) in weights.iter_mut().enumerate() {
            let phi = (self.word_topic[word * km + j] as f64 + self.config.beta) / (self.topic_totals[j] as f64 + v_beta);
            *w = phi * (*w + self.config.alpha);
        }
        if k < km {
            weights.push(self.config.gamma / self.vocab_size as f64);
        }
    }

    fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    fn open_topic(&mut self) -> usize {
        let k = self.n_topics;
        self.n_topics += 1;
        self.labels.push(self.next_label);
        self.next_label += 1;
        k
    }

    fn sample_token(&mut self, cell: CellId, word: usize, weights: &mut Vec<f64>, rng: &mut impl Rng) -> u32 {
        self.conditional(word, cell, weights);
        let mut k = Self::draw(weights, rng);
        if k == self.n_topics {
            k = self.open_topic();
        }
        k as u32
    }

    /// Adds the tokens of one image, in random order, each sampled from the
    /// current conditional.
    pub fn observe(&mut self, cell: CellId, histogram: &[u32], rng: &mut impl Rng) -> Result<(), TopicError> {
        if histogram.len() != self.vocab_size {
            return Err(TopicError::Histogram { got: histogram.len(), expected: self.vocab_size });
        }
        if cell.0 >= self.grid.len() {
            return Err(TopicError::Cell(cell));
        }
        let mut words: Vec<usize> = histogram.iter().enumerate().flat_map(|(w, &n)| std::iter::repeat_n(w, n as usize)).collect();
        words.shuffle(rng);
        let mut weights = Vec::with_capacity(self.k_max() + 1);
        for w in words {
            let topic = self.sample_token(cell, w, &mut weights, rng);
            let t = Token { cell: cell.0 as u32, word: w as u32, topic };
            self.add(t);
            self.tokens.push(t);
        }
        Ok(())
    }

    /// Resamples every token assignment `n_sweeps` times. Topics left empty
    /// after a sweep are retired, except topic 0.
    pub fn gibbs_refine(&mut self, n_sweeps: usize, rng: &mut impl Rng) {
        let mut weights = Vec::with_capacity(self.k_max() + 1);
        for _ in 0..n_sweeps {
            for i in 0..self.tokens.len() {
                let t = self.tokens[i];
                self.remove(t);
                let topic = self.sample_token(CellId(t.cell as usize), t.word as usize, &mut weights, rng);
                let t = Token { topic, ..t };
                self.add(t);
                self.tokens[i] = t;
            }
            self.retire_empty();
        }
    }

    fn retire_empty(&mut self) {
        let km = self.k_max();
        // old index -> new index for kept topics
        let mut remap = vec![u32::MAX; km];
        let mut kept = 0usize;
        for k in 0..self.n_topics {
            if k == 0 || self.topic_totals[k] > 0 {
                remap[k] = kept as u32;
                kept += 1;
            }
        }
        if kept == self.n_topics {
            return;
        }
        let active = self.n_topics;
        let compact = |table: &mut Vec<u32>, rows: usize| {
            for r in 0..rows {
                let row = &mut table[r * km..(r + 1) * km];
                let old: Vec<u32> = row.to_vec();
                row.iter_mut().for_each(|v| *v = 0);
                for (k, &n) in old.iter().enumerate().take(active) {
                    if remap[k] != u32::MAX {
                        row[remap[k] as usize] = n;
                    }
                }
            }
        };
        compact(&mut self.word_topic, self.vocab_size);
        compact(&mut self.cell_topic, self.grid.len());
        compact(&mut self.topic_totals, 1);
        for t in &mut self.tokens {
            t.topic = remap[t.topic as usize];
        }
        self.labels = (0..self.n_topics).filter(|&k| remap[k] != u32::MAX).map(|k| self.labels[k]).collect();
        self.n_topics = kept;
    }

    /// `P(topic | cell)` from the cell's own counts.
    pub fn habitat_distribution(&self, cell: CellId) -> Vec<f64> {
        let km = self.k_max();
        let k = self.n_topics;
        let row = &self.cell_topic[cell.0 * km..cell.0 * km + k];
        let total: u32 = row.iter().sum();
        let denom = total as f64 + k as f64 * self.config.alpha;
        row.iter().map(|&m| (m as f64 + self.config.alpha) / denom).collect()
    }

    /// Dominant topic index of every cell that holds tokens.
    pub fn cell_labels(&self) -> Vec<Option<usize>> {
        let km = self.k_max();
        (0..self.grid.len())
            .map(|c| {
                let row = &self.cell_topic[c * km..c * km + self.n_topics];
                if row.iter().all(|&m| m == 0) {
                    None
                } else {
                    Some(crate::world::argmax(&row.iter().map(|&m| m as f64).collect::<Vec<_>>()))
                }
            })
            .collect()
    }

    /// Word distribution of each active topic.
    pub fn topic_word_distributions(&self) -> Vec<Vec<f64>> {
        let km = self.k_max();
        let v_beta = self.vocab_size as f64 * self.config.beta;
        (0..self.n_topics)
            .map(|k| {
                (0..self.vocab_size)
                    .map(|w| (self.word_topic[w * km + k] as f64 + self.config.beta) / (self.topic_totals[k] as f64 + v_beta))
                    .collect()
            })
            .collect()
    }

    /// Posterior topic mixture of an image's tokens: each token's
    /// conditional (without the new-topic slot) normalized, averaged over
    /// tokens.
    pub fn image_mixture(&self, cell: CellId, histogram: &[u32]) -> Result<Vec<f64>, TopicError> {
        if histogram.len() != self.vocab_size {
            return Err(TopicError::Histogram { got: histogram.len(), expected: self.vocab_size });
        }
        if cell.0 >= self.grid.len() {
            return Err(TopicError::Cell(cell));
        }
        let k = self.n_topics;
        let total: u32 = histogram.iter().sum();
        if total == 0 {
            return Ok(self.habitat_distribution(cell));
        }
        let mut mix = vec![0.0; k];
        let mut weights = Vec::with_capacity(k + 1);
        for (w, &n) in histogram.iter().enumerate().filter(|(_, n)| **n > 0) {
            self.conditional(w, cell, &mut weights);
            weights.truncate(k);
            let z: f64 = weights.iter().sum();
            for (m, p) in mix.iter_mut().zip(&weights) {
                *m += n as f64 * p / z;
            }
        }
        mix.iter_mut().for_each(|m| *m /= total as f64);
        renormalize(&mut mix);
        Ok(mix)
    }

    /// Per-token perplexity of held-out images under the current model.
    pub fn perplexity(&self, images: &[(CellId, Vec<u32>)]) -> f64 {
        let phi = self.topic_word_distributions();
        let mut ll = 0.0;
        let mut n = 0u64;
        let mut counts = vec![0.0; self.n_topics];
        for (cell, hist) in images {
            self.neighbourhood_counts(*cell, &mut counts);
            let denom: f64 = counts.iter().sum::<f64>() + self.n_topics as f64 * self.config.alpha;
            let theta: Vec<f64> = counts.iter().map(|m| (m + self.config.alpha) / denom).collect();
            for (w, &c) in hist.iter().enumerate().filter(|(_, c)| **c > 0) {
                let p: f64 = theta.iter().zip(&phi).map(|(t, f)| t * f[w]).sum();
                ll += c as f64 * p.ln();
                n += c as u64;
            }
        }
        (-ll / n.max(1) as f64).exp()
    }

    /// Recounts every table from the token list and checks the bookkeeping.
    pub fn check_invariants(&self) -> Result<(), String> {
        let km = self.k_max();
        let k = self.n_topics;
        if k == 0 || k > km {
            return Err(format!("active topic count {k} outside 1..={km}"));
        }
        if self.labels.len() != k {
            return Err(format!("{} labels for {k} topics", self.labels.len()));
        }
        let mut wt = vec![0u32; self.word_topic.len()];
        let mut tt = vec![0u32; km];
        let mut ct = vec![0u32; self.cell_topic.len()];
        for t in &self.tokens {
            if t.topic as usize >= k {
                return Err(format!("token assigned to inactive topic {}", t.topic));
            }
            wt[t.word as usize * km + t.topic as usize] += 1;
            tt[t.topic as usize] += 1;
            ct[t.cell as usize * km + t.topic as usize] += 1;
        }
        if wt != self.word_topic || tt != self.topic_totals || ct != self.cell_topic {
            return Err("count tables disagree with token assignments".into());
        }
        for j in 0..km {
            let col: u32 = (0..self.vocab_size).map(|w| self.word_topic[w * km + j]).sum();
            if col != self.topic_totals[j] {
                return Err(format!("word column {j} sums to {col}, total is {}", self.topic_totals[j]));
            }
        }
        if self.topic_totals.iter().map(|&n| n as usize).sum::<usize>() != self.tokens.len() {
            return Err("topic totals do not add up to the token count".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, TopicError> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, TopicError> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.format != CHECKPOINT_FORMAT || cp.version != CHECKPOINT_VERSION {
            return Err(TopicError::Checkpoint(format!("unsupported checkpoint {:?} v{}", cp.format, cp.version)));
        }
        let m = cp.model;
        let km = m.config.k_max;
        if m.word_topic.len() != m.vocab_size * km || m.cell_topic.len() != m.grid.len() * km || m.topic_totals.len() != km {
            return Err(TopicError::Checkpoint("table shapes do not match the header".into()));
        }
        if m.tokens.iter().any(|t| t.word as usize >= m.vocab_size || t.cell as usize >= m.grid.len()) {
            return Err(TopicError::Checkpoint("token outside vocabulary or grid".into()));
        }
        m.check_invariants().map_err(TopicError::Checkpoint)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), TopicError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TopicError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn renormalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|v| *v /= s);
    }
}

/// Feeds every imaging record of a log to the model in time order.
pub fn observe_log(model: &mut TopicModel, log: &MissionLog, rng: &mut impl Rng) -> Result<usize, TopicError> {
    let mut n = 0;
    for r in log.image_records() {
        model.observe(r.cell, r.words.as_deref().unwrap_or_default(), rng)?;
        n += 1;
    }
    if n == 0 {
        return Err(TopicError::NoImages);
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSample {
    pub t: f64,
    pub cell: CellId,
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTimeseries {
    /// Stable labels of the columns of `proportions`.
    pub labels: Vec<u32>,
    pub samples: Vec<TopicSample>,
}

/// `P(topic | image, t)` for every imaging record of the log.
pub fn habitat_timeseries(model: &TopicModel, log: &MissionLog) -> Result<TopicTimeseries, TopicError> {
    let samples = log
        .image_records()
        .map(|r| {
            Ok(TopicSample {
                t: r.t,
                cell: r.cell,
                proportions: model.image_mixture(r.cell, r.words.as_deref().unwrap_or_default())?,
            })
        })
        .collect::<Result<Vec<_>, TopicError>>()?;
    if samples.is_empty() {
        return Err(TopicError::NoImages);
    }
    Ok(TopicTimeseries { labels: model.labels.clone(), samples })
}

impl TopicTimeseries {
    /// Mean mixture of the images taken in `(after, before]`, or `None` when
    /// no image falls in the interval.
    pub fn mean_between(&self, after: f64, before: f64) -> Option<Vec<f64>> {
        let picked: Vec<&TopicSample> = self.samples.iter().filter(|s| s.t > after && s.t <= before).collect();
        if picked.is_empty() {
            return None;
        }
        let mut mean = vec![0.0; self.labels.len()];
        for s in &picked {
            for (m, p) in mean.iter_mut().zip(&s.proportions) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= picked.len() as f64);
        renormalize(&mut mean);
        Some(mean)
    }

    /// `t,topic_<label>,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for l in &self.labels {
            let _ = write!(out, ",topic_{l}");
        }
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{}", s.t);
            for p in &s.proportions {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
        out
    }
}
