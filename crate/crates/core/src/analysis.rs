//! Linking the modalities: habitat to snap-rate regression, correlation,
//! habitat preference of tracked animals, co-occurrence and label matching.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::SnapRateSeries;
use crate::grid::{CellId, Grid};
use crate::topics::{TopicModel, TopicTimeseries};
use crate::world::GridWorld;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {need} windows, got {got}")]
    TooFewWindows { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("degenerate regression: {0}")]
    Degenerate(String),
    #[error("input is constant")]
    Constant,
    #[error("need at least 3 paired values, got {0}")]
    TooShort(usize),
    #[error("track is empty")]
    EmptyTrack,
    #[error("track position ({x:.3}, {y:.3}) is outside the map")]
    OutOfBounds { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Topic labels, in coefficient order.
    pub labels: Vec<u32>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub rss: f64,
    /// Normalized training targets and the fitted values.
    pub observed: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Raw-rate range used for min-max normalization.
    pub rate_min: f64,
    pub rate_max: f64,
}

/// Least squares with intercept of normalized snap rate on topic
/// proportions. Rates are min-max normalized to `[0, 1]` first.
///
/// Topic proportions sum to one, which makes the intercept collinear with
/// the topic columns. The centered system is solved through an SVD
/// pseudo-inverse, giving the minimum-norm coefficient vector (the limit of
/// a vanishing ridge on the topic coefficients), and the intercept is
/// recovered from the means so the residuals average to zero.
pub fn fit_shrimp_habitat(topic_vectors: &[Vec<f64>], snap_rates: &[f64], labels: &[u32]) -> Result<RegressionFit, AnalysisError> {
    let n = topic_vectors.len();
    let k = labels.len();
    if snap_rates.len() != n {
        return Err(AnalysisError::Dimension { expected: n, got: snap_rates.len() });
    }
    if n < k + 2 {
        return Err(AnalysisError::TooFewWindows { need: k + 2, got: n });
    }
    if let Some(v) = topic_vectors.iter().find(|v| v.len() != k) {
        return Err(AnalysisError::Dimension { expected: k, got: v.len() });
    }
    let rate_min = snap_rates.iter().copied().fold(f64::INFINITY, f64::min);
    let rate_max = snap_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(rate_max > rate_min) {
        return Err(AnalysisError::Degenerate("snap rates are constant".into()));
    }
    let y: Vec<f64> = snap_rates.iter().map(|r| (r - rate_min) / (rate_max - rate_min)).collect();

    let x_mean: Vec<f64> = (0..k).map(|j| topic_vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let columns: Vec<Vec<f64>> = (0..k).map(|j| topic_vectors.iter().map(|v| v[j] - x_mean[j]).collect()).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let coefficients = min_norm_least_squares(columns, &yc)?;
    let intercept = y_mean - x_mean.iter().zip(&coefficients).map(|(m, c)| m * c).sum::<f64>();
    let predictions = predict_rows(topic_vectors, &coefficients, intercept);
    let rss = y.iter().zip(&predictions).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(RegressionFit {
        labels: labels.to_vec(),
        coefficients,
        intercept,
        rss,
        observed: y,
        predictions,
        rate_min,
        rate_max,
    })
}

/// Minimum-norm solution of `A c ≈ b` for `A` given by columns, through a
/// one-sided Jacobi SVD. Singular values below `1e-8` of the largest are
/// treated as zero.
fn min_norm_least_squares(mut a: Vec<Vec<f64>>, b: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    let k = a.len();
    let mut v: Vec<Vec<f64>> = (0..k).map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    let (lo, hi) = m.split_at_mut(q);
                    for (xp, xq) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (ap, aq) = (*xp, *xq);
                        *xp = c * ap - s * aq;
                        *xq = s * ap + c * aq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let s_max = sigma.iter().copied().fold(0.0, f64::max);
    if !(s_max > 1e-12) {
        return Err(AnalysisError::Degenerate("topic proportions do not vary across windows".into()));
    }
    let mut x = vec![0.0; k];
    for j in (0..k).filter(|&j| sigma[j] > 1e-8 * s_max) {
        let w = dot(&a[j], b) / (sigma[j] * sigma[j]);
        for (xi, vi) in x.iter_mut().zip(&v[j]) {
            *xi += w * vi;
        }
    }
    Ok(x)
}

fn predict_rows(rows: &[Vec<f64>], coefficients: &[f64], intercept: f64) -> Vec<f64> {
    rows.iter()
        .map(|r| intercept + r.iter().zip(coefficients).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Applies the fitted affine map to topic vectors. Values are not clamped.
pub fn predict_snap_rate(fit: &RegressionFit, topic_vectors: &[Vec<f64>]) -> Result<Vec<f64>, AnalysisError> {
    let k = fit.coefficients.len();
    if let Some(v) = topic_vectors.iter().find(|v| v.len() != k) {
        return Err(AnalysisError::Dimension { expected: k, got: v.len() });
    }
    Ok(predict_rows(topic_vectors, &fit.coefficients, fit.intercept))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Dimension { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 3 {
        return Err(AnalysisError::TooShort(n));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(AnalysisError::Constant);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `P(habitat | cell)` over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitatMap {
    pub grid: Grid,
    pub cells: Vec<Vec<f64>>,
}

impl HabitatMap {
    pub fn from_world(world: &GridWorld) -> Self {
        Self { grid: world.grid, cells: world.habitat_field.clone() }
    }

    pub fn from_model(model: &TopicModel) -> Self {
        Self { grid: model.grid, cells: model.grid.cells().map(|c| model.habitat_distribution(c)).collect() }
    }

    pub fn n_habitats(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

/// Normalized visit histogram of a track over grid cells.
pub fn occupancy(track: &[[f64; 2]], grid: &Grid) -> Result<Vec<f64>, AnalysisError> {
    if track.is_empty() {
        return Err(AnalysisError::EmptyTrack);
    }
    let mut hist = vec![0.0; grid.len()];
    for &[x, y] in track {
        let c = grid.cell_of(x, y).ok_or(AnalysisError::OutOfBounds { x, y })?;
        hist[c.0] += 1.0;
    }
    let n = track.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    Ok(hist)
}

/// `P(habitat | animal) = sum_x P(habitat | x) P(x | animal)`.
pub fn habitat_preference(track: &[[f64; 2]], map: &HabitatMap) -> Result<Vec<f64>, AnalysisError> {
    let occ = occupancy(track, &map.grid)?;
    let mut pref = vec![0.0; map.n_habitats()];
    for (o, p) in occ.iter().zip(&map.cells).filter(|(o, _)| **o > 0.0) {
        for (acc, v) in pref.iter_mut().zip(p) {
            *acc += o * v;
        }
    }
    let s: f64 = pref.iter().sum();
    pref.iter_mut().for_each(|v| *v /= s);
    Ok(pref)
}

/// Inner product of the two tracks' occupancy distributions.
pub fn cooccurrence(track1: &[[f64; 2]], track2: &[[f64; 2]], grid: &Grid) -> Result<f64, AnalysisError> {
    let a = occupancy(track1, grid)?;
    let b = occupancy(track2, grid)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum())
}

/// Minimum-cost assignment of rows to columns for a rectangular cost
/// matrix with `rows <= cols`. Returns the column of each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // shortest augmenting path with potentials, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best one-to-one matching between predicted and true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatching {
    pub accuracy: f64,
    /// `(predicted label, true label)` pairs of the optimal matching.
    pub pairs: Vec<(usize, usize)>,
}

impl LabelMatching {
    pub fn true_for(&self, predicted: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == predicted).map(|p| p.1)
    }

    pub fn predicted_for(&self, truth: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == truth).map(|p| p.0)
    }
}

/// Fraction of items whose predicted label maps to their true label under
/// the count-maximizing one-to-one relabeling.
pub fn best_permutation_accuracy(predicted: &[usize], truth: &[usize]) -> Result<LabelMatching, AnalysisError> {
    if predicted.len() != truth.len() {
        return Err(AnalysisError::Dimension { expected: truth.len(), got: predicted.len() });
    }
    if predicted.is_empty() {
        return Err(AnalysisError::EmptyTrack);
    }
    let np = predicted.iter().max().unwrap() + 1;
    let nt = truth.iter().max().unwrap() + 1;
    let mut counts = vec![vec![0.0; nt]; np];
    for (&p, &t) in predicted.iter().zip(truth) {
        counts[p][t] += 1.0;
    }
    let transpose = np > nt;
    let (rows, cols) = if transpose { (nt, np) } else { (np, nt) };
    let cost: Vec<Vec<f64>> = (0..rows)
        .map(|r| (0..cols).map(|c| if transpose { -counts[c][r] } else { -counts[r][c] }).collect())
        .collect();
    let assign = hungarian(&cost);
    let pairs: Vec<(usize, usize)> = assign
        .iter()
        .enumerate()
        .map(|(r, &c)| if transpose { (c, r) } else { (r, c) })
        .collect();
    let hits: f64 = pairs.iter().map(|&(p, t)| counts[p][t]).sum();
    Ok(LabelMatching { accuracy: hits / predicted.len() as f64, pairs })
}

/// One drift window with its snap rate and the topic mixture of the transit
/// leg that led to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedWindow {
    pub t: f64,
    pub cell: CellId,
    pub rate: f64,
    pub topics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pairing {
    pub windows: Vec<PairedWindow>,
    /// Start times of drift windows without imagery on their leg.
    pub unpaired: Vec<f64>,
}

/// Pairs each drift window with the mean topic vector of the images taken
/// since the previous drift ended.
pub fn pair_windows(rates: &SnapRateSeries, topics: &TopicTimeseries) -> Pairing {
    let mut out = Pairing::default();
    let mut leg_start = f64::NEG_INFINITY;
    for r in &rates.rates {
        match topics.mean_between(leg_start, r.t) {
            Some(mix) => out.windows.push(PairedWindow { t: r.t, cell: r.cell, rate: r.rate, topics: mix }),
            None => out.unpaired.push(r.t),
        }
        leg_start = r.t + r.duration;
    }
    out
}

/// Regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Topics whose mean share over the paired windows is below this are
    /// left out of the design; the remaining shares are renormalized.
    pub min_topic_share: f64,
    /// Topics whose word distributions lie within this Hellinger distance
    /// of each other are pooled into one regressor.
    pub merge_distance: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { min_topic_share: 0.05, merge_distance: 0.5 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(0.0..1.0).contains(&self.min_topic_share) {
            return Err(AnalysisError::Degenerate(format!(
                "min_topic_share must lie in [0, 1), got {}",
                self.min_topic_share
            )));
        }
        if !(0.0..=1.0).contains(&self.merge_distance) {
            return Err(AnalysisError::Degenerate(format!(
                "merge_distance must lie in [0, 1], got {}",
                self.merge_distance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrimpHabitatReport {
    pub fit: RegressionFit,
    pub pearson_r: f64,
    /// Topic labels pooled into each regressor, in coefficient order.
    pub groups: Vec<Vec<u32>>,
    /// Labels of topics left out of the design, with their mean share.
    pub excluded: Vec<(u32, f64)>,
    pub windows: Vec<PairedWindow>,
    pub unpaired: Vec<f64>,
}

/// Keeps the topics with enough mean share and renormalizes each vector
/// over them. Returns the kept column indices.
pub fn select_topics(vectors: &[Vec<f64>], min_share: f64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = vectors.first().map_or(0, Vec::len);
    let n = vectors.len().max(1) as f64;
    let means: Vec<f64> = (0..k).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let mut kept: Vec<usize> = (0..k).filter(|&j| means[j] >= min_share).collect();
    if kept.is_empty() && k > 0 {
        kept.push(argmax_index(&means));
    }
    let reduced = vectors
        .iter()
        .map(|v| {
            let mut r: Vec<f64> = kept.iter().map(|&j| v[j]).collect();
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter_mut().for_each(|x| *x /= s);
            }
            r
        })
        .collect();
    (kept, reduced)
}

fn argmax_index(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// Complete-linkage grouping of topics by Hellinger distance between their
/// word distributions: a topic joins the first group all of whose members
/// lie within `max_distance`. Returns the group index of every topic.
pub fn group_topics(word_distributions: &[Vec<f64>], max_distance: f64) -> Vec<usize> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of = Vec::with_capacity(word_distributions.len());
    for (i, p) in word_distributions.iter().enumerate() {
        let found = groups
            .iter()
            .position(|g| g.iter().all(|&j| hellinger(p, &word_distributions[j]) < max_distance));
        let g = found.unwrap_or_else(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
        group_of.push(g);
    }
    group_of
}

/// Regression of drift-window snap rates on the leg topic mixtures.
/// Near-duplicate topics are pooled, minor pooled topics are dropped and the
/// rest renormalized before fitting.
pub fn shrimp_habitat_report(
    pairing: &Pairing,
    labels: &[u32],
    word_distributions: &[Vec<f64>],
    config: &AnalysisConfig,
) -> Result<ShrimpHabitatReport, AnalysisError> {
    config.validate()?;
    let k = labels.len();
    if word_distributions.len() != k {
        return Err(AnalysisError::Dimension { expected: k, got: word_distributions.len() });
    }
    if pairing.windows.is_empty() {
        return Err(AnalysisError::TooFewWindows { need: 3, got: 0 });
    }
    if let Some(w) = pairing.windows.iter().find(|w| w.topics.len() != k) {
        return Err(AnalysisError::Dimension { expected: k, got: w.topics.len() });
    }
    let group_of = group_topics(word_distributions, config.merge_distance);
    let n_groups = group_of.iter().max().map_or(0, |g| g + 1);
    let members: Vec<Vec<u32>> = (0..n_groups)
        .map(|g| (0..k).filter(|&j| group_of[j] == g).map(|j| labels[j]).collect())
        .collect();
    let pooled: Vec<Vec<f64>> = pairing
        .windows
        .iter()
        .map(|w| {
            let mut v = vec![0.0; n_groups];
            for (j, p) in w.topics.iter().enumerate() {
                v[group_of[j]] += p;
            }
            v
        })
        .collect();
    let (kept, reduced) = select_topics(&pooled, config.min_topic_share);
    let n = pooled.len() as f64;
    let excluded = (0..n_groups)
        .filter(|g| !kept.contains(g))
        .flat_map(|g| {
            let share = pooled.iter().map(|v| v[g]).sum::<f64>() / n;
            members[g].iter().map(move |&l| (l, share))
        })
        .collect();
    let groups: Vec<Vec<u32>> = kept.iter().map(|&g| members[g].clone()).collect();
    let kept_labels: Vec<u32> = groups.iter().map(|m| m[0]).collect();
    let rates: Vec<f64> = pairing.windows.iter().map(|w| w.rate).collect();
    let fit = fit_shrimp_habitat(&reduced, &rates, &kept_labels)?;
    let pearson_r = pearson(&fit.observed, &fit.predictions)?;
    Ok(ShrimpHabitatReport {
        fit,
        pearson_r,
        groups,
        excluded,
        windows: pairing.windows.clone(),
        unpaired: pairing.unpaired.clone(),
    })
}

impl ShrimpHabitatReport {
    /// `t,cell_x,cell_y,raw_rate,observed,predicted`
    pub fn rates_csv(&self, grid: &Grid) -> String {
        let mut out = String::from("t,cell_x,cell_y,raw_rate,observed,predicted\n");
        for ((w, o), p) in self.windows.iter().zip(&self.fit.observed).zip(&self.fit.predictions) {
            let (x, y) = grid.coords(w.cell);
            let _ = writeln!(out, "{},{},{},{},{},{}", w.t, x, y, w.rate, o, p);
        }
        out
    }

    /// `term,coefficient` with the intercept first.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("term,coefficient\n");
        let _ = writeln!(out, "intercept,{}", self.fit.intercept);
        for (g, c) in self.groups.iter().zip(&self.fit.coefficients) {
            let name: Vec<String> = g.iter().map(|l| format!("topic_{l}")).collect();
            let _ = writeln!(out, "{},{c}", name.join("+"));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let summary = serde_json::json!({
            "windows": self.windows.len(),
            "unpaired_windows": self.unpaired.len(),
            "excluded_topics": self.excluded.iter()
                .map(|(l, m)| serde_json::json!({"topic": l, "group_mean_share": m}))
                .collect::<Vec<_>>(),
            "pearson_r": self.pearson_r,
            "rss": self.fit.rss,
            "intercept": self.fit.intercept,
            "coefficients": self.groups.iter().zip(&self.fit.coefficients)
                .map(|(g, c)| serde_json::json!({"topics": g, "coefficient": c}))
                .collect::<Vec<_>>(),
            "rate_min": self.fit.rate_min,
            "rate_max": self.fit.rate_max,
        });
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
    }

    /// Observed (solid) and predicted (dashed) normalized rates per window.
    pub fn svg(&self) -> String {
        let (w, h, pad) = (720.0, 320.0, 40.0);
        let n = self.fit.observed.len().max(2);
        let clamp = |v: f64| v.clamp(-0.1, 1.1);
        let xs = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
        let ys = |v: f64| h - pad - (h - 2.0 * pad) * (clamp(v) + 0.1) / 1.2;
        let line = |vals: &[f64]| {
            vals.iter()
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", xs(i), ys(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<line x1="{pad}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            h - pad,
            w - pad,
            h - pad
        );
        let _ = writeln!(out, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{:.2}" stroke="black"/>"#, h - pad);
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
            line(&self.fit.observed)
        );
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" stroke-dasharray="6 4" points="{}"/>"#,
            line(&self.fit.predictions)
        );
        let _ = writeln!(
            out,
            r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="12">normalized snap rate per drift window: observed (solid), predicted from imagery (dashed), r = {:.3}</text>"#,
            self.pearson_r
        );
        out.push_str("</svg>\n");
        out
    }
}
