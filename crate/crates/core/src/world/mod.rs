//! Synthetic reef worlds.
//!
//! A [`GridWorld`] is the ground truth every other component observes: a
//! bathymetry map, a per-cell distribution over habitats, a per-habitat
//! distribution over visual words, and a per-cell snap emission rate. Images
//! are drawn from the habitat mixture at the vehicle's cell; hydrophone audio
//! is synthesized in [`audio`].

pub mod audio;

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, Grid};
use crate::rng::{substream, Domain};

pub use audio::{AudioParams, AudioWindow};

pub const WORLD_FORMAT: &str = "reefsurvey-world";
pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("position ({x:.3}, {y:.3}) is outside the world")]
    OutOfBounds { x: f64, y: f64 },
    #[error("n_words must be at least 1")]
    NoWords,
    #[error("audio sample rate {0} Hz is below the 48 kHz minimum")]
    SampleRate(u32),
    #[error("audio duration must be positive, got {0}")]
    Duration(f64),
    #[error("world file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// Parameters of the generative world model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub cell_size_m: f64,
    pub n_habitats: usize,
    pub vocab_size: usize,
    /// Snap rate (snaps/s) emitted by a cell fully covered by each habitat.
    pub habitat_snap_rates: Vec<f64>,
    /// Area share of each habitat; empty means equal shares.
    pub habitat_fractions: Vec<f64>,
    /// Lattice spacing of the value noise that shapes habitat patches.
    pub habitat_length_scale_m: f64,
    /// Blend of each cell's one-hot habitat with its 3x3 neighbourhood mean.
    pub habitat_blend: f64,
    /// Probability mass a habitat puts on its own block of words.
    pub appearance_purity: f64,
    pub mean_depth_m: f64,
    pub depth_variation_m: f64,
    pub depth_length_scale_m: f64,
    pub audio: AudioParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width_m: 20.0,
            height_m: 20.0,
            cell_size_m: 1.0,
            n_habitats: 3,
            vocab_size: 30,
            habitat_snap_rates: vec![0.0, 0.0, 30.0],
            habitat_fractions: Vec::new(),
            habitat_length_scale_m: 8.0,
            habitat_blend: 0.0,
            appearance_purity: 0.95,
            mean_depth_m: 8.0,
            depth_variation_m: 1.0,
            depth_length_scale_m: 15.0,
            audio: AudioParams::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: String| Err(WorldError::Config(msg));
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return bad(format!(
                "dimensions must be positive, got {} x {}",
                self.width_m, self.height_m
            ));
        }
        if !(self.cell_size_m > 0.0) {
            return bad(format!("cell_size_m must be positive, got {}", self.cell_size_m));
        }
        if self.n_habitats == 0 {
            return bad("n_habitats must be at least 1".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.n_habitats > self.vocab_size {
            return bad(format!(
                "n_habitats ({}) exceeds vocab_size ({})",
                self.n_habitats, self.vocab_size
            ));
        }
        if self.habitat_snap_rates.len() != self.n_habitats {
            return bad(format!(
                "habitat_snap_rates has {} entries for {} habitats",
                self.habitat_snap_rates.len(),
                self.n_habitats
            ));
        }
        if self.habitat_snap_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("habitat_snap_rates must be finite and non-negative".into());
        }
        if !self.habitat_fractions.is_empty() {
            if self.habitat_fractions.len() != self.n_habitats {
                return bad("habitat_fractions must have one entry per habitat".into());
            }
            if self.habitat_fractions.iter().any(|f| !(*f >= 0.0))
                || self.habitat_fractions.iter().sum::<f64>() <= 0.0
            {
                return bad("habitat_fractions must be non-negative with a positive sum".into());
            }
        }
        if !(self.habitat_length_scale_m > 0.0 && self.depth_length_scale_m > 0.0) {
            return bad("length scales must be positive".into());
        }
        if !(0.0..1.0).contains(&self.habitat_blend) {
            return bad("habitat_blend must lie in [0, 1)".into());
        }
        if !(self.appearance_purity > 0.0 && self.appearance_purity <= 1.0) {
            return bad("appearance_purity must lie in (0, 1]".into());
        }
        if !(self.mean_depth_m - self.depth_variation_m.abs() > 0.0) {
            return bad("mean_depth_m must exceed depth_variation_m so depth stays positive".into());
        }
        self.audio.validate()
    }
}

/// Ground-truth reef. Immutable after generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub width_m: f64,
    pub height_m: f64,
    pub grid: Grid,
    /// Seafloor depth per cell, metres, positive down.
    pub bathymetry: Vec<f64>,
    /// `habitat_field[cell][h] = P(h | cell)`.
    pub habitat_field: Vec<Vec<f64>>,
    /// `appearance[h][w] = P(w | h)`.
    pub appearance: Vec<Vec<f64>>,
    pub habitat_snap_rates: Vec<f64>,
    /// Per-cell Poisson snap rate, `sum_h P(h|cell) * rate_h`.
    pub snap_rate: Vec<f64>,
    pub audio: AudioParams,
    pub seed: u64,
}

/// Builds a world from `config`; a pure function of `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<GridWorld, WorldError> {
    config.validate()?;
    let grid = Grid::covering(config.width_m, config.height_m, config.cell_size_m);
    let h = config.n_habitats;

    let habitat_noise = ValueNoise::new(
        config.width_m,
        config.height_m,
        config.habitat_length_scale_m,
        &mut substream(seed, Domain::World, 0),
    );
    let labels = threshold_into_regions(&grid, &habitat_noise, &area_fractions(config));
    let habitat_field = blend_habitats(&grid, &labels, h, config.habitat_blend);

    let depth_noise = ValueNoise::new(
        config.width_m,
        config.height_m,
        config.depth_length_scale_m,
        &mut substream(seed, Domain::World, 1),
    );
    let bathymetry = grid
        .cells()
        .map(|c| {
            let (x, y) = grid.center(c);
            config.mean_depth_m + config.depth_variation_m * (2.0 * depth_noise.at(x, y) - 1.0)
        })
        .collect();

    let appearance = appearance_models(
        h,
        config.vocab_size,
        config.appearance_purity,
        &mut substream(seed, Domain::World, 2),
    );

    let snap_rate = habitat_field
        .iter()
        .map(|p| p.iter().zip(&config.habitat_snap_rates).map(|(p, r)| p * r).sum())
        .collect();

    Ok(GridWorld {
        width_m: config.width_m,
        height_m: config.height_m,
        grid,
        bathymetry,
        habitat_field,
        appearance,
        habitat_snap_rates: config.habitat_snap_rates.clone(),
        snap_rate,
        audio: config.audio.clone(),
        seed,
    })
}

fn area_fractions(config: &WorldConfig) -> Vec<f64> {
    if config.habitat_fractions.is_empty() {
        vec![1.0 / config.n_habitats as f64; config.n_habitats]
    } else {
        let total: f64 = config.habitat_fractions.iter().sum();
        config.habitat_fractions.iter().map(|f| f / total).collect()
    }
}

/// Ranks cells by noise value and cuts the ranking at the cumulative area
/// fractions, so habitat `h` gets exactly its share of cells (up to rounding).
fn threshold_into_regions(grid: &Grid, noise: &ValueNoise, fractions: &[f64]) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = grid
        .cells()
        .map(|c| {
            let (x, y) = grid.center(c);
            (noise.at(x, y), c.0)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let n = order.len();
    let mut cuts = Vec::with_capacity(fractions.len());
    let mut acc = 0.0;
    for f in fractions {
        acc += f;
        cuts.push(((acc * n as f64).round() as usize).min(n));
    }
    if let Some(last) = cuts.last_mut() {
        *last = n;
    }

    let mut labels = vec![0; n];
    let mut habitat = 0;
    for (rank, &(_, cell)) in order.iter().enumerate() {
        while rank >= cuts[habitat] {
            habitat += 1;
        }
        labels[cell] = habitat;
    }
    labels
}

fn blend_habitats(grid: &Grid, labels: &[usize], h: usize, blend: f64) -> Vec<Vec<f64>> {
    grid.cells()
        .map(|c| {
            let mut p = vec![0.0; h];
            p[labels[c.0]] = 1.0 - blend;
            if blend > 0.0 {
                let (ix, iy) = grid.coords(c);
                let mut counts = vec![0.0; h];
                let mut n = 0.0;
                for jy in iy.saturating_sub(1)..=(iy + 1).min(grid.ny - 1) {
                    for jx in ix.saturating_sub(1)..=(ix + 1).min(grid.nx - 1) {
                        counts[labels[grid.id(jx, jy).0]] += 1.0;
                        n += 1.0;
                    }
                }
                for (pk, ck) in p.iter_mut().zip(counts) {
                    *pk += blend * ck / n;
                }
            }
            normalize(&mut p);
            p
        })
        .collect()
}

/// Habitat `h` owns the contiguous word block `{w : w*H/V == h}` and puts
/// `purity` of its mass there, with randomized weights inside the block.
fn appearance_models(h: usize, v: usize, purity: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..h)
        .map(|habitat| {
            let own: Vec<bool> = (0..v).map(|w| w * h / v == habitat).collect();
            let n_own = own.iter().filter(|o| **o).count();
            let own_mass = if n_own == v { 1.0 } else { purity };
            let mut weights: Vec<f64> = own
                .iter()
                .map(|&is_own| {
                    let jitter = 0.5 + rng.random::<f64>();
                    if is_own {
                        own_mass * jitter / n_own as f64
                    } else {
                        (1.0 - own_mass) * jitter / (v - n_own) as f64
                    }
                })
                .collect();
            // renormalise each part separately so the block mass is exact
            let (own_sum, other_sum) = weights.iter().zip(&own).fold((0.0, 0.0), |(a, b), (w, o)| {
                if *o {
                    (a + w, b)
                } else {
                    (a, b + w)
                }
            });
            for (w, o) in weights.iter_mut().zip(&own) {
                if *o {
                    *w *= own_mass / own_sum;
                } else if other_sum > 0.0 {
                    *w *= (1.0 - own_mass) / other_sum;
                }
            }
            normalize(&mut weights);
            weights
        })
        .collect()
}

pub(crate) fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    }
}

/// Bilinear value noise with smoothstep easing on a square lattice.
struct ValueNoise {
    spacing: f64,
    nx: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(width: f64, height: f64, spacing: f64, rng: &mut impl Rng) -> Self {
        let nx = (width / spacing).ceil() as usize + 2;
        let ny = (height / spacing).ceil() as usize + 2;
        let values = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
        Self { spacing, nx, values }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bottom = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

impl GridWorld {
    pub fn n_habitats(&self) -> usize {
        self.appearance.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.appearance.first().map_or(0, Vec::len)
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Result<CellId, WorldError> {
        self.grid.cell_of(x, y).ok_or(WorldError::OutOfBounds { x, y })
    }

    pub fn depth_at(&self, x: f64, y: f64) -> Result<f64, WorldError> {
        Ok(self.bathymetry[self.cell_at(x, y)?.0])
    }

    /// Depth with out-of-bounds positions clamped onto the nearest edge cell.
    pub fn depth_clamped(&self, x: f64, y: f64) -> f64 {
        let eps = 1e-9;
        let cx = x.clamp(0.0, self.grid.width() - eps);
        let cy = y.clamp(0.0, self.grid.height() - eps);
        self.bathymetry[self.grid.cell_of(cx, cy).map_or(0, |c| c.0)]
    }

    /// Habitat with the largest probability in `cell` (lowest index on ties).
    pub fn dominant_habitat(&self, cell: CellId) -> usize {
        argmax(&self.habitat_field[cell.0])
    }

    /// Word distribution of an image taken in `cell`.
    pub fn word_mixture(&self, cell: CellId) -> Vec<f64> {
        let mut mix = vec![0.0; self.vocab_size()];
        for (p_h, appearance) in self.habitat_field[cell.0].iter().zip(&self.appearance) {
            for (m, p_w) in mix.iter_mut().zip(appearance) {
                *m += p_h * p_w;
            }
        }
        mix
    }

    /// Draws `n_words` i.i.d. visual words from the habitat mixture at
    /// `(x, y)` and returns their histogram over the vocabulary.
    pub fn sample_image_words(
        &self,
        x: f64,
        y: f64,
        n_words: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<u32>, WorldError> {
        if n_words == 0 {
            return Err(WorldError::NoWords);
        }
        let cell = self.cell_at(x, y)?;
        let mix = self.word_mixture(cell);
        let dist = WeightedIndex::new(&mix).map_err(|e| WorldError::Format(e.to_string()))?;
        let mut hist = vec![0u32; mix.len()];
        for _ in 0..n_words {
            hist[dist.sample(rng)] += 1;
        }
        Ok(hist)
    }

    /// Rate of audible snaps at `(x, y)`: every cell's emission thinned by
    /// geometric spreading `1 / (1 + r^2)`, `r` the distance to the cell centre.
    pub fn audible_snap_rate(&self, x: f64, y: f64) -> f64 {
        self.grid
            .cells()
            .filter(|c| self.snap_rate[c.0] > 0.0)
            .map(|c| {
                let (cx, cy) = self.grid.center(c);
                let r2 = (cx - x).powi(2) + (cy - y).powi(2);
                self.snap_rate[c.0] / (1.0 + r2)
            })
            .sum()
    }

    pub fn synthesize_audio(
        &self,
        x: f64,
        y: f64,
        duration_s: f64,
        fs: u32,
        thrusters_on: bool,
        rng: &mut impl Rng,
    ) -> Result<AudioWindow, WorldError> {
        self.cell_at(x, y)?;
        audio::synthesize(&self.audio, self.audible_snap_rate(x, y), duration_s, fs, thrusters_on, rng)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Format(m.to_string()));
        let n = self.grid.len();
        if self.bathymetry.len() != n || self.habitat_field.len() != n || self.snap_rate.len() != n {
            return bad("per-cell field length does not match the grid");
        }
        if self.bathymetry.iter().any(|d| !(*d > 0.0)) {
            return bad("bathymetry must be positive");
        }
        if self.snap_rate.iter().any(|r| !(*r >= 0.0)) {
            return bad("snap rates must be non-negative");
        }
        let sums_to_one = |p: &Vec<f64>| (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if !self.habitat_field.iter().all(sums_to_one) || !self.appearance.iter().all(sums_to_one) {
            return bad("probability vectors must sum to one");
        }
        if self.habitat_field.iter().any(|p| p.len() != self.n_habitats()) {
            return bad("habitat distribution length mismatch");
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, WorldError> {
        let file = WorldFile {
            format: WORLD_FORMAT.to_string(),
            version: WORLD_FORMAT_VERSION,
            world: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let file: WorldFile = serde_json::from_str(text)?;
        if file.format != WORLD_FORMAT {
            return Err(WorldError::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != WORLD_FORMAT_VERSION {
            return Err(WorldError::Format(format!("unsupported version {}", file.version)));
        }
        file.world.validate()?;
        Ok(file.world)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    format: String,
    version: u32,
    world: GridWorld,
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
