//! Spectrogram front-end and the snapping-shrimp snap detector.
//!
//! A snap is a local maximum of in-band energy that clears two relative
//! thresholds computed per window: `mean + threshold_sigma * std` and
//! `min_peak_ratio * median`. Both scale with the audio gain, so detected
//! counts do not depend on recording level.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::CellId;
use crate::mission::{MissionLog, Mode};
use crate::world::AudioWindow;

#[derive(Debug, Error, PartialEq)]
pub enum AcousticsError {
    #[error("window length {0} must be a power of two >= 64")]
    Window(usize),
    #[error("hop {hop} must lie in 1..={window}")]
    Hop { hop: usize, window: usize },
    #[error("{n} samples is shorter than one {window}-sample window")]
    TooShort { n: usize, window: usize },
    #[error("band [{lo}, {hi}] Hz is empty or exceeds Nyquist")]
    Band { lo: f64, hi: f64 },
    #[error("energy series has {0} frames, at least 8 are required")]
    SeriesTooShort(usize),
    #[error("audio window is saturated by thruster noise")]
    Saturated,
    #[error("mission log contains no drift windows")]
    NoDriftWindows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowFn {
    Hann,
}

/// Magnitude-squared short-time spectrum, one-sided, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub fs: u32,
    pub window: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
}

/// Periodic Hann window, `sin^2(pi n / N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin().powi(2)).collect()
}

pub fn stft(samples: &[f64], fs: u32, window: usize, hop: usize) -> Result<Spectrogram, AcousticsError> {
    if window < 64 || !window.is_power_of_two() {
        return Err(AcousticsError::Window(window));
    }
    if hop == 0 || hop > window {
        return Err(AcousticsError::Hop { hop, window });
    }
    if samples.len() < window {
        return Err(AcousticsError::TooShort { n: samples.len(), window });
    }
    let n_frames = (samples.len() - window) / hop + 1;
    let n_bins = window / 2 + 1;
    let taper = hann(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = Vec::with_capacity(n_frames * n_bins);
    for f in 0..n_frames {
        let frame = &samples[f * hop..f * hop + window];
        for ((b, x), w) in buf.iter_mut().zip(frame).zip(&taper) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        power.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram { power, n_frames, n_bins, fs, window, hop, window_fn: WindowFn::Hann })
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.power[i * self.n_bins..(i + 1) * self.n_bins]
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.fs as f64 / self.window as f64
    }

    /// Energy of the windowed frame recovered from its spectrum:
    /// `sum_n (w[n] x[n])^2`.
    pub fn frame_energy(&self, i: usize) -> f64 {
        let p = self.frame(i);
        let last = self.n_bins - 1;
        let inner: f64 = p[1..last].iter().sum();
        (p[0] + p[last] + 2.0 * inner) / self.window as f64
    }

    /// Mean of the squared window, the factor relating windowed to raw energy.
    pub fn window_power_gain(&self) -> f64 {
        hann(self.window).iter().map(|w| w * w).sum::<f64>() / self.window as f64
    }

    /// Time of the first sample of frame `i`, seconds from the window start.
    pub fn frame_start(&self, i: usize) -> f64 {
        (i * self.hop) as f64 / self.fs as f64
    }
}

/// Per-frame in-band energy of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergy {
    pub values: Vec<f64>,
    pub fs: u32,
    pub window: usize,
    pub hop: usize,
    pub band: (f64, f64),
    pub n_samples: usize,
    pub saturated: bool,
}

impl BandEnergy {
    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.fs as f64
    }
}

/// Sums power over the bins whose centre frequency lies in `[f_lo, f_hi]`.
pub fn band_energy(spectrogram: &Spectrogram, f_lo: f64, f_hi: f64) -> Result<Vec<f64>, AcousticsError> {
    let nyquist = spectrogram.fs as f64 / 2.0;
    if !(f_lo < f_hi && f_hi <= nyquist && f_lo >= 0.0) {
        return Err(AcousticsError::Band { lo: f_lo, hi: f_hi });
    }
    let bins: Vec<usize> = (0..spectrogram.n_bins).filter(|&k| (f_lo..=f_hi).contains(&spectrogram.bin_hz(k))).collect();
    if bins.is_empty() {
        return Err(AcousticsError::Band { lo: f_lo, hi: f_hi });
    }
    let (first, last) = (bins[0], bins[bins.len() - 1]);
    Ok((0..spectrogram.n_frames).map(|i| spectrogram.frame(i)[first..=last].iter().sum()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub window: usize,
    pub hop: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub threshold_sigma: f64,
    pub refractory_ms: f64,
    /// Peaks must also reach this multiple of the window's median band energy.
    pub min_peak_ratio: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 1024,
            hop: 512,
            band_lo_hz: 2000.0,
            band_hi_hz: 24000.0,
            threshold_sigma: 0.1,
            refractory_ms: 5.0,
            min_peak_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapDetection {
    /// Estimated snap times, seconds from the window start, sorted.
    pub times: Vec<f64>,
    pub count: usize,
    pub rate: f64,
    pub band: (f64, f64),
    pub threshold_sigma: f64,
}

pub fn window_band_energy(samples: &[f64], fs: u32, saturated: bool, cfg: &DetectorConfig) -> Result<BandEnergy, AcousticsError> {
    let spectrogram = stft(samples, fs, cfg.window, cfg.hop)?;
    Ok(BandEnergy {
        values: band_energy(&spectrogram, cfg.band_lo_hz, cfg.band_hi_hz)?,
        fs,
        window: cfg.window,
        hop: cfg.hop,
        band: (cfg.band_lo_hz, cfg.band_hi_hz),
        n_samples: samples.len(),
        saturated,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn detect_snaps(energy: &BandEnergy, cfg: &DetectorConfig) -> Result<SnapDetection, AcousticsError> {
    if energy.saturated {
        return Err(AcousticsError::Saturated);
    }
    let e = &energy.values;
    if e.len() < 8 {
        return Err(AcousticsError::SeriesTooShort(e.len()));
    }
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    let std = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let finish = |times: Vec<f64>| SnapDetection {
        count: times.len(),
        rate: times.len() as f64 / energy.duration(),
        times,
        band: energy.band,
        threshold_sigma: cfg.threshold_sigma,
    };
    // relative, so the rule is independent of recording gain
    if std <= 1e-12 * mean.abs() {
        return Ok(finish(Vec::new()));
    }
    let base = median(e);
    let threshold = (mean + cfg.threshold_sigma * std).max(cfg.min_peak_ratio * base);

    // (time, peak energy) of every qualifying local maximum
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 0..e.len() {
        let left = if i > 0 { e[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < e.len() { e[i + 1] } else { f64::NEG_INFINITY };
        if e[i] > threshold && e[i] > left && e[i] >= right {
            peaks.push((refine_time(e, i, base, energy), e[i]));
        }
    }

    let gap = cfg.refractory_ms * 1e-3;
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match merged.last_mut() {
            Some(last) if p.0 - last.0 < gap => {
                if p.1 > last.1 {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }
    Ok(finish(merged.into_iter().map(|(t, _)| t).collect()))
}

/// Locates a burst inside peak frame `i` from the energy it leaked into the
/// stronger neighbouring frame. For a periodic Hann window and half-window
/// hop, a short burst `d` samples from the frame centre toward that
/// neighbour puts energies in the ratio `tan^4(pi d / N)`.
fn refine_time(e: &[f64], i: usize, base: f64, energy: &BandEnergy) -> f64 {
    let n = energy.window as f64;
    let centre = (i * energy.hop) as f64 + n / 2.0;
    let excess = |v: f64| (v - base).max(0.0);
    let peak = excess(e[i]);
    let before = if i > 0 { excess(e[i - 1]) } else { 0.0 };
    let after = if i + 1 < e.len() { excess(e[i + 1]) } else { 0.0 };
    let offset = if energy.hop * 2 == energy.window && peak > 0.0 {
        let (nb, sign) = if after >= before { (after, 1.0) } else { (before, -1.0) };
        sign * n / std::f64::consts::PI * (nb / peak).min(1.0).powf(0.25).atan()
    } else {
        0.0
    };
    ((centre + offset) / energy.fs as f64).clamp(0.0, energy.duration())
}

/// Runs the detector on one recorded window.
pub fn detect_window(window: &AudioWindow, cfg: &DetectorConfig) -> Result<SnapDetection, AcousticsError> {
    if window.saturated {
        return Err(AcousticsError::Saturated);
    }
    let samples: Vec<f64> = window.samples.iter().map(|&s| s as f64).collect();
    detect_snaps(&window_band_energy(&samples, window.fs, false, cfg)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapRate {
    pub t: f64,
    pub cell: CellId,
    pub cell_x: usize,
    pub cell_y: usize,
    pub count: usize,
    pub rate: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub t: f64,
    pub cell: CellId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapRateSeries {
    pub rates: Vec<SnapRate>,
    pub skipped: Vec<SkippedWindow>,
}

/// Snap rate of every drift window in the log, in time order. Saturated
/// windows are left out and listed in the skip report.
pub fn snap_rate_series(log: &MissionLog, cfg: &DetectorConfig) -> Result<SnapRateSeries, AcousticsError> {
    let mut out = SnapRateSeries::default();
    let mut drift_windows = 0;
    for (record, window) in log.audio_records() {
        if record.mode == Mode::Drift {
            drift_windows += 1;
        }
        match detect_window(window, cfg) {
            Ok(det) => {
                if record.mode != Mode::Drift {
                    continue;
                }
                let (cell_x, cell_y) = log.header.grid.coords(record.cell);
                out.rates.push(SnapRate {
                    t: window.start_time,
                    cell: record.cell,
                    cell_x,
                    cell_y,
                    count: det.count,
                    rate: det.rate,
                    duration: window.duration(),
                });
            }
            Err(AcousticsError::Saturated) => out.skipped.push(SkippedWindow {
                t: window.start_time,
                cell: record.cell,
                reason: "saturated".into(),
            }),
            Err(e) => return Err(e),
        }
    }
    if drift_windows == 0 {
        return Err(AcousticsError::NoDriftWindows);
    }
    Ok(out)
}

impl SnapRateSeries {
    /// `t_start,cell_x,cell_y,count,rate,skipped_reason`, rows in time order.
    pub fn to_csv(&self, grid: &crate::grid::Grid) -> String {
        enum Row<'a> {
            Rate(&'a SnapRate),
            Skip(&'a SkippedWindow),
        }
        let mut rows: Vec<(f64, Row)> = self.rates.iter().map(|r| (r.t, Row::Rate(r))).collect();
        rows.extend(self.skipped.iter().map(|s| (s.t, Row::Skip(s))));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = String::from("t_start,cell_x,cell_y,count,rate,skipped_reason\n");
        for (_, row) in rows {
            let _ = match row {
                Row::Rate(r) => writeln!(out, "{},{},{},{},{},", r.t, r.cell_x, r.cell_y, r.count, r.rate),
                Row::Skip(s) => {
                    let (x, y) = grid.coords(s.cell);
                    writeln!(out, "{},{},{},,,{}", s.t, x, y, s.reason)
                }
            };
        }
        out
    }
}
