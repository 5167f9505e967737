//! Single-hydrophone audio synthesis.
//!
//! Snaps arrive as a homogeneous Poisson process. Each one is rendered as a
//! short exponentially decaying burst of band-limited noise; Gaussian
//! background is added underneath and, when the thrusters run, broadband
//! self-noise near full scale that drives the recorder into clipping.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::WorldError;

/// Acoustic rendering parameters. None of these are calibrated against real
/// recordings; they only need to produce detectable snaps over a noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioParams {
    /// Standard deviation of the white Gaussian background (full scale = 1).
    pub background_std: f64,
    /// RMS amplitude of the burst noise before the decay envelope.
    pub snap_amplitude: f64,
    pub snap_duration_ms: f64,
    /// Time constant of the exponential decay envelope.
    pub snap_decay_ms: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Standard deviation of thruster self-noise (full scale = 1).
    pub thruster_level: f64,
}

impl Default for AudioParams {
    fn default() -> Self {
        Self {
            background_std: 0.003,
            snap_amplitude: 0.1,
            snap_duration_ms: 1.0,
            snap_decay_ms: 0.25,
            band_lo_hz: 2000.0,
            band_hi_hz: 24000.0,
            thruster_level: 0.95,
        }
    }
}

impl AudioParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        let ok = self.background_std >= 0.0
            && self.snap_amplitude >= 0.0
            && self.snap_duration_ms > 0.0
            && self.snap_decay_ms > 0.0
            && self.band_lo_hz >= 0.0
            && self.band_hi_hz > self.band_lo_hz
            && self.thruster_level >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(WorldError::Config(format!("invalid audio parameters: {self:?}")))
        }
    }

    /// Expected snap energy over the expected in-band background energy of
    /// one analysis window of `window` samples, in dB.
    pub fn snap_snr_db(&self, fs: u32, window: usize) -> f64 {
        let len = burst_len(self.snap_duration_ms, fs);
        let decay = self.snap_decay_ms * 1e-3 * fs as f64;
        let burst: f64 = (0..len)
            .map(|n| self.snap_amplitude.powi(2) * (-2.0 * n as f64 / decay).exp())
            .sum();
        let band_share = ((self.band_hi_hz.min(fs as f64 / 2.0) - self.band_lo_hz) / (fs as f64 / 2.0)).max(0.0);
        let background = self.background_std.powi(2) * window as f64 * band_share;
        10.0 * (burst / background).log10()
    }

    /// Burst RMS amplitude that yields `snr_db` under [`Self::snap_snr_db`].
    pub fn amplitude_for_snr(&self, snr_db: f64, fs: u32, window: usize) -> f64 {
        let current = Self { snap_amplitude: 1.0, ..self.clone() }.snap_snr_db(fs, window);
        10f64.powf((snr_db - current) / 20.0)
    }
}

/// One hydrophone recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioWindow {
    pub samples: Vec<f32>,
    pub fs: u32,
    /// Mission time of the first sample.
    pub start_time: f64,
    /// Ground-truth snap onsets relative to `start_time`, sorted.
    pub truth_snap_times: Vec<f64>,
    pub saturated: bool,
}

impl AudioWindow {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs as f64
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), WorldError> {
        let wav_format = hound::WavSpec {
            channels: 1,
            sample_rate: self.fs,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(path, wav_format)?;
        for &s in &self.samples {
            writer.write_sample(s)?;
        }
        writer.finalize()?;
        Ok(())
    }

    /// Reads a mono 32-bit float WAV written by [`Self::write_wav`].
    pub fn read_wav_samples(path: &Path) -> Result<(Vec<f32>, u32), WorldError> {
        let mut reader = hound::WavReader::open(path)?;
        let wav_format = reader.spec();
        if wav_format.channels != 1 || wav_format.sample_format != hound::SampleFormat::Float || wav_format.bits_per_sample != 32 {
            return Err(WorldError::Format(format!("{}: expected mono f32 WAV", path.display())));
        }
        let samples = reader.samples::<f32>().collect::<Result<Vec<_>, _>>()?;
        Ok((samples, wav_format.sample_rate))
    }
}

fn burst_len(duration_ms: f64, fs: u32) -> usize {
    ((duration_ms * 1e-3 * fs as f64).round() as usize).max(1)
}

/// Synthesizes a window whose snap onsets follow a Poisson process of
/// `snap_rate` events per second.
pub fn synthesize(
    params: &AudioParams,
    snap_rate: f64,
    duration_s: f64,
    fs: u32,
    thrusters_on: bool,
    rng: &mut impl Rng,
) -> Result<AudioWindow, WorldError> {
    check_args(duration_s, fs)?;
    let mean = snap_rate * duration_s;
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| WorldError::Config(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * duration_s).collect();
    times.sort_by(f64::total_cmp);
    render(params, duration_s, fs, &times, thrusters_on, rng)
}

fn check_args(duration_s: f64, fs: u32) -> Result<(), WorldError> {
    if fs < 48_000 {
        return Err(WorldError::SampleRate(fs));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(WorldError::Duration(duration_s));
    }
    Ok(())
}

/// Renders a window with snaps at the given onsets (seconds from the start).
/// Onsets outside `[0, duration)` are dropped from the truth list.
pub fn render(
    params: &AudioParams,
    duration_s: f64,
    fs: u32,
    snap_times: &[f64],
    thrusters_on: bool,
    rng: &mut impl Rng,
) -> Result<AudioWindow, WorldError> {
    check_args(duration_s, fs)?;
    let n = ((duration_s * fs as f64).round() as usize).max(1);
    let mut buf: Vec<f64> = if params.background_std > 0.0 {
        let bg = Normal::new(0.0, params.background_std).map_err(|e| WorldError::Config(e.to_string()))?;
        (0..n).map(|_| bg.sample(rng)).collect()
    } else {
        vec![0.0; n]
    };

    let mut truth: Vec<f64> = snap_times.iter().copied().filter(|t| *t >= 0.0 && *t < duration_s).collect();
    truth.sort_by(f64::total_cmp);
    if params.snap_amplitude > 0.0 && !truth.is_empty() {
        let burst = BurstRenderer::new(params, fs);
        for &t in &truth {
            let start = (t * fs as f64).floor() as usize;
            for (dst, b) in buf.iter_mut().skip(start).zip(burst.render(rng)) {
                *dst += b;
            }
        }
    }

    if thrusters_on {
        let noise = Normal::new(0.0, params.thruster_level).map_err(|e| WorldError::Config(e.to_string()))?;
        buf.iter_mut().for_each(|s| *s += noise.sample(rng));
    }

    let samples = buf.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect();
    Ok(AudioWindow {
        samples,
        fs,
        start_time: 0.0,
        truth_snap_times: truth,
        saturated: thrusters_on,
    })
}

/// Draws band-limited unit-RMS noise in the frequency domain and shapes it
/// with the decay envelope.
struct BurstRenderer {
    ifft: Arc<dyn Fft<f64>>,
    nfft: usize,
    band_bins: Vec<usize>,
    envelope: Vec<f64>,
}

impl BurstRenderer {
    fn new(params: &AudioParams, fs: u32) -> Self {
        let len = burst_len(params.snap_duration_ms, fs);
        let nfft = len.next_power_of_two().max(16);
        let bin_hz = fs as f64 / nfft as f64;
        let band_bins = (1..nfft / 2)
            .filter(|&k| {
                let f = k as f64 * bin_hz;
                f >= params.band_lo_hz && f <= params.band_hi_hz
            })
            .collect();
        let decay = params.snap_decay_ms * 1e-3 * fs as f64;
        let envelope = (0..len)
            .map(|i| params.snap_amplitude * (-(i as f64) / decay).exp())
            .collect();
        Self {
            ifft: FftPlanner::new().plan_fft_inverse(nfft),
            nfft,
            band_bins,
            envelope,
        }
    }

    fn render(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut spectrum = vec![Complex::new(0.0, 0.0); self.nfft];
        for &k in &self.band_bins {
            let z = Complex::new(gauss(rng), gauss(rng));
            spectrum[k] = z;
            spectrum[self.nfft - k] = z.conj();
        }
        self.ifft.process(&mut spectrum);
        let rms = (spectrum.iter().map(|c| c.re * c.re).sum::<f64>() / self.nfft as f64).sqrt();
        let scale = if rms > 0.0 { 1.0 / rms } else { 0.0 };
        self.envelope.iter().zip(&spectrum).map(|(e, c)| e * c.re * scale).collect()
    }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}
