mod common;

use common::{detector_scores, match_events};
use proptest::prelude::*;
use reefsurvey::acoustics::{
    band_energy, detect_snaps, detect_window, snap_rate_series, stft, window_band_energy, AcousticsError,
    DetectorConfig,
};
use reefsurvey::mission::{execute, plan_lawnmower, Bounds, MissionConfig};
use reefsurvey::rng::{substream, Domain};
use reefsurvey::world::{audio, generate_world, AudioParams, WorldConfig};
use rand_distr::{Distribution, StandardNormal};

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, Domain::Experiment, 0);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn white_noise_parseval() {
    let x = white(96_000, 1);
    for (window, hop) in [(1024, 512), (256, 100), (64, 64)] {
        let s = stft(&x, 96_000, window, hop).unwrap();
        let taper = reefsurvey::acoustics::hann(window);
        let mut spectral = 0.0;
        let mut direct = 0.0;
        for f in 0..s.n_frames {
            spectral += s.frame_energy(f);
            direct += x[f * hop..f * hop + window].iter().zip(&taper).map(|(v, w)| (v * w).powi(2)).sum::<f64>();
        }
        assert!((spectral / direct - 1.0).abs() < 1e-6);
        // window-gain corrected energy tracks the raw signal energy
        let raw: f64 = (0..s.n_frames).map(|f| x[f * hop..f * hop + window].iter().map(|v| v * v).sum::<f64>()).sum();
        assert!((spectral / s.window_power_gain() / raw - 1.0).abs() < 0.05);
    }
}

#[test]
fn band_energy_matches_brute_force() {
    let x = white(20_000, 2);
    let s = stft(&x, 96_000, 1024, 512).unwrap();
    let e = band_energy(&s, 2000.0, 24000.0).unwrap();
    for (f, value) in e.iter().enumerate() {
        let mut sum = 0.0;
        for k in 0..s.n_bins {
            let hz = k as f64 * 96_000.0 / 1024.0;
            if (2000.0..=24000.0).contains(&hz) {
                sum += s.power[f * s.n_bins + k];
            }
        }
        assert_eq!(*value, sum);
    }
}

#[test]
fn twenty_injected_snaps_are_counted() {
    let cfg = DetectorConfig::default();
    let base = AudioParams::default();
    let params = AudioParams { snap_amplitude: base.amplitude_for_snr(10.0, 96_000, cfg.window), ..base };
    let mut rng = substream(5, Domain::Audio, 0);
    let times: Vec<f64> = (0..20).map(|i| 0.2 + 0.49 * i as f64).collect();
    let window = audio::render(&params, 10.0, 96_000, &times, false, &mut rng).unwrap();
    let det = detect_window(&window, &cfg).unwrap();
    assert!((det.count as i64 - 20).abs() <= 1, "{}", det.count);
    assert!(match_events(&window.truth_snap_times, &det.times, 2e-3) >= 19);
}

#[test]
fn recall_and_precision_at_ten_db() {
    let (recall, precision) = detector_scores(10.0, 5.0, 10, 3);
    assert!(recall >= 0.9, "recall {recall}");
    assert!(precision >= 0.9, "precision {precision}");
}

#[test]
fn background_false_positive_floor() {
    let cfg = DetectorConfig::default();
    let mut total = 0.0;
    for w in 0..5 {
        let mut rng = substream(9, Domain::Audio, w);
        let window = audio::synthesize(&AudioParams::default(), 0.0, 10.0, 96_000, false, &mut rng).unwrap();
        total += detect_window(&window, &cfg).unwrap().rate;
    }
    assert!(total / 5.0 <= 0.2, "{}", total / 5.0);
}

#[test]
fn saturated_windows_are_refused() {
    let mut rng = substream(1, Domain::Audio, 0);
    let window = audio::synthesize(&AudioParams::default(), 20.0, 1.0, 96_000, true, &mut rng).unwrap();
    assert_eq!(detect_window(&window, &DetectorConfig::default()), Err(AcousticsError::Saturated));
}

#[test]
fn rate_series_composes_window_detections() {
    let world = generate_world(&WorldConfig::default(), 4).unwrap();
    let mut plan = plan_lawnmower(Bounds::new(2.0, 18.0, 2.0, 18.0), 8.0, 2.0, 1.0, None).unwrap();
    plan.waypoints.truncate(4);
    let cfg = MissionConfig { record_transit_audio: true, ..MissionConfig::default() };
    let log = execute(&plan, &world, &cfg, 2).unwrap();
    let det = DetectorConfig::default();
    let series = snap_rate_series(&log, &det).unwrap();
    let drifts = log.drift_windows();
    assert_eq!(series.rates.len(), drifts.len());
    assert_eq!(series.skipped.len(), log.audio.len() - drifts.len());
    assert!(series.skipped.iter().all(|s| s.reason == "saturated"));
    for (entry, d) in series.rates.iter().zip(&drifts) {
        let single = detect_window(d.audio, &det).unwrap();
        assert_eq!(entry.rate, single.rate);
        assert_eq!(entry.cell, d.record.cell);
        assert!((entry.rate - entry.count as f64 / entry.duration).abs() < 1e-12);
    }
    let csv = series.to_csv(&log.header.grid);
    assert!(csv.starts_with("t_start,cell_x,cell_y,count,rate,skipped_reason\n"));
    assert_eq!(csv.lines().count(), 1 + log.audio.len());
}

#[test]
fn silent_world_rates_stay_under_floor() {
    let world = generate_world(&WorldConfig { habitat_snap_rates: vec![0.0; 3], ..WorldConfig::default() }, 4).unwrap();
    let mut plan = plan_lawnmower(Bounds::new(2.0, 18.0, 2.0, 18.0), 8.0, 10.0, 1.0, None).unwrap();
    plan.waypoints.truncate(3);
    let log = execute(&plan, &world, &MissionConfig::default(), 3).unwrap();
    let series = snap_rate_series(&log, &DetectorConfig::default()).unwrap();
    assert_eq!(series.rates.len(), 3);
    assert!(series.rates.iter().all(|r| r.rate <= 0.2));
}

#[test]
fn log_without_drifts_is_an_error() {
    let world = generate_world(&WorldConfig::default(), 4).unwrap();
    let mut plan = plan_lawnmower(Bounds::new(2.0, 18.0, 2.0, 18.0), 8.0, 0.0, 1.0, None).unwrap();
    plan.waypoints.truncate(2);
    let log = execute(&plan, &world, &MissionConfig::default(), 3).unwrap();
    assert_eq!(snap_rate_series(&log, &DetectorConfig::default()), Err(AcousticsError::NoDriftWindows));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn count_is_gain_invariant(gain in 1e-3..4.0f64, seed in 0u64..1000) {
        let cfg = DetectorConfig::default();
        let mut rng = substream(seed, Domain::Audio, 0);
        let window = audio::synthesize(&AudioParams::default(), 8.0, 2.0, 96_000, false, &mut rng).unwrap();
        let x: Vec<f64> = window.samples.iter().map(|&s| s as f64).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * gain).collect();
        let a = detect_snaps(&window_band_energy(&x, 96_000, false, &cfg).unwrap(), &cfg).unwrap();
        let b = detect_snaps(&window_band_energy(&scaled, 96_000, false, &cfg).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a.count, b.count);
    }

    #[test]
    fn detections_are_sorted_and_spaced(values in prop::collection::vec(0.0..100.0f64, 8..400), refractory in 0.0..30.0f64) {
        let cfg = DetectorConfig { refractory_ms: refractory, ..DetectorConfig::default() };
        let n = values.len();
        let e = reefsurvey::acoustics::BandEnergy {
            values, fs: 96_000, window: 1024, hop: 512, band: (2000.0, 24000.0), n_samples: n * 512 + 512, saturated: false,
        };
        let d = detect_snaps(&e, &cfg).unwrap();
        prop_assert_eq!(d.count, d.times.len());
        for pair in d.times.windows(2) {
            prop_assert!(pair[1] - pair[0] >= refractory * 1e-3 - 1e-12);
        }
        prop_assert!((d.rate - d.count as f64 / e.duration()).abs() < 1e-12);
    }
}
