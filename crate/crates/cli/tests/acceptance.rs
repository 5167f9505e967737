//! Acceptance suite. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::{assert_symmetric_psd, detector_scores, nav_world, nees_envelope, rms, run_navigation};
use reefsurvey::acoustics::{detect_window, stft, AcousticsError, DetectorConfig};
use reefsurvey::analysis::{best_permutation_accuracy, fit_shrimp_habitat};
use reefsurvey::grid::{CellId, Grid};
use reefsurvey::mission::{execute, plan_lawnmower, Bounds, MissionConfig};
use reefsurvey::rng::{substream, Domain};
use reefsurvey::topics::{habitat_timeseries, observe_log, TopicConfig, TopicModel};
use reefsurvey::tracking::{run_tracking_episode, TargetConfig, TrackerConfig, TrackingConfig};
use reefsurvey::vehicle::SensorConfig;
use reefsurvey::world::{audio, generate_world, AudioParams, GridWorld, WorldConfig};
use reefsurvey_cli::commands::run_analysis;
use reefsurvey_cli::RunConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn acceptance_config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml")).unwrap()
}

/// Observed cells' dominant topic against the world's dominant habitat.
fn cell_matching(model: &TopicModel, world: &GridWorld) -> reefsurvey::analysis::LabelMatching {
    let (pred, truth): (Vec<usize>, Vec<usize>) = model
        .cell_labels()
        .iter()
        .enumerate()
        .filter_map(|(c, l)| l.map(|l| (l, world.dominant_habitat(CellId(c)))))
        .unzip();
    best_permutation_accuracy(&pred, &truth).unwrap()
}

fn habitat_regression() -> Outcome {
    let base = acceptance_config();
    let coral = base.world.habitat_snap_rates.iter().position(|r| *r > 0.0).unwrap();
    assert_eq!(base.world.habitat_snap_rates, vec![0.0, 0.0, 30.0]);
    let mut passed = 0;
    let mut slowest: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..100 {
        let t0 = Instant::now();
        let cfg = RunConfig { seed, ..base.clone() };
        let world = generate_world(&cfg.world, seed).unwrap();
        let plan = cfg.survey.plan(cfg.survey_bounds(&world)).unwrap();
        assert_eq!(plan.waypoints.len(), 50);
        assert_eq!(plan.audio_fs, 96_000);
        assert_eq!(plan.drift_duration_s, 10.0);
        let log = execute(&plan, &world, &cfg.mission, seed).unwrap();
        let a = run_analysis(&log, &cfg).unwrap();
        let coefs = &a.report.fit.coefficients;
        let coral_label = cell_matching(&a.model, &world).predicted_for(coral).map(|k| a.model.labels[k]);
        let big: Vec<usize> = (0..coefs.len()).filter(|&i| coefs[i] > 0.1).collect();
        let ok = big.len() == 1
            && coefs.iter().all(|c| *c > 0.1 || *c <= 0.05)
            && a.report.pearson_r >= 0.8
            && coral_label.is_some_and(|l| a.report.groups[big[0]].contains(&l));
        if ok {
            passed += 1;
        } else {
            failures.push(seed);
        }
        slowest = slowest.max(t0.elapsed().as_secs_f64());
    }
    check(
        passed >= 90 && slowest <= 300.0,
        format!("{passed}/100 seeds (need 90), slowest seed {slowest:.1} s (limit 300 s), failing seeds {failures:?}"),
    )
}

fn snap_detector() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for snr in [10.0, 15.0, 20.0] {
        let (recall, precision) = detector_scores(snr, 5.0, 10, 21);
        ok &= recall >= 0.9 && precision >= 0.9;
        detail.push(format!("{snr} dB recall {recall:.3} precision {precision:.3}"));
    }
    let cfg = DetectorConfig::default();
    let base = AudioParams::default();
    let params = AudioParams { snap_amplitude: base.amplitude_for_snr(10.0, 96_000, cfg.window), ..base };
    let mut invariant = true;
    for w in 0..10 {
        let mut rng = substream(31, Domain::Audio, w);
        let window = audio::synthesize(&params, 8.0, 10.0, 96_000, false, &mut rng).unwrap();
        let reference = detect_window(&window, &cfg).unwrap().count;
        for gain in [1e-3, 0.05, 3.0] {
            let mut scaled = window.clone();
            scaled.samples.iter_mut().for_each(|s| *s *= gain as f32);
            invariant &= detect_window(&scaled, &cfg).unwrap().count == reference;
        }
    }
    ok &= invariant;
    detail.push(format!("gain-invariant counts {invariant}"));
    let mut rejected = 0;
    for w in 0..20 {
        let mut rng = substream(32, Domain::Audio, w);
        let window = audio::synthesize(&AudioParams::default(), 10.0, 2.0, 96_000, true, &mut rng).unwrap();
        if detect_window(&window, &cfg) == Err(AcousticsError::Saturated) {
            rejected += 1;
        }
    }
    ok &= rejected == 20;
    detail.push(format!("saturated rejected {rejected}/20"));
    check(ok, detail.join("; "))
}

#[derive(Debug, Clone)]
enum Op {
    Observe(usize, Vec<u32>),
    Refine,
}

fn topic_recovery() -> Outcome {
    let mut passed = 0;
    let mut worst: f64 = 1.0;
    for seed in 0..100 {
        let world = generate_world(&WorldConfig::default(), seed).unwrap();
        let plan = plan_lawnmower(Bounds::new(0.5, 19.5, 0.5, 19.5), 1.0, 0.0, 1.0, None).unwrap();
        let log = execute(&plan, &world, &MissionConfig::default(), seed).unwrap();
        let mut model = TopicModel::new(world.grid, world.vocab_size(), TopicConfig::default()).unwrap();
        let mut rng = substream(seed, Domain::Topics, 0);
        observe_log(&mut model, &log, &mut rng).unwrap();
        model.gibbs_refine(50, &mut rng);
        let acc = cell_matching(&model, &world).accuracy;
        worst = worst.min(acc);
        if acc >= 0.8 {
            passed += 1;
        }
    }

    // count-table fuzz: 1000 models x 100 random operations
    let mut ops_run = 0usize;
    let mut violation = None;
    'fuzz: for run in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let cfg = TopicConfig { gamma: rng.random_range(0.0..2.0), k_max: rng.random_range(1..8), ..TopicConfig::default() };
        let mut model = TopicModel::new(Grid::new(3, 3, 1.0), 6, cfg).unwrap();
        let mut expected = 0usize;
        for _ in 0..100 {
            let op = if rng.random::<f64>() < 0.8 {
                Op::Observe(rng.random_range(0..9), (0..6).map(|_| rng.random_range(0..4)).collect())
            } else {
                Op::Refine
            };
            match &op {
                Op::Observe(c, h) => {
                    expected += h.iter().sum::<u32>() as usize;
                    model.observe(CellId(*c), h, &mut rng).unwrap();
                }
                Op::Refine => model.gibbs_refine(1, &mut rng),
            }
            ops_run += 1;
            let totals: usize = model.topic_totals.iter().map(|&n| n as usize).sum();
            if let Err(e) = model.check_invariants() {
                violation = Some(format!("run {run} after {op:?}: {e}"));
                break 'fuzz;
            }
            if model.n_tokens() != expected || totals != expected {
                violation = Some(format!("run {run}: token count {} / {totals}, expected {expected}", model.n_tokens()));
                break 'fuzz;
            }
        }
    }
    check(
        passed >= 90 && violation.is_none() && ops_run == 100_000,
        format!("{passed}/100 seeds at accuracy >= 0.8 (worst {worst:.3}); fuzz {ops_run} ops, violation {violation:?}"),
    )
}

fn ekf() -> Outcome {
    let world = nav_world();
    let sensors = SensorConfig::default();
    assert_eq!((sensors.usbl_period_s, sensors.usbl_std), (Some(1.0), 0.5));
    let mut steady = Vec::new();
    for seed in 0..10 {
        let samples = run_navigation(&world, &sensors, seed, 600.0, assert_symmetric_psd);
        steady.push(rms(samples.iter().filter(|s| s.t >= 60.0).map(|s| s.position_error())));
    }
    let worst = steady.iter().cloned().fold(0.0, f64::max);

    let dr = SensorConfig { usbl_period_s: None, ..SensorConfig::default() };
    let runs: Vec<_> = (0..30).map(|seed| run_navigation(&world, &dr, seed, 600.0, assert_symmetric_psd)).collect();
    let at = |t: f64| rms(runs.iter().map(|r| r.iter().find(|s| (s.t - t).abs() < 1e-6).unwrap().position_error()));
    let (e60, e600) = (at(60.0), at(600.0));

    let n = 100;
    let mc: Vec<_> = (0..n as u64).map(|seed| run_navigation(&world, &sensors, 1000 + seed, 120.0, assert_symmetric_psd)).collect();
    let (lo, hi) = nees_envelope(4, n);
    let checks = mc[0].len();
    let inside = (0..checks)
        .filter(|&i| {
            let mean = mc.iter().map(|r| r[i].nees()).sum::<f64>() / n as f64;
            (lo..=hi).contains(&mean)
        })
        .count();
    check(
        worst <= 1.0 && e600 > e60 && inside as f64 >= 0.9 * checks as f64,
        format!(
            "USBL steady RMS worst {worst:.3} m over 10 x 600 s; dead reckoning RMS {e60:.2} m at 60 s, {e600:.2} m at 600 s; \
             mean NEES inside [{lo:.2}, {hi:.2}] at {inside}/{checks} checkpoints; covariance symmetric PSD at every step"
        ),
    )
}

fn tracking() -> Outcome {
    let world = generate_world(&WorldConfig { width_m: 60.0, height_m: 60.0, cell_size_m: 5.0, ..Default::default() }, 3).unwrap();
    let cfg = TrackingConfig::default();
    assert_eq!(cfg.tracker, TrackerConfig::default());
    let cruiser = TargetConfig::cruiser();
    assert!(cruiser.speed <= 0.5 * cfg.dynamics.max_speed);
    let mut centred = 0;
    let mut worst: f64 = 1.0;
    for seed in 0..100 {
        let m = run_tracking_episode(&world, &cfg, &cruiser, 300.0, seed).unwrap().metrics();
        worst = worst.min(m.centered_fraction);
        if m.centered_fraction >= 0.9 {
            centred += 1;
        }
    }
    let glider = TargetConfig::glider();
    let d = glider.distractor.as_ref().unwrap();
    assert_eq!((d.switch_rate_per_s, d.mean_lock_s), (0.02, 3.0));
    let mut kept = 0;
    let mut locks = 0;
    for seed in 0..100 {
        let m = run_tracking_episode(&world, &cfg, &glider, 300.0, seed).unwrap().metrics();
        locks += m.distractor_locks;
        if !m.permanently_lost {
            kept += 1;
        }
    }
    let quiet = TrackingConfig {
        tracker: TrackerConfig { pixel_noise_px: 0.0, dropout_prob: 0.0, ..Default::default() },
        initial_range_m: Some(3.6),
        initial_heading_offset_deg: 0.3f64.to_degrees(),
        initial_height_offset_m: 0.3,
        ..Default::default()
    };
    let still = TargetConfig { speed: 0.0, start: Some([30.0, 30.0, 4.0]), ..TargetConfig::cruiser() };
    let eq = run_tracking_episode(&world, &quiet, &still, 30.0, 0).unwrap().metrics();
    let (err, ratio) = (eq.final_centering_px.unwrap_or(f64::INFINITY), eq.final_width_ratio.unwrap_or(f64::NAN));
    let equilibrium = err < 2.0 && (ratio - cfg.gains.width_ratio_setpoint).abs() < 0.005;
    check(
        centred >= 90 && kept >= 80 && equilibrium,
        format!(
            "cruiser centred >= 90% of frames in {centred}/100 (worst {worst:.3}); glider without permanent loss {kept}/100 \
             ({locks} distractor locks); equilibrium after 30 s: error {err:.3} px, width ratio {ratio:.4}"
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn numerics() -> Outcome {
    let mut detail = Vec::new();

    let mut rng = substream(5, Domain::Experiment, 0);
    let x: Vec<f64> = (0..96_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut parseval: f64 = 0.0;
    for (window, hop) in [(1024, 512), (512, 128), (256, 256)] {
        let s = stft(&x, 96_000, window, hop).unwrap();
        let taper = reefsurvey::acoustics::hann(window);
        let (mut spectral, mut direct) = (0.0, 0.0);
        for f in 0..s.n_frames {
            spectral += s.frame_energy(f);
            direct += x[f * hop..f * hop + window].iter().zip(&taper).map(|(v, w)| (v * w).powi(2)).sum::<f64>();
        }
        parseval = parseval.max((spectral / direct - 1.0).abs());
    }
    detail.push(format!("Parseval rel. error {parseval:.1e}"));

    let mut ortho: f64 = 0.0;
    for trial in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let simplex = trial % 2 == 0;
        // a single simplex column is constant
        let k = rng.random_range(if simplex { 2 } else { 1 }..6);
        let n = rng.random_range(k + 2..40);
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                if simplex {
                    let s: f64 = v.iter().sum();
                    v.iter_mut().for_each(|x| *x /= s);
                }
                v
            })
            .collect();
        let rates: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
        let labels: Vec<u32> = (0..k as u32).collect();
        let fit = fit_shrimp_habitat(&vectors, &rates, &labels).unwrap();
        let resid: Vec<f64> = fit.observed.iter().zip(&fit.predictions).map(|(o, p)| o - p).collect();
        ortho = ortho.max(resid.iter().sum::<f64>().abs());
        for j in 0..k {
            ortho = ortho.max(resid.iter().zip(&vectors).map(|(r, v)| r * v[j]).sum::<f64>().abs());
        }
    }
    detail.push(format!("OLS residual orthogonality {ortho:.1e}"));

    let mut prob: f64 = 0.0;
    let mut track = |p: &[f64]| prob = prob.max((p.iter().sum::<f64>() - 1.0).abs());
    let world = generate_world(&WorldConfig::default(), 8).unwrap();
    world.habitat_field.iter().for_each(|p| track(p));
    world.appearance.iter().for_each(|p| track(p));
    let plan = plan_lawnmower(Bounds::new(0.5, 19.5, 0.5, 19.5), 3.0, 5.0, 1.0, None).unwrap();
    let log = execute(&plan, &world, &MissionConfig::default(), 8).unwrap();
    let mut model = TopicModel::new(world.grid, world.vocab_size(), TopicConfig::default()).unwrap();
    let mut trng = substream(8, Domain::Topics, 0);
    observe_log(&mut model, &log, &mut trng).unwrap();
    model.gibbs_refine(20, &mut trng);
    world.grid.cells().for_each(|c| track(&model.habitat_distribution(c)));
    model.topic_word_distributions().iter().for_each(|p| track(p));
    habitat_timeseries(&model, &log).unwrap().samples.iter().for_each(|s| track(&s.proportions));
    detail.push(format!("probability sums {prob:.1e}"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[track]\nduration_s = 60.0\n").unwrap();
    let out = dir.path().join("out");
    let mut snaps = Vec::new();
    let mut exit_ok = true;
    for _ in 0..2 {
        for cmd in ["world-gen", "survey", "analyze", "track"] {
            let status = Command::new(env!("CARGO_BIN_EXE_reefsurvey"))
                .args([cmd, "--config", cfg.to_str().unwrap(), "--seed", "17", "--out", out.to_str().unwrap()])
                .output()
                .unwrap()
                .status;
            exit_ok &= status.success();
        }
        snaps.push(snapshot(&out));
    }
    let reproducible = exit_ok && snaps[0] == snaps[1];
    detail.push(format!("CLI re-run byte-identical over {} files: {reproducible}", snaps[0].len()));

    check(parseval <= 1e-6 && ortho <= 1e-8 && prob <= 1e-9 && reproducible, detail.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("1 habitat regression", habitat_regression),
        ("2 snap detector", snap_detector),
        ("3 topic recovery", topic_recovery),
        ("4 EKF", ekf),
        ("5 tracking", tracking),
        ("6 numerics", numerics),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in criteria {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name} ({secs:.0} s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.0} s): {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
