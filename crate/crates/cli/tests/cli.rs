use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reefsurvey::mission::MissionLog;
use reefsurvey::world::GridWorld;
use reefsurvey_cli::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reefsurvey"))
}

fn acceptance_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn world_gen_writes_a_loadable_world() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["world-gen", "--seed", "4"], dir.path());
    let world = GridWorld::load(&dir.path().join("world.json")).unwrap();
    let expected = reefsurvey::world::generate_world(&Default::default(), 4).unwrap();
    assert_eq!(world, expected);
    assert!(fs::read_to_string(dir.path().join("habitat_map.svg")).unwrap().starts_with("<svg"));
    let echoed = RunConfig::load(&dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(echoed.seed, 4);
    assert_eq!(echoed.world, RunConfig::default().world);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    for body in ["[world]\nheight_m = 0.0\n", "typo = 1\n", "[world]\ncolour = 3\n", "[track]\nduration_s = 0.0\n"] {
        fs::write(&cfg, body).unwrap();
        let o = run(&["world-gen", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["world-gen", "--config", "/nonexistent/c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["survey", "--world", "/nonexistent/world.json"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["track"], &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(3));
    let o = run(&["analyze"], &dir.path().join("empty"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn track_rejects_zero_duration() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["world-gen"], dir.path());
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[track]\nduration_s = 0.0\n").unwrap();
    let o = run(&["track", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn log_without_drift_windows_is_an_explicit_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[survey]\ndrift_duration_s = 0.0\n").unwrap();
    let c = ["--config", cfg.to_str().unwrap()];
    ok(&[&["world-gen"][..], &c].concat(), dir.path());
    ok(&[&["survey"][..], &c].concat(), dir.path());
    let o = run(&[&["analyze"][..], &c].concat(), dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no drift windows"));
}

#[test]
fn fifty_waypoint_survey_records_fifty_drift_wavs() {
    let dir = tempfile::tempdir().unwrap();
    let c = acceptance_config();
    let c = ["--config", c.to_str().unwrap()];
    ok(&[&["world-gen"][..], &c].concat(), dir.path());
    ok(&[&["survey"][..], &c].concat(), dir.path());
    let wavs = fs::read_dir(dir.path().join("audio")).unwrap().count();
    assert_eq!(wavs, 50);
    let log = MissionLog::read(dir.path()).unwrap();
    assert_eq!(log.drift_windows().len(), 50);
    let csv = fs::read_to_string(dir.path().join("ekf_error.csv")).unwrap();
    assert_eq!(csv.lines().count(), log.records.len() + 1);
}

#[test]
fn every_command_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[track]\nduration_s = 30.0\n[target]\nkind = \"benthic-glider\"\n").unwrap();
    let c = ["--config", cfg.to_str().unwrap(), "--seed", "9"];
    let out = dir.path().join("o");
    let mut previous = None;
    for _ in 0..2 {
        for cmd in ["world-gen", "survey", "analyze", "track"] {
            ok(&[&[cmd][..], &c].concat(), &out);
        }
        let snap = snapshot(&out);
        assert!(snap.len() > 10);
        if let Some(p) = &previous {
            assert_eq!(p, &snap);
        }
        previous = Some(snap);
    }
    // a fresh directory reproduces everything except the echoed output path
    let other = dir.path().join("p");
    for cmd in ["world-gen", "survey", "analyze", "track"] {
        ok(&[&[cmd][..], &c].concat(), &other);
    }
    let mut a = previous.unwrap();
    let mut b = snapshot(&other);
    a.remove(Path::new("config.resolved.toml"));
    b.remove(Path::new("config.resolved.toml"));
    assert_eq!(a, b);
}

#[test]
fn help_lists_every_section_and_default() {
    let o = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for section in ["[world]", "[survey]", "[mission]", "[mission.sensors]", "[acoustics]", "[topics]", "[analysis]", "[tracking]", "[target]", "[track]"] {
        assert!(text.contains(section), "missing {section}");
    }
    assert!(text.contains("threshold_sigma = 0.1"));
    assert!(text.contains("width_ratio_setpoint = 0.15"));
    assert!(text.contains("exit") || text.contains("Exit"));
}

#[test]
fn resolved_config_round_trips() {
    let text = RunConfig::default().to_toml().unwrap();
    assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
    let acc = RunConfig::load(&acceptance_config()).unwrap();
    assert_eq!(RunConfig::parse(&acc.to_toml().unwrap()).unwrap(), acc);
}
