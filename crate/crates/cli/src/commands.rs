//! The four subcommands. Each is a pure function of its inputs, config and
//! seed, writing into the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use reefsurvey::acoustics::{snap_rate_series, SnapRateSeries};
use reefsurvey::analysis::{pair_windows, shrimp_habitat_report, ShrimpHabitatReport};
use reefsurvey::mission::{execute, MissionError, MissionLog};
use reefsurvey::rng::{substream, Domain};
use reefsurvey::topics::{habitat_timeseries, observe_log, TopicModel, TopicTimeseries};
use reefsurvey::tracking::{run_tracking_episode, TrackMetrics, TrackingError};
use reefsurvey::world::{generate_world, GridWorld, WorldError};

use crate::config::{RunConfig, RESOLVED_CONFIG_FILE};
use crate::CliError;

pub const WORLD_FILE: &str = "world.json";
pub const HABITAT_SVG: &str = "habitat_map.svg";
pub const EKF_ERROR_CSV: &str = "ekf_error.csv";
pub const TOPICS_CSV: &str = "topic_timeseries.csv";
pub const SNAP_RATES_CSV: &str = "snap_rates.csv";
pub const RATES_CSV: &str = "observed_vs_predicted.csv";
pub const COEFFICIENTS_CSV: &str = "coefficients.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_SVG: &str = "snap_rate_report.svg";
pub const TRACK_LOG: &str = "track_log.jsonl";
pub const TRACK_METRICS_CSV: &str = "track_metrics.csv";
pub const TRAJECTORY_SVG: &str = "trajectory.svg";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn prepare(config: &RunConfig) -> Result<&Path, CliError> {
    config.validate()?;
    let out = config.out.as_path();
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join(RESOLVED_CONFIG_FILE), config.to_toml()?)?;
    Ok(out)
}

fn world_error(e: WorldError) -> CliError {
    match e {
        WorldError::Config(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

fn mission_error(e: MissionError) -> CliError {
    match e {
        MissionError::Config(m) | MissionError::Plan(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    }
}

fn load_world(path: &Path) -> Result<GridWorld, CliError> {
    GridWorld::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn world_gen(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let world = generate_world(&config.world, config.seed).map_err(world_error)?;
    let out = prepare(config)?;
    let world_path = out.join(WORLD_FILE);
    write(&world_path, world.to_json().map_err(world_error)?)?;
    let svg_path = out.join(HABITAT_SVG);
    write(&svg_path, habitat_svg(&world))?;
    Ok(vec![world_path, svg_path])
}

pub fn survey(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let world = load_world(&config.world_path())?;
    let plan = config.survey.plan(config.survey_bounds(&world)).map_err(mission_error)?;
    let log = execute(&plan, &world, &config.mission, config.seed).map_err(mission_error)?;
    let out = prepare(config)?;
    let log_path = log.write(out).map_err(mission_error)?;
    let csv_path = out.join(EKF_ERROR_CSV);
    write(&csv_path, log.ekf_error_csv())?;
    Ok(vec![log_path, csv_path])
}

pub struct Analysis {
    pub model: TopicModel,
    pub series: TopicTimeseries,
    pub rates: SnapRateSeries,
    pub report: ShrimpHabitatReport,
}

/// Topic discovery, snap detection and the habitat regression on one log.
pub fn run_analysis(log: &MissionLog, config: &RunConfig) -> Result<Analysis, CliError> {
    if log.drift_windows().is_empty() {
        return Err(CliError::Data("mission log has no drift windows to analyze".into()));
    }
    let mut model = TopicModel::new(log.header.grid, log.header.vocab_size, config.topics.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = substream(config.seed, Domain::Topics, 0);
    observe_log(&mut model, log, &mut rng).map_err(|e| CliError::Data(e.to_string()))?;
    model.gibbs_refine(config.topics.refine_sweeps, &mut rng);
    let series = habitat_timeseries(&model, log).map_err(|e| CliError::Data(e.to_string()))?;
    let rates = snap_rate_series(log, &config.acoustics).map_err(|e| CliError::Data(e.to_string()))?;
    let pairing = pair_windows(&rates, &series);
    let report = shrimp_habitat_report(&pairing, &series.labels, &model.topic_word_distributions(), &config.analysis)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Analysis { model, series, rates, report })
}

pub fn analyze(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    config.validate()?;
    let log_path = config.log_path();
    let log = MissionLog::read(&log_path).map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
    let Analysis { series, rates, report, .. } = run_analysis(&log, config)?;
    let out = prepare(config)?;
    let files = [
        (TOPICS_CSV, series.to_csv()),
        (SNAP_RATES_CSV, rates.to_csv(&log.header.grid)),
        (RATES_CSV, report.rates_csv(&log.header.grid)),
        (COEFFICIENTS_CSV, report.coefficients_csv()),
        (SUMMARY_JSON, report.summary_json()),
        (REPORT_SVG, report.svg()),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = out.join(name);
        write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

pub fn track(config: &RunConfig) -> Result<(Vec<PathBuf>, TrackMetrics), CliError> {
    config.validate()?;
    let world = load_world(&config.world_path())?;
    let log = run_tracking_episode(&world, &config.tracking, &config.target, config.track.duration_s, config.seed)
        .map_err(|e| match e {
            TrackingError::Config(m) => CliError::Config(m),
            TrackingError::Duration(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        })?;
    let metrics = log.metrics();
    let out = prepare(config)?;
    let paths = [out.join(TRACK_LOG), out.join(TRACK_METRICS_CSV), out.join(TRAJECTORY_SVG)];
    write(&paths[0], log.to_jsonl().map_err(|e| CliError::Data(e.to_string()))?)?;
    write(&paths[1], metrics.to_csv())?;
    write(&paths[2], log.trajectory_svg())?;
    Ok((paths.to_vec(), metrics))
}

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Dominant habitat per cell, north up.
pub fn habitat_svg(world: &GridWorld) -> String {
    let g = &world.grid;
    let px = (480.0 / g.nx.max(g.ny) as f64).max(1.0);
    let (w, h) = (g.nx as f64 * px, g.ny as f64 * px);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    for c in g.cells() {
        let (i, j) = g.coords(c);
        let colour = PALETTE[world.dominant_habitat(c) % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{px:.2}" height="{px:.2}" fill="{colour}"/>"#,
            i as f64 * px,
            h - (j + 1) as f64 * px
        );
    }
    out.push_str("</svg>\n");
    out
}
