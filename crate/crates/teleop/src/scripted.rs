//! The insertion experiment replayed through the live service: one paused
//! server per scenario, driven tick by tick by a scripted client.

use insertion_core::experiments::{insertion_metrics, insertion_scenario, ExperimentConfig, InsertionSample, MetricsReport};
use insertion_core::tissue::STANDARD_SETUP_LABELS;
use insertion_core::trajectory::InsertionProfile;
use rayon::prelude::*;

use crate::client::{scripted_insertion, Client};
use crate::server::{spawn, ServerConfig};
use crate::TeleopError;

/// Runs one insertion scenario over WebSocket and returns its samples.
pub fn remote_insertion(cfg: &ExperimentConfig, setup: usize, speed: f64) -> Result<Vec<InsertionSample>, TeleopError> {
    let scenario = insertion_scenario(cfg, setup, speed)?;
    let duration = scenario.duration;
    let server = spawn(
        scenario,
        ServerConfig {
            bind: "127.0.0.1:0".into(),
            timescale: 0.0,
            start_paused: true,
            ..ServerConfig::default()
        },
    )?;
    let mut client = Client::connect(&server.url())?;
    let profile = InsertionProfile::new(speed, cfg.insertion.depth)?;
    let samples = scripted_insertion(&mut client, &profile, duration)?;
    client.close()?;
    Ok(samples)
}

/// Same metrics as the in-process insertion experiment, every scenario
/// driven through its own server.
pub fn remote_insertion_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, TeleopError> {
    let ins = &cfg.insertion;
    let runs: Vec<(usize, f64)> = (1..=STANDARD_SETUP_LABELS.len())
        .flat_map(|setup| ins.speeds.iter().map(move |&speed| (setup, speed)))
        .collect();
    let reports = runs
        .par_iter()
        .map(|&(setup, speed)| -> Result<MetricsReport, TeleopError> {
            let scenario = insertion_scenario(cfg, setup, speed)?;
            let samples = remote_insertion(cfg, setup, speed)?;
            let layers = scenario.tissue.sample()?.layers().len();
            Ok(insertion_metrics(
                &scenario.name,
                &samples,
                ins.depth * ins.haptic_scale,
                layers,
                scenario.tool.max_insertion_force,
            ))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = MetricsReport::default();
    for r in reports {
        report.extend(r);
    }
    Ok(report)
}
