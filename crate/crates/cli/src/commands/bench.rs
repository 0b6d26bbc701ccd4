//! `bench`: run the full pipeline over a synthetic stream and report
//! per-frame processing time. Simulation and IO are excluded from the
//! measurement; only the per-frame learning + detection work counts.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use crowdwatch_core::evaluation::summarize_timings;
use crowdwatch_core::simulator::SimulatorError;
use crowdwatch_core::{build_scenario_sized, simulate, Observation, Pipeline};

use crate::commands::CliError;
use crate::config::Resolved;
use crate::formats::sig9;

pub fn run(
    out: &mut impl Write,
    summary: &mut impl Write,
    resolved: &Resolved,
    preset: &str,
) -> Result<(), CliError> {
    let scenario = build_scenario_sized(preset, resolved.seed, resolved.sim_agents)
        .map_err(|e| match e {
            SimulatorError::UnknownPreset { .. } | SimulatorError::FixedPopulation { .. } => {
                CliError::Usage(e.to_string())
            }
        })?;
    let result = simulate(&scenario);

    let mut frames: BTreeMap<u64, Vec<Observation>> = BTreeMap::new();
    for obs in result.observations {
        frames.entry(obs.frame).or_default().push(obs);
    }

    let mut pipeline = Pipeline::new(resolved.pipeline.clone());
    let mut timings: Vec<(u64, Duration)> = Vec::with_capacity(frames.len());
    for (frame, observations) in &frames {
        let output = pipeline
            .process_frame(*frame, observations)
            .map_err(|e| CliError::Input(format!("frame {frame}: {e}")))?;
        timings.push((*frame, output.latency));
    }

    writeln!(out, "frame,seconds")?;
    for (frame, latency) in &timings {
        writeln!(out, "{frame},{}", sig9(latency.as_secs_f64()))?;
    }
    out.flush()?;

    let durations: Vec<Duration> = timings.iter().map(|(_, d)| *d).collect();
    let report = summarize_timings(&durations).expect("scenarios are never empty");
    writeln!(
        summary,
        "agents={} samples={} median_s={} p95_s={} max_s={}",
        scenario.agents.len(),
        report.samples,
        sig9(report.median.as_secs_f64()),
        sig9(report.p95.as_secs_f64()),
        sig9(report.max.as_secs_f64())
    )?;
    summary.flush()?;
    Ok(())
}
