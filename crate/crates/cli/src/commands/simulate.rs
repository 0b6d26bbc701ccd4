//! `simulate`: render a named scenario to a trajectory file plus ground
//! truth. Corruption (`tracker.position_sigma`, `tracker.dropout` config
//! keys) is applied to the trajectory output only; the label file always
//! covers the clean run.

use std::io::Write;
use std::path::Path;

use crowdwatch_core::simulator::SimulatorError;
use crowdwatch_core::{build_scenario_sized, corrupt, simulate};

use crate::commands::{create_file, CliError};
use crate::config::Resolved;
use crate::formats::{self, Format, TrajectoryRecord};

pub struct SimulateOptions {
    pub preset: String,
    pub format: Format,
    pub labels_out: Option<std::path::PathBuf>,
}

pub fn run(
    out: &mut impl Write,
    resolved: &Resolved,
    options: &SimulateOptions,
) -> Result<(), CliError> {
    let scenario = build_scenario_sized(&options.preset, resolved.seed, resolved.sim_agents)
        .map_err(|e| match e {
            SimulatorError::UnknownPreset { .. } | SimulatorError::FixedPopulation { .. } => {
                CliError::Usage(e.to_string())
            }
        })?;
    let result = simulate(&scenario);

    if let Some(path) = &options.labels_out {
        write_label_file(path, &result.observations, &result.labels)?;
    }

    let observations = if resolved.tracker_sigma > 0.0 || resolved.tracker_dropout > 0.0 {
        // A distinct stream from the spawn jitter, still pinned to --seed.
        corrupt(
            &result.observations,
            resolved.tracker_sigma,
            resolved.tracker_dropout,
            resolved.seed.wrapping_add(1),
        )
    } else {
        result.observations
    };

    let records: Vec<TrajectoryRecord> = observations
        .iter()
        .map(|o| TrajectoryRecord {
            frame: o.frame,
            agent_id: o.agent.as_str().to_string(),
            x: o.position.x,
            y: o.position.y,
            label: None,
        })
        .collect();
    formats::write_trajectories(out, options.format, &records)?;
    out.flush()?;
    Ok(())
}

fn write_label_file(
    path: &Path,
    observations: &[crowdwatch_core::Observation],
    labels: &[bool],
) -> Result<(), CliError> {
    let rows: Vec<(u64, String, bool)> = observations
        .iter()
        .zip(labels)
        .map(|(o, &label)| (o.frame, o.agent.as_str().to_string(), label))
        .collect();
    let mut out = create_file(path)?;
    formats::write_labels(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
