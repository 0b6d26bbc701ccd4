//! Run configuration: a flat `key = value` file with dotted prefixes,
//! overridden by command-line flags. Window lengths are written in seconds
//! and convert to frames through `fps`, so the file stays frame-rate
//! agnostic.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crowdwatch_core::behavior::ClusterCount;
use crowdwatch_core::pipeline::PipelineConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Flag-level overrides shared by the subcommands; `None` means "not given".
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub threshold: Option<f64>,
    pub local_window_s: Option<f64>,
    pub global_window_s: Option<f64>,
    pub fps: Option<f64>,
    pub clusters: Option<String>,
    pub coast_frames: Option<u32>,
    pub seed: Option<u64>,
}

/// Everything a subcommand needs after file and flags are reconciled.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    /// Population override for resizable presets (`simulator.agents`).
    pub sim_agents: Option<usize>,
    /// Synthetic tracker corruption applied by `simulate`.
    pub tracker_sigma: f64,
    pub tracker_dropout: f64,
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                i + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn real(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| bad(format!("config key {key}: invalid number '{v}'"))),
        }
    }

    fn integer(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| bad(format!("config key {key}: invalid integer '{v}'"))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(bad(format!("config key {key}: expected true/false, got '{v}'"))),
            },
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

fn positive(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(bad(format!("{name} must be a positive number, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(bad(format!("{name} must be non-negative, got {v}")))
    }
}

fn seconds_to_frames(name: &str, seconds: f64, fps: f64) -> Result<usize, ConfigError> {
    positive(name, seconds)?;
    Ok((seconds * fps).round().max(1.0) as usize)
}

pub fn parse_clusters(value: &str) -> Result<ClusterCount, ConfigError> {
    if value == "auto" {
        return Ok(ClusterCount::Auto);
    }
    match value.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(ClusterCount::Fixed(k)),
        _ => Err(bad(format!("clusters must be 'auto' or a positive integer, got '{value}'"))),
    }
}

/// Builds the effective configuration: frame-rate first (it scales every
/// derived default), then file keys, then flags on top.
pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Resolved, ConfigError> {
    let mut keys = Keys(match file {
        Some(path) => parse_file(path)?,
        None => BTreeMap::new(),
    });

    let fps = match flags.fps {
        Some(v) => v,
        None => keys.real("fps")?.unwrap_or(25.0),
    };
    positive("fps", fps)?;

    let mut pipeline = PipelineConfig::defaults_for_fps(fps);

    if let Some(v) = keys.real("agent.radius")? {
        pipeline.params.radius = positive("agent.radius", v)?;
    }
    // Speeds and the avoidance horizon are written in human units (per
    // second, seconds) and stored per frame.
    if let Some(v) = keys.real("agent.max_speed")? {
        pipeline.params.max_speed = positive("agent.max_speed", v)? / fps;
    }
    if let Some(v) = keys.real("agent.pref_speed")? {
        pipeline.params.pref_speed = positive("agent.pref_speed", v)? / fps;
    }
    if pipeline.params.pref_speed > pipeline.params.max_speed {
        return Err(bad("agent.pref_speed must not exceed agent.max_speed"));
    }
    if let Some(v) = keys.real("agent.time_horizon")? {
        pipeline.params.time_horizon = positive("agent.time_horizon", v)? * fps;
    }
    if let Some(v) = keys.real("agent.neighbor_dist")? {
        pipeline.params.neighbor_dist = positive("agent.neighbor_dist", v)?;
    }
    if let Some(v) = keys.integer("agent.max_neighbors")? {
        if v == 0 {
            return Err(bad("agent.max_neighbors must be at least 1"));
        }
        pipeline.params.max_neighbors = v as usize;
    }

    for (key, field) in [
        ("noise.process_sigma_pos", &mut pipeline.noise.process_sigma_pos),
        ("noise.process_sigma_vel", &mut pipeline.noise.process_sigma_vel),
        ("noise.process_sigma_goal", &mut pipeline.noise.process_sigma_goal),
        ("noise.meas_sigma", &mut pipeline.noise.meas_sigma),
    ] {
        if let Some(v) = keys.real(key)? {
            *field = positive(key, v)?;
        }
    }

    if let Some(v) = keys.integer("filter.goal_window")? {
        if v < 2 {
            return Err(bad("filter.goal_window must be at least 2"));
        }
        pipeline.filter.goal_window = v as usize;
    }
    if let Some(v) = keys.real("filter.goal_lookahead")? {
        pipeline.filter.goal_lookahead = positive("filter.goal_lookahead", v)?;
    }
    if let Some(v) = keys.integer("filter.coast_limit")? {
        pipeline.filter.coast_limit = v as u32;
    }
    if let Some(v) = flags.coast_frames {
        pipeline.filter.coast_limit = v;
    }

    let local_s = flags
        .local_window_s
        .or(keys.real("behavior.local_window")?);
    if let Some(s) = local_s {
        pipeline.behavior.local_window = seconds_to_frames("behavior.local_window", s, fps)?;
    }
    let global_s = flags
        .global_window_s
        .or(keys.real("behavior.global_window")?);
    if let Some(s) = global_s {
        pipeline.behavior.global_window = seconds_to_frames("behavior.global_window", s, fps)?;
    }
    if pipeline.behavior.local_window > pipeline.behavior.global_window {
        return Err(bad("behavior.local_window must not exceed behavior.global_window"));
    }
    if let Some(s) = keys.real("behavior.warmup")? {
        pipeline.behavior.warmup_frames = seconds_to_frames("behavior.warmup", s, fps)?;
    }
    if let Some(v) = keys.real("behavior.position_scale")? {
        pipeline.behavior.position_scale = positive("behavior.position_scale", v)?;
    }
    if let Some(v) = flags.clusters.clone().or(keys.string("behavior.clusters")) {
        pipeline.behavior.clusters = parse_clusters(&v)?;
    }
    if let Some(v) = keys.boolean("behavior.whole_crowd")? {
        pipeline.behavior.whole_crowd = v;
    }

    if let Some(v) = flags.threshold.or(keys.real("detector.threshold")?) {
        pipeline.detector.threshold = positive("detector.threshold", v)?;
    }
    if let Some(v) = keys.integer("detector.hysteresis_m")? {
        pipeline.detector.hysteresis_m = v as usize;
    }
    if let Some(v) = keys.integer("detector.hysteresis_n")? {
        pipeline.detector.hysteresis_n = v as usize;
    }
    let (m, n) = (pipeline.detector.hysteresis_m, pipeline.detector.hysteresis_n);
    if m < 1 || m > n {
        return Err(bad(format!("hysteresis needs 1 <= m <= n, got m={m} n={n}")));
    }
    if let Some(v) = keys.real("detector.global_fraction")? {
        if !(v > 0.0 && v <= 1.0) {
            return Err(bad(format!("detector.global_fraction must be in (0, 1], got {v}")));
        }
        pipeline.detector.global_fraction = v;
    }

    let seed = match flags.seed {
        Some(v) => v,
        None => keys.integer("seed")?.unwrap_or(0),
    };
    pipeline.behavior.seed = seed;

    let sim_agents = match keys.integer("simulator.agents")? {
        Some(0) => return Err(bad("simulator.agents must be at least 1")),
        Some(v) => Some(v as usize),
        None => None,
    };
    let tracker_sigma = match keys.real("tracker.position_sigma")? {
        Some(v) => non_negative("tracker.position_sigma", v)?,
        None => 0.0,
    };
    let tracker_dropout = match keys.real("tracker.dropout")? {
        Some(v) => {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(format!("tracker.dropout must be in [0, 1), got {v}")));
            }
            v
        }
        None => 0.0,
    };

    if let Some(unknown) = keys.0.keys().next() {
        return Err(bad(format!("unknown config key '{unknown}'")));
    }

    Ok(Resolved {
        pipeline,
        seed,
        sim_agents,
        tracker_sigma,
        tracker_dropout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_without_file_or_flags() {
        let r = resolve(None, &Overrides::default()).unwrap();
        assert_eq!(r.pipeline.fps, 25.0);
        assert_eq!(r.pipeline.behavior.local_window, 25);
        assert_eq!(r.pipeline.behavior.global_window, 125);
        assert_eq!(r.pipeline.detector.threshold, 1.0);
        assert_eq!(r.seed, 0);
    }

    #[test]
    fn file_keys_apply_and_flags_win() {
        let f = write_config(
            "detector.threshold = 2.5\nbehavior.local_window = 2.0\nfps = 10\n# comment\nseed = 9\n",
        );
        let r = resolve(Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!(r.pipeline.detector.threshold, 2.5);
        assert_eq!(r.pipeline.fps, 10.0);
        assert_eq!(r.pipeline.behavior.local_window, 20);
        assert_eq!(r.seed, 9);

        let flags = Overrides {
            threshold: Some(4.0),
            local_window_s: Some(3.0),
            ..Overrides::default()
        };
        let r = resolve(Some(f.path()), &flags).unwrap();
        assert_eq!(r.pipeline.detector.threshold, 4.0);
        assert_eq!(r.pipeline.behavior.local_window, 30);
    }

    #[test]
    fn fps_scales_window_flags() {
        let flags = Overrides {
            fps: Some(50.0),
            local_window_s: Some(1.0),
            global_window_s: Some(5.0),
            ..Overrides::default()
        };
        let r = resolve(None, &flags).unwrap();
        assert_eq!(r.pipeline.behavior.local_window, 50);
        assert_eq!(r.pipeline.behavior.global_window, 250);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let f = write_config("detector.treshold = 2.5\n");
        let e = resolve(Some(f.path()), &Overrides::default()).unwrap_err();
        assert!(e.0.contains("unknown config key"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "detector.threshold = -1\n",
            "detector.hysteresis_m = 4\ndetector.hysteresis_n = 2\n",
            "tracker.dropout = 1.0\n",
            "behavior.clusters = zero\n",
            "agent.max_neighbors = 0\n",
            "behavior.local_window = 10\nbehavior.global_window = 2\n",
        ] {
            let f = write_config(text);
            assert!(resolve(Some(f.path()), &Overrides::default()).is_err(), "{text}");
        }
    }

    #[test]
    fn simulator_and_tracker_keys() {
        let f = write_config(
            "simulator.agents = 100\ntracker.position_sigma = 0.05\ntracker.dropout = 0.05\n",
        );
        let r = resolve(Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!(r.sim_agents, Some(100));
        assert_eq!(r.tracker_sigma, 0.05);
        assert_eq!(r.tracker_dropout, 0.05);
    }

    #[test]
    fn clusters_flag_parses_auto_and_fixed() {
        assert_eq!(parse_clusters("auto").unwrap(), ClusterCount::Auto);
        assert_eq!(parse_clusters("4").unwrap(), ClusterCount::Fixed(4));
        assert!(parse_clusters("0").is_err());
    }
}
