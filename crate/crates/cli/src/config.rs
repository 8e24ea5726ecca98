use std::path::{Path, PathBuf};

use mesocal::pipeline::PipelineConfig;
use mesocal::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Locations of the raw inputs, relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Inputs {
    pub links: PathBuf,
    pub nodes: PathBuf,
    pub trajectories: PathBuf,
}

impl Default for Inputs {
    fn default() -> Self {
        Self {
            links: "inputs/links.csv".into(),
            nodes: "inputs/nodes.csv".into(),
            trajectories: "inputs/trajectories.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub inputs: Inputs,
    pub pipeline: PipelineConfig,
    pub scenario: ScenarioConfig,
}

/// A parsed config with input paths resolved.
pub struct Loaded {
    pub file: FileConfig,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let (mut file, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Missing(format!("config {}: {e}", p.display())))?;
                let file: FileConfig = toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        if let Some(s) = seed {
            file.pipeline.seed = s;
            file.scenario.seed = s;
        }
        Ok(Self { file, base_dir })
    }

    /// Input paths are taken relative to the config file; without a config
    /// file they are taken relative to the output directory.
    pub fn input(&self, p: &Path, out: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else if self.base_dir.as_os_str().is_empty() && !out.as_os_str().is_empty() {
            out.join(p)
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.file.pipeline.validate().map_err(|e| CliError::Invalid(e.to_string()))
    }

    /// Canonical serialization used for provenance records.
    pub fn digest_text(&self) -> String {
        toml::to_string(&self.file).unwrap_or_default()
    }
}

/// Comment lines placed above a key of the template.
fn comment_for(section: &str, key: &str) -> &'static str {
    match (section, key) {
        ("inputs", "links") => "Link table: link_id, from, to, length_m, speed_mps, optional lanes and capacity (vph)",
        ("inputs", "nodes") => "Node table: node_id and x, y in metres (or lat, lon), optional is_junction",
        ("inputs", "trajectories") => {
            "One row per link traversal: trip_id, day, link_id, entry_time_s, origin_x, origin_y, dest_x, dest_y, optional exit_time_s"
        }
        ("pipeline", "penetration") => "Share of all trips observed as trajectories, in (0, 1]",
        ("pipeline", "reestimate_speeds") => "Replace link speed limits by an observed speed percentile",
        ("pipeline", "speed_percentile") => "Percentile of observed link speeds used as the limit",
        ("pipeline", "speed_min_obs") => "Observations a link needs before its limit is replaced",
        ("pipeline", "gmm_k_min") => "Zone count search range when gmm_k is unset",
        ("pipeline", "gmm_k_max") => "",
        ("pipeline", "cut_threshold") => "Jaccard similarity at which observed paths merge into one cluster",
        ("pipeline", "gamma") => "Weight of the regional-total term of the flow objective",
        ("pipeline", "rho") => "Weight of the link-count term of the flow objective",
        ("pipeline", "spsa_max_iter") => "Calibration iteration cap",
        ("pipeline", "spsa_min_iter") => "Iterations before the stopping rule may fire",
        ("pipeline", "gain_replicates") => "Replicated evaluations used to derive gains when none are given",
        ("pipeline", "seed") => "Seed for clustering, trip tables, calibration and evaluation",
        ("pipeline.spsa_tolerance", "relative") => "Stop when the change in total travel time falls below this (absolute = seconds)",
        ("pipeline.admm", "penalty") => "Initial ADMM penalty",
        ("pipeline.admm", "eps_abs") => "Absolute and relative termination tolerances",
        ("pipeline.admm", "max_iter") => "ADMM iteration cap",
        ("pipeline.admm", "scaling_iters") => "Ruiz equilibration passes",
        ("pipeline.admm", "polish") => "Refine the solution on the detected active set",
        ("pipeline.admm", "adaptive_interval") => "Iterations between penalty re-balancing",
        ("pipeline.admm", "relaxation") => "Over-relaxation factor in (0, 2)",
        ("pipeline.admm", "check_interval") => "Termination is checked every this many iterations",
        ("pipeline.theta0", "capacity_scale") => "Multiplier on link capacity",
        ("pipeline.theta0", "junction_delay") => "Seconds added when crossing a junction",
        ("pipeline.theta0", "min_headway") => "Minimum seconds between exits from one link",
        ("pipeline.theta0", "speed_factor_mean") => "Mean of the per-vehicle speed factor",
        ("pipeline.theta0", "speed_factor_std") => "Standard deviation of the per-vehicle speed factor",
        ("pipeline.theta0", "departure_jitter") => "Width in seconds of the uniform departure jitter",
        ("pipeline.theta0", "reroute_period") => "Seconds between en-route path choices (not calibrated)",
        ("pipeline.theta0", "reroute_prob") => "Probability a vehicle reconsiders its path (not calibrated)",
        ("pipeline.param_box", "lower") => {
            "Bounds in the order capacity_scale, junction_delay, min_headway, speed_factor_mean, speed_factor_std, departure_jitter"
        }
        ("scenario", "grid_size") => "Nodes per side of the synthetic grid",
        ("scenario", "block_m") => "Link length in metres",
        ("scenario", "speed_mps") => "Speed limit of every link",
        ("scenario", "capacity_vph") => "Hourly capacity of every link",
        ("scenario", "zone_centers") => "Zone centres as [row, column] grid nodes",
        ("scenario", "zone_radius") => "Trip ends fall within this many blocks of a centre",
        ("scenario", "hourly_demand") => "Mean trips per hour per OD pair, one entry per interval",
        ("scenario", "od_spread") => "Per-OD demand multipliers lie in [1 - spread, 1 + spread]",
        ("scenario", "penetration") => "Share of completed trips written as trajectories",
        ("scenario", "endpoint_noise_m") => "Standard deviation of the noise on recorded endpoints",
        ("scenario", "theta") => "Simulator parameters of the ground truth",
        ("scenario", "seed") => "Seed of the synthetic scenario",
        _ => "",
    }
}

/// Commented-out optional keys, appended to a section.
fn optional_keys(section: &str) -> &'static [&'static str] {
    match section {
        "pipeline" => &[
            "Fixed zone count instead of the BIC search:",
            "gmm_k = 4",
            "Fixed SPSA gains instead of deriving them from the objective:",
            "gains = { a = 0.05, big_a = 4.0, alpha_exp = 0.602, c = 0.1, gamma_exp = 0.101 }",
        ],
        _ => &[],
    }
}

/// The default configuration with every key documented.
pub fn template() -> String {
    let body = toml::to_string(&FileConfig::default()).expect("default config serializes");
    let mut out = String::from(
        "# mesocal configuration. Every value shown is the default.\n\
         # Relative input paths are resolved against this file's directory.\n",
    );
    let mut section = String::new();
    let flush = |section: &str, out: &mut String| {
        for line in optional_keys(section) {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    };
    for line in body.lines() {
        let t = line.trim_start();
        if t.starts_with('[') {
            flush(&section, &mut out);
            section = t.trim_matches(|c| c == '[' || c == ']').to_string();
            out.push('\n');
        } else if let Some((key, _)) = t.split_once(" = ") {
            let c = comment_for(&section, key);
            if !c.is_empty() {
                out.push_str("# ");
                out.push_str(c);
                out.push('\n');
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    flush(&section, &mut out);
    out
}
