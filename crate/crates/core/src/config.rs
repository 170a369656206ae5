//! Flat `key = value` configuration for the pipeline and the simulator.
//!
//! One pair per line; blank lines and lines starting with `#` are skipped.
//! Unknown keys and malformed values are errors.

use std::fmt::{self, Display, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::affinity::{AffinityParams, BestMode};
use crate::graph::{GraphParams, TemporalWindow};
use crate::multicut::TwoStageParams;
use crate::precluster::PreclusterParams;
use crate::simulator::SimConfig;
use crate::trajectories::InterpolationParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {message}")]
    InvalidValue { key: String, value: String, message: String },
    #[error("key `{key}` given twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
}

/// Splits a document into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        if let Some((first, ..)) = out.iter().find(|(_, key, _)| key == k) {
            return Err(ConfigError::Duplicate {
                key: k.to_string(),
                first: *first,
                second: i + 1,
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override as given on the command line.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: v.to_string(),
        message: e.to_string(),
    })
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// How tracklets are associated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Association {
    /// One lifted multicut over temporal and spatial edges.
    #[default]
    Joint,
    /// Temporal linking inside each camera first, then cross-camera linking
    /// of the resulting tracks with spatial edges only.
    PerCameraThenLink,
}

impl FromStr for Association {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Self::Joint),
            "per_camera" => Ok(Self::PerCameraThenLink),
            other => Err(format!("expected joint or per_camera, got `{other}`")),
        }
    }
}

impl Display for Association {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Joint => "joint",
            Self::PerCameraThenLink => "per_camera",
        })
    }
}

fn best_mode(key: &str, v: &str) -> Result<BestMode, ConfigError> {
    match v {
        "max" => Ok(BestMode::Max),
        "min_literal" => Ok(BestMode::MinLiteral),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: v.to_string(),
            message: "expected max or min_literal".into(),
        }),
    }
}

/// Settings for fitting combiners from a labeled scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingParams {
    /// Sampling rounds per pair sampler.
    pub rounds: usize,
    /// Identity switches injected into training tracklets, per eligible pair.
    pub switch_rate: f64,
    pub seed: u64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            rounds: 30,
            switch_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub precluster: PreclusterParams,
    pub affinity: AffinityParams,
    pub split_enabled: bool,
    pub split_threshold: f64,
    pub graph: GraphParams,
    pub two_stage: TwoStageParams,
    pub association: Association,
    pub interpolation: InterpolationParams,
    pub match_threshold: f64,
    pub weights_temporal: Option<PathBuf>,
    pub weights_spatial: Option<PathBuf>,
    pub weights_split: Option<PathBuf>,
    pub training: TrainingParams,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 25] = [
        "precluster_radius",
        "visible_iou",
        "velocity_window",
        "agreement_prior",
        "best",
        "split",
        "split_threshold",
        "t_base",
        "t_max",
        "fps",
        "temporal_window",
        "max_rounds",
        "association",
        "search_radius",
        "grid_step",
        "cylinder_radius",
        "cylinder_height",
        "match_threshold",
        "weights_temporal",
        "weights_spatial",
        "weights_split",
        "train_rounds",
        "train_switch_rate",
        "seed",
        "threads",
    ];

    pub fn defaults() -> Self {
        Self {
            split_enabled: true,
            split_threshold: crate::tracklets::DEFAULT_SPLIT_THRESHOLD,
            match_threshold: crate::evaluation::DEFAULT_MATCH_THRESHOLD,
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults();
        for (_, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "precluster_radius" => self.precluster.radius = value(key, v)?,
            "visible_iou" => self.precluster.visible_iou = value(key, v)?,
            "velocity_window" => self.affinity.velocity_window = value(key, v)?,
            "agreement_prior" => self.affinity.agreement_prior = value(key, v)?,
            "best" => self.affinity.best_mode = best_mode(key, v)?,
            "split" => self.split_enabled = value(key, v)?,
            "split_threshold" => self.split_threshold = value(key, v)?,
            "t_base" => self.graph.t_base = value(key, v)?,
            "t_max" => self.graph.t_max = value(key, v)?,
            "fps" => self.graph.fps = value(key, v)?,
            "temporal_window" => self.graph.temporal_window = value::<TemporalWindow>(key, v)?,
            "max_rounds" => self.two_stage.max_rounds = value(key, v)?,
            "association" => self.association = value(key, v)?,
            "search_radius" => self.interpolation.radius = value(key, v)?,
            "grid_step" => self.interpolation.grid_step = value(key, v)?,
            "cylinder_radius" => self.interpolation.cylinder_radius = value(key, v)?,
            "cylinder_height" => self.interpolation.cylinder_height = value(key, v)?,
            "match_threshold" => self.match_threshold = value(key, v)?,
            "weights_temporal" => self.weights_temporal = optional_path(v),
            "weights_spatial" => self.weights_spatial = optional_path(v),
            "weights_split" => self.weights_split = optional_path(v),
            "train_rounds" => self.training.rounds = value(key, v)?,
            "train_switch_rate" => self.training.switch_rate = value(key, v)?,
            "seed" => self.training.seed = value(key, v)?,
            "threads" => self.threads = value(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Canonical document listing every key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let window = match self.graph.temporal_window {
            TemporalWindow::Span => "span",
            TemporalWindow::Gap => "gap",
        };
        let best = match self.affinity.best_mode {
            BestMode::Max => "max",
            BestMode::MinLiteral => "min_literal",
        };
        let values: [String; 25] = [
            self.precluster.radius.to_string(),
            self.precluster.visible_iou.to_string(),
            self.affinity.velocity_window.to_string(),
            self.affinity.agreement_prior.to_string(),
            best.to_string(),
            self.split_enabled.to_string(),
            self.split_threshold.to_string(),
            self.graph.t_base.to_string(),
            self.graph.t_max.to_string(),
            self.graph.fps.to_string(),
            window.to_string(),
            self.two_stage.max_rounds.to_string(),
            self.association.to_string(),
            self.interpolation.radius.to_string(),
            self.interpolation.grid_step.to_string(),
            self.interpolation.cylinder_radius.to_string(),
            self.interpolation.cylinder_height.to_string(),
            self.match_threshold.to_string(),
            path(&self.weights_temporal),
            path(&self.weights_spatial),
            path(&self.weights_split),
            self.training.rounds.to_string(),
            self.training.switch_rate.to_string(),
            self.training.seed.to_string(),
            self.threads.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

impl SimConfig {
    pub const KEYS: [&'static str; 26] = [
        "n_pedestrians",
        "n_cameras",
        "n_frames",
        "fps",
        "arena_width",
        "arena_depth",
        "speed_min",
        "speed_max",
        "waypoints",
        "foot_sigma",
        "pixel_sigma",
        "miss_rate",
        "false_positive_rate",
        "embedding_dim",
        "embedding_sigma",
        "tracklet_break_rate",
        "max_tracklet_gap",
        "id_switch_rate",
        "camera_height",
        "focal_length",
        "image_width",
        "image_height",
        "person_radius",
        "person_height",
        "visible_iou",
        "seed",
    ];

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (_, k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "n_pedestrians" => self.n_pedestrians = value(key, v)?,
            "n_cameras" => self.n_cameras = value(key, v)?,
            "n_frames" => self.n_frames = value(key, v)?,
            "fps" => self.fps = value(key, v)?,
            "arena_width" => self.arena_width = value(key, v)?,
            "arena_depth" => self.arena_depth = value(key, v)?,
            "speed_min" => self.speed_min = value(key, v)?,
            "speed_max" => self.speed_max = value(key, v)?,
            "waypoints" => self.waypoints = value(key, v)?,
            "foot_sigma" => self.foot_sigma = value(key, v)?,
            "pixel_sigma" => self.pixel_sigma = value(key, v)?,
            "miss_rate" => self.miss_rate = value(key, v)?,
            "false_positive_rate" => self.false_positive_rate = value(key, v)?,
            "embedding_dim" => self.embedding_dim = value(key, v)?,
            "embedding_sigma" => self.embedding_sigma = value(key, v)?,
            "tracklet_break_rate" => self.tracklet_break_rate = value(key, v)?,
            "max_tracklet_gap" => self.max_tracklet_gap = value(key, v)?,
            "id_switch_rate" => self.id_switch_rate = value(key, v)?,
            "camera_height" => self.camera_height = value(key, v)?,
            "focal_length" => self.focal_length = value(key, v)?,
            "image_width" => self.image_width = value(key, v)?,
            "image_height" => self.image_height = value(key, v)?,
            "person_radius" => self.person_radius = value(key, v)?,
            "person_height" => self.person_height = value(key, v)?,
            "visible_iou" => self.visible_iou = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = PipelineConfig::defaults();
        cfg.set("precluster_radius", "0.75").unwrap();
        cfg.set("best", "min_literal").unwrap();
        cfg.set("temporal_window", "gap").unwrap();
        cfg.set("association", "per_camera").unwrap();
        cfg.set("weights_split", "w/split.json").unwrap();
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::defaults());
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = PipelineConfig::parse("# tuned\n\n  t_base = 3 \nsplit=false\n").unwrap();
        assert_eq!(cfg.graph.t_base, 3.0);
        assert!(!cfg.split_enabled);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            PipelineConfig::parse("radius = 1"),
            Err(ConfigError::UnknownKey("radius".into()))
        );
        assert_eq!(PipelineConfig::parse("t_base"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            PipelineConfig::parse("t_base = soon"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("fps = 10\nfps = 12"),
            Err(ConfigError::Duplicate { first: 1, second: 2, .. })
        ));
    }

    #[test]
    fn simulator_keys() {
        let cfg = SimConfig::parse("n_pedestrians = 3\nfoot_sigma = 0.1\nseed = 9").unwrap();
        assert_eq!((cfg.n_pedestrians, cfg.foot_sigma, cfg.seed), (3, 0.1, 9));
        assert!(SimConfig::parse("pedestrians = 3").is_err());
    }
}
