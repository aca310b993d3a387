//! Scene-spec grammar and sweep configuration files.

use std::path::Path;

use depthcomp::eval::SweepConfig;
use depthcomp::patterns::{parse_key_values, reject_unknown, take_param, Pattern, PatternSpec};
use depthcomp::pipeline::{FullResInit, PipelineConfig, PredictorKind};
use depthcomp::synthetic::{SceneLayout, SceneSpec};
use serde::Deserialize;

use crate::CliError;

/// `layout[:width=W,height=H,min=M,max=M,seed=S]`, e.g.
/// `planes:width=304,height=228,min=1,max=10,seed=3`.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec, CliError> {
    let (kind, mut pairs) = parse_key_values(text)?;
    let layout: SceneLayout = kind.parse()?;
    let defaults = SceneSpec::new(layout, 0);
    let spec = SceneSpec {
        width: take_param(&mut pairs, "width", defaults.width)?,
        height: take_param(&mut pairs, "height", defaults.height)?,
        layout,
        depth_range: (
            take_param(&mut pairs, "min", defaults.depth_range.0)?,
            take_param(&mut pairs, "max", defaults.depth_range.1)?,
        ),
        seed: take_param(&mut pairs, "seed", defaults.seed)?,
    };
    reject_unknown(kind, &pairs)?;
    spec.validate()?;
    Ok(spec)
}

pub fn describe_scene(spec: &SceneSpec) -> String {
    format!(
        "{}:width={},height={},min={},max={},seed={}",
        spec.layout, spec.width, spec.height, spec.depth_range.0, spec.depth_range.1, spec.seed
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PredictorName {
    Oracle,
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Predictor,
    Upsampled,
}

impl From<InitName> for FullResInit {
    fn from(name: InitName) -> Self {
        match name {
            InitName::Predictor => FullResInit::Predictor,
            InitName::Upsampled => FullResInit::Upsampled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleFile {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl Default for OracleFile {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineFile {
    pub steps: usize,
    pub neighbors: usize,
    pub max_reach: f64,
    pub full_res_init: InitName,
}

impl Default for PipelineFile {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self {
            steps: d.propagation.steps,
            neighbors: d.neighbors,
            max_reach: d.propagation.max_reach,
            full_res_init: InitName::Predictor,
        }
    }
}

impl PipelineFile {
    pub fn to_config(&self) -> PipelineConfig {
        let mut config = PipelineConfig::default();
        config.propagation.steps = self.steps;
        config.propagation.max_reach = self.max_reach;
        config.neighbors = self.neighbors;
        config.full_res_init = self.full_res_init.into();
        config
    }
}

/// Sweep file layout:
///
/// ```toml
/// predictor = "intensity"
/// seeds = [0, 1, 2]
/// scenes = ["planes:seed=1", "staircase:seed=2"]
/// patterns = ["random_k:k=500", "random_k:k=5", "lidar_lines:total=64,kept=16"]
///
/// [oracle]
/// a = 0.5
///
/// [pipeline]
/// steps = 18
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub predictor: PredictorName,
    pub seeds: Vec<u64>,
    pub scenes: Vec<String>,
    pub patterns: Vec<String>,
    #[serde(default)]
    pub oracle: OracleFile,
    #[serde(default)]
    pub pipeline: PipelineFile,
}

impl SweepFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_config(&self) -> Result<SweepConfig, CliError> {
        let scenes = self
            .scenes
            .iter()
            .map(|s| parse_scene_spec(s))
            .collect::<Result<Vec<_>, _>>()?;
        let patterns = self
            .patterns
            .iter()
            .map(|p| Ok(p.parse::<PatternSpec>()?.pattern))
            .collect::<Result<Vec<Pattern>, CliError>>()?;
        let predictor = match self.predictor {
            PredictorName::Intensity => PredictorKind::Intensity,
            PredictorName::Oracle => PredictorKind::Oracle {
                a: self.oracle.a,
                b: self.oracle.b,
                sigma: self.oracle.sigma,
                seed: 0,
            },
        };
        Ok(SweepConfig {
            scenes,
            patterns,
            predictor,
            seeds: self.seeds.clone(),
            pipeline: self.pipeline.to_config(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_spec_round_trip() {
        let spec = parse_scene_spec("planes:width=64,height=48,min=1,max=10,seed=3").unwrap();
        assert_eq!((spec.width, spec.height, spec.seed), (64, 48, 3));
        assert_eq!(parse_scene_spec(&describe_scene(&spec)).unwrap(), spec);
        let defaults = parse_scene_spec("staircase").unwrap();
        assert_eq!((defaults.width, defaults.height), (304, 228));
    }

    #[test]
    fn scene_spec_rejects_bad_input() {
        assert!(parse_scene_spec("cubes:seed=1").is_err());
        assert!(parse_scene_spec("planes:depth=3").is_err());
        assert!(parse_scene_spec("planes:min=5,max=2").is_err());
        assert!(parse_scene_spec("planes:width=abc").is_err());
    }

    #[test]
    fn sweep_file_parses() {
        let file: SweepFile = toml::from_str(
            r#"
predictor = "oracle"
seeds = [1, 2]
scenes = ["planes:width=64,height=48"]
patterns = ["random_k:k=5", "lidar_lines:total=16,kept=4"]
[oracle]
a = 0.5
b = 1.0
"#,
        )
        .unwrap();
        let config = file.to_config().unwrap();
        assert_eq!(config.patterns.len(), 2);
        assert_eq!(config.pipeline, PipelineConfig::default());
        assert!(matches!(config.predictor, PredictorKind::Oracle { a, .. } if a == 0.5));
        assert!(
            toml::from_str::<SweepFile>("predictor = \"intensity\"\nseeds=[1]\nscenes=[]\npatterns=[]\nextra=1")
                .is_err()
        );
    }
}
