//! One TOML file configures a whole run: estimator, sensor models, the
//! optional simulation scenario, the optional on-disk dataset, and the
//! evaluation settings. Validation collects every violation before failing
//! so a bad file is fixed in one pass.

use std::path::{Path, PathBuf};

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::ego_velocity::RansacConfig;
use crate::error::{Error, Result};
use crate::imu::ImuNoise;
use crate::metrics::ApeAlignment;
use crate::radar::RadarConfig;
use crate::sim::ScenarioSpec;
use crate::smoother::SmootherConfig;

/// Noise the estimator assumes for lidar-odometry poses. The pose files
/// carry no sigma column, so this is attached at load time; it is the
/// believed noise, deliberately independent of whatever the simulator
/// injected.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoConfig {
    /// Per-axis rotation sigma, rad.
    pub sigma_rot: f64,
    /// Per-axis translation sigma, m.
    pub sigma_pos: f64,
}

impl Default for LoConfig {
    fn default() -> Self {
        LoConfig {
            sigma_rot: 0.02,
            sigma_pos: 0.05,
        }
    }
}

impl LoConfig {
    pub fn sigma_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_row_slice(&[
            self.sigma_rot,
            self.sigma_rot,
            self.sigma_rot,
            self.sigma_pos,
            self.sigma_pos,
            self.sigma_pos,
        ])
    }

    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.sigma_rot > 0.0) {
            out.push(format!("lo.sigma_rot must be > 0, got {}", self.sigma_rot));
        }
        if !(self.sigma_pos > 0.0) {
            out.push(format!("lo.sigma_pos must be > 0, got {}", self.sigma_pos));
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding imu.csv, rig.json and the optional other streams.
    pub dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Arc-length separation for relative pose error, m.
    pub rpe_delta_m: f64,
    pub ape_alignment: ApeAlignment,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            rpe_delta_m: 10.0,
            ape_alignment: ApeAlignment::None,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.rpe_delta_m > 0.0) {
            out.push(format!(
                "evaluation.rpe_delta_m must be > 0, got {}",
                self.rpe_delta_m
            ));
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Simulation seed; the CLI --seed flag overrides it.
    pub seed: u64,
    pub estimator: SmootherConfig,
    pub imu: ImuNoise,
    pub radar: RadarConfig,
    pub ransac: RansacConfig,
    pub lo: LoConfig,
    pub evaluation: EvaluationConfig,
    pub dataset: Option<DatasetConfig>,
    pub scenario: Option<ScenarioSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::TomlParse {
            context: format!("parsing config {}", path.display()),
            source: e,
        })
    }

    /// Checks every section and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut out = Vec::new();
        self.estimator.validate(&mut out);
        self.imu.validate(&mut out);
        self.radar.validate(&mut out);
        self.ransac.validate(&mut out);
        self.lo.validate(&mut out);
        self.evaluation.validate(&mut out);
        if let Some(scenario) = &self.scenario {
            scenario.validate(&mut out);
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoother::FusionMode;

    #[test]
    fn empty_file_yields_all_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.estimator.mode, FusionMode::Lri);
        assert_eq!(cfg.evaluation.rpe_delta_m, 10.0);
        assert!(cfg.dataset.is_none());
        assert!(cfg.scenario.is_none());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 17

            [estimator]
            mode = "ri"
            lag_s = 1.5

            [lo]
            sigma_pos = 0.2

            [evaluation]
            rpe_delta_m = 5.0
            ape_alignment = "se3_umeyama"

            [dataset]
            dir = "/tmp/somewhere"

            [scenario.trajectory]
            kind = "loop_track"
            max_speed = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 17);
        assert_eq!(cfg.estimator.mode, FusionMode::Ri);
        assert_eq!(cfg.estimator.lag_s, 1.5);
        assert_eq!(cfg.lo.sigma_pos, 0.2);
        assert_eq!(cfg.evaluation.ape_alignment, ApeAlignment::Se3Umeyama);
        assert_eq!(
            cfg.dataset.unwrap().dir,
            PathBuf::from("/tmp/somewhere")
        );
        assert_eq!(cfg.scenario.unwrap().trajectory.max_speed, 5.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[estimator]\nlagg_s = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("lagg_s"), "{err}");
    }

    #[test]
    fn validate_reports_every_violation_at_once() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [imu]
            sigma_g = 0.0

            [radar]
            sigma = -1.0

            [lo]
            sigma_rot = 0.0

            [evaluation]
            rpe_delta_m = 0.0
            "#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        match err {
            Error::Config(violations) => {
                assert_eq!(violations.len(), 4, "{violations:?}");
                assert!(violations.iter().any(|v| v.starts_with("imu.")));
                assert!(violations.iter().any(|v| v.starts_with("radar.")));
                assert!(violations.iter().any(|v| v.starts_with("lo.")));
                assert!(violations.iter().any(|v| v.starts_with("evaluation.")));
            }
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.estimator.lag_s = 3.25;
        cfg.scenario = Some(crate::sim::ScenarioSpec::default());
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, 99);
        assert_eq!(back.estimator.lag_s, 3.25);
        assert!(back.scenario.is_some());
    }
}
