//! TOML configuration. Every section is optional; missing keys take their
//! defaults and unknown keys are rejected. Lengths in the detector sections
//! are fractions of the model diameter, angles are degrees.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use edgeppf::eval::EvalParams;
use edgeppf::pipeline::{DetectorConfig, IcpConfig, MatchConfig, ModelConfig, PreprocessConfig, QuantConfig, SamplingConfig, VerifyConfig};
use edgeppf::robot::{CalibrationSet, Intrinsics, ServoNoise, ServoParams};
use edgeppf::RigidTransform;

pub const CONFIG_ENV: &str = "PPF_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub symmetric_object: bool,
    pub adi_center_term: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalParams::default();
        Self {
            symmetric_object: d.symmetric_object,
            adi_center_term: d.adi_center_term,
        }
    }
}

/// Servo simulation. Poses are `[rx, ry, rz, tx, ty, tz]` with a rotation
/// vector in radians and a translation in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoSection {
    pub gain: f64,
    pub dt: f64,
    pub stop_trans: f64,
    pub stop_rot_deg: f64,
    pub max_steps: usize,
    pub calib_rot_sigma: f64,
    pub calib_trans_sigma: f64,
    pub meas_rot_sigma: f64,
    pub meas_trans_sigma: f64,
    pub focal_sigma: f64,
    pub center_sigma: f64,
    pub intrinsics: [f64; 4],
    pub hand_eye: [f64; 6],
    pub tool: [f64; 6],
    pub initial: [f64; 6],
    pub target: [f64; 6],
}

impl Default for ServoSection {
    fn default() -> Self {
        let n = ServoNoise::typical();
        Self {
            gain: 1.0,
            dt: 0.01,
            stop_trans: 1e-4,
            stop_rot_deg: 0.05,
            max_steps: 5000,
            calib_rot_sigma: n.calib_rot_sigma,
            calib_trans_sigma: n.calib_trans_sigma,
            meas_rot_sigma: n.meas_rot_sigma,
            meas_trans_sigma: n.meas_trans_sigma,
            focal_sigma: n.focal_sigma,
            center_sigma: n.center_sigma,
            intrinsics: [600.0, 600.0, 320.0, 240.0],
            hand_eye: [0.0, 0.0, 0.0, 0.05, 0.0, 0.08],
            tool: [0.0, 0.0, 0.0, 0.0, 0.0, 0.15],
            initial: [0.0, 0.0, 20f64.to_radians(), 0.05, 0.0, 0.4],
            target: [0.0, 0.0, 0.0, 0.0, 0.0, 0.4],
        }
    }
}

fn pose(v: &[f64; 6]) -> RigidTransform {
    RigidTransform::from_rotation_vector(nalgebra::Vector3::new(v[0], v[1], v[2]), nalgebra::Vector3::new(v[3], v[4], v[5]))
}

impl ServoSection {
    pub fn params(&self) -> ServoParams<f64> {
        ServoParams {
            gain: self.gain,
            dt: self.dt,
            stop_trans: self.stop_trans,
            stop_rot: self.stop_rot_deg.to_radians(),
            max_steps: self.max_steps,
            noise: ServoNoise {
                calib_rot_sigma: self.calib_rot_sigma,
                calib_trans_sigma: self.calib_trans_sigma,
                meas_rot_sigma: self.meas_rot_sigma,
                meas_trans_sigma: self.meas_trans_sigma,
                focal_sigma: self.focal_sigma,
                center_sigma: self.center_sigma,
            },
        }
    }

    pub fn calibration(&self) -> CalibrationSet<f64> {
        let [fx, fy, cx, cy] = self.intrinsics;
        CalibrationSet {
            t_c_e: pose(&self.hand_eye),
            t_t_e: pose(&self.tool),
            intrinsics: Intrinsics { fx, fy, cx, cy },
        }
    }

    pub fn initial_pose(&self) -> RigidTransform {
        pose(&self.initial)
    }

    pub fn target_pose(&self) -> RigidTransform {
        pose(&self.target)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub preprocess: PreprocessConfig,
    pub quant: QuantConfig,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub verify: VerifyConfig,
    pub icp: IcpConfig,
    pub eval: EvalSection,
    pub servo: ServoSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector().validate().map_err(anyhow::Error::msg)?;
        self.servo.params().validate().map_err(|e| anyhow::anyhow!("servo: {e}"))?;
        if self.servo.intrinsics.iter().any(|v| !v.is_finite()) || self.servo.intrinsics[0] <= 0.0 || self.servo.intrinsics[1] <= 0.0 {
            bail!("servo.intrinsics: focal lengths must be positive");
        }
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            preprocess: self.preprocess.clone(),
            quant: self.quant.clone(),
            model: self.model.clone(),
            sampling: self.sampling.clone(),
            matching: self.matching.clone(),
            verify: self.verify.clone(),
            icp: self.icp.clone(),
        }
    }

    pub fn eval_params(&self, zeta_rel: f64) -> EvalParams {
        EvalParams {
            zeta_rel,
            symmetric_object: self.eval.symmetric_object,
            adi_center_term: self.eval.adi_center_term,
        }
    }

    /// `--config` wins over `PPF_CONFIG`; without either the defaults apply.
    pub fn resolve(flag: Option<&Path>) -> Result<Self> {
        let path: Option<PathBuf> = flag
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use edgeppf::pipeline::{EarlyExit, SamplingMode};
    use edgeppf::verify::VerifyMethod;

    #[test]
    fn empty_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_and_enums() {
        let c = Config::parse(
            r#"
            [sampling]
            mode = "uniform"
            [verify]
            method = "surface-overlap"
            early_exit = "no-tiers"
            top_n = 5
            [match]
            cluster_rot_deg = 10.0
            [servo]
            gain = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(c.sampling.mode, SamplingMode::Uniform);
        assert_eq!(c.verify.method, VerifyMethod::SurfaceOverlap);
        assert_eq!(c.verify.early_exit, EarlyExit::NoTiers);
        assert_eq!(c.verify.top_n, 5);
        assert_eq!(c.matching.cluster_rot_deg, 10.0);
        assert_eq!(c.servo.gain, 2.0);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(Config::parse("[verify]\ntop_k = 3").is_err());
        assert!(Config::parse("[bogus]\nx = 1").is_err());
        assert!(Config::parse("[verify]\ntop_n = 0").is_err());
        assert!(Config::parse("[servo]\ndt = -1.0").is_err());
        assert!(Config::parse("[sampling]\nmode = \"random\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }
}
