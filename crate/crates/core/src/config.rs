//! Pipeline configuration (TOML). Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationErrorParams;
use crate::error::{Error, Result};
use crate::eskf::{EskfConfig, ZuptConfig};
use crate::noise::{ImuNoiseParams, NoiseDensities, CONSUMER_MEMS};
use crate::so3::rotation_from_wxyz;
use crate::synth::{AccelSolveConfig, GyroSolveConfig};
use crate::trajectory::{MountingSpec, SlidingNoiseParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub id: String,
    pub bone_file: PathBuf,
    /// Sensor offset in the bone frame, m.
    #[serde(default)]
    pub p_bs: [f64; 3],
    /// Sensor orientation in the bone frame, quaternion w, x, y, z.
    #[serde(default = "identity_quat")]
    pub r_bs: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl SensorConfig {
    pub fn mounting(&self) -> Result<MountingSpec> {
        let rotation = rotation_from_wxyz(self.r_bs)
            .map_err(|e| Error::Config(format!("sensor `{}` r_bs: {e}", self.id)))?;
        MountingSpec::new(self.p_bs.into(), rotation)
            .map_err(|e| Error::Config(format!("sensor `{}`: {e}", self.id)))
    }
}

/// Noise profile plus optional per-quantity overrides. Densities are
/// continuous-time and converted at the stream sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// `consumer-mems` or `none`.
    pub profile: String,
    pub gyro_noise_density: Option<f64>,
    pub accel_noise_density: Option<f64>,
    pub gyro_random_walk: Option<f64>,
    pub accel_random_walk: Option<f64>,
    pub mag_white_std: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            profile: "consumer-mems".into(),
            gyro_noise_density: None,
            accel_noise_density: None,
            gyro_random_walk: None,
            accel_random_walk: None,
            mag_white_std: None,
        }
    }
}

impl NoiseSection {
    pub fn densities(&self) -> Result<NoiseDensities> {
        let base = match self.profile.as_str() {
            "consumer-mems" => CONSUMER_MEMS,
            "none" => NoiseDensities {
                gyro_noise_density: 0.0,
                accel_noise_density: 0.0,
                gyro_random_walk: 0.0,
                accel_random_walk: 0.0,
                mag_white_std: 0.0,
            },
            other => return Err(Error::Config(format!("unknown noise profile `{other}`"))),
        };
        Ok(NoiseDensities {
            gyro_noise_density: self.gyro_noise_density.unwrap_or(base.gyro_noise_density),
            accel_noise_density: self.accel_noise_density.unwrap_or(base.accel_noise_density),
            gyro_random_walk: self.gyro_random_walk.unwrap_or(base.gyro_random_walk),
            accel_random_walk: self.accel_random_walk.unwrap_or(base.accel_random_walk),
            mag_white_std: self.mag_white_std.unwrap_or(base.mag_white_std),
        })
    }

    pub fn params(&self, sample_rate: f64, seed: u64) -> Result<ImuNoiseParams> {
        let p = ImuNoiseParams::from_densities(&self.densities()?, sample_rate, seed);
        p.validate().map_err(|e| Error::Config(format!("[noise]: {e}")))?;
        Ok(p)
    }
}

/// Filter settings that are not derived from the noise profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EskfSection {
    pub gravity_noise_scale: f64,
    pub mag_noise_scale: f64,
    pub init_attitude_var: f64,
    pub init_bias_var: f64,
    pub use_mag: bool,
    pub use_zupt: bool,
}

impl Default for EskfSection {
    fn default() -> Self {
        let d = EskfConfig::default();
        EskfSection {
            gravity_noise_scale: d.gravity_noise_scale,
            mag_noise_scale: d.mag_noise_scale,
            init_attitude_var: d.init_attitude_var,
            init_bias_var: d.init_bias_var,
            use_mag: d.use_mag,
            use_zupt: d.use_zupt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationSource {
    /// The nominal mounting and an IMU world frame equal to the mocap world.
    #[default]
    Truth,
    /// A simulated T-pose at `reference_frame` using the fused orientations.
    Tpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub source: CalibrationSource,
    /// Keyframe index of the reference pose.
    pub reference_frame: usize,
    /// Heading of the subject's facing direction at the reference pose, rad.
    pub facing_heading: f64,
    pub iw_angle_mean: f64,
    pub bs_angle_mean: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let d = CalibrationErrorParams::default();
        CalibrationSection {
            source: CalibrationSource::Truth,
            reference_frame: 0,
            facing_heading: 0.0,
            iw_angle_mean: d.iw_angle_mean,
            bs_angle_mean: d.bs_angle_mean,
        }
    }
}

impl CalibrationSection {
    pub fn error_params(&self, seed: u64) -> CalibrationErrorParams {
        CalibrationErrorParams { iw_angle_mean: self.iw_angle_mean, bs_angle_mean: self.bs_angle_mean, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub root_sensor: String,
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub accel: AccelSolveConfig,
    #[serde(default)]
    pub gyro: GyroSolveConfig,
    /// The seed field is ignored; every sensor gets a derived seed.
    #[serde(default)]
    pub sliding: SlidingNoiseParams,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub eskf: EskfSection,
    #[serde(default)]
    pub zupt: ZuptConfig,
    #[serde(default)]
    pub calibration: CalibrationSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("no sensors configured".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.sensors {
            if s.id.is_empty() || s.id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid sensor id `{}`", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sensor id `{}`", s.id)));
            }
            s.mounting()?;
        }
        if !ids.contains(self.root_sensor.as_str()) {
            return Err(Error::MissingRootSensor(self.root_sensor.clone()));
        }
        let cfg_err = |section: &str, e: Error| Error::Config(format!("[{section}]: {e}"));
        self.accel.validate().map_err(|e| cfg_err("accel", e))?;
        self.gyro.validate().map_err(|e| cfg_err("gyro", e))?;
        self.sliding.validate().map_err(|e| cfg_err("sliding", e))?;
        self.calibration.error_params(0).validate().map_err(|e| cfg_err("calibration", e))?;
        if self.accel.substeps != self.gyro.substeps {
            return Err(Error::Config("[accel] and [gyro] substeps differ".into()));
        }
        self.noise.densities()?;
        self.eskf_config(60.0)?;
        Ok(())
    }

    /// Filter tuned to the configured noise profile at the stream rate.
    pub fn eskf_config(&self, sample_rate: f64) -> Result<EskfConfig> {
        let noise = self.noise.params(sample_rate, 0)?;
        let e = &self.eskf;
        let cfg = EskfConfig {
            gravity_noise_scale: e.gravity_noise_scale,
            mag_noise_scale: e.mag_noise_scale,
            init_attitude_var: e.init_attitude_var,
            init_bias_var: e.init_bias_var,
            use_mag: e.use_mag,
            use_zupt: e.use_zupt,
            zupt: self.zupt,
            ..EskfConfig::from_noise(&noise)
        };
        cfg.validate().map_err(|e| Error::Config(format!("[eskf]: {e}")))?;
        Ok(cfg)
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorConfig> {
        self.sensors.iter().find(|s| s.id == id)
    }
}
