//! Orchestration of the synth, fuse, calibrate and feature stages over all
//! configured sensors, with derived per-stream seeds and a run manifest that
//! allows a bitwise replay.
//!
//! Output layout below the run directory:
//!
//! ```text
//! <sensor>/imu_clean.csv  mag_clean.csv  imu.csv  mag.csv
//! <sensor>/truth_orientation.csv  fused.csv  bone_estimate.csv
//! calibration.toml  features/<leaf>.csv  report.toml  manifest.toml
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{
    bone_orientation, perturb_calibration, simulate_tpose_calibration, CalibrationMatrices, TposeReference,
};
use crate::config::{CalibrationSource, PipelineConfig, SensorConfig};
use crate::error::{Error, Result};
use crate::eskf::fuse_stream;
use crate::evaluation::orientation_error_series;
use crate::io;
use crate::noise::{add_noise, ImuNoiseParams};
use crate::noninertial::{corrected_leaf_acceleration, root_frame_quantities};
use crate::so3::rotation_to_wxyz;
use crate::synth::{synthesize, RawImuStream};
use crate::trajectory::{perturbed_sensor_trajectory, BonePoseSequence, SlidingNoiseParams};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub no_noise: bool,
    #[serde(default)]
    pub no_calib_error: bool,
    pub window: Option<usize>,
}

/// Seed of one random stream, a hash of the global seed, the sensor id and
/// the stage name.
pub fn derive_seed(global: u64, sensor: &str, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{global}:{sensor}:{stage}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSeeds {
    pub sliding: u64,
    pub noise: u64,
    pub calibration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub seed: u64,
    pub options: RunOptions,
    pub stages_completed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub seeds: BTreeMap<String, SensorSeeds>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// A loaded config with overrides applied and the run directory fixed.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub options: RunOptions,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn new(config_path: &Path, options: RunOptions) -> Result<Self> {
        let bytes = fs::read(config_path).map_err(|e| Error::io(config_path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::parse(config_path, e))?;
        let base = config_path.parent().unwrap_or(Path::new("."));
        let mut config = PipelineConfig::from_toml(&text, base)?;
        if let Some(w) = options.window {
            if w == 0 {
                return Err(Error::Config("--window must be at least 1".into()));
            }
            config.accel.window = Some(w);
            config.gyro.window = Some(w);
        }
        let seed = options.seed.unwrap_or(config.seed);
        let out_dir = match &options.out {
            Some(p) => p.clone(),
            None => config.resolve(&config.output_dir),
        };
        let config_path = fs::canonicalize(config_path).map_err(|e| Error::io(config_path, e))?;
        Ok(Run { config, config_path, config_sha256: sha256_hex(&bytes), options, seed, out_dir })
    }

    pub fn seeds(&self, sensor: &str) -> SensorSeeds {
        SensorSeeds {
            sliding: derive_seed(self.seed, sensor, "sliding"),
            noise: derive_seed(self.seed, sensor, "noise"),
            calibration: derive_seed(self.seed, sensor, "calibration"),
        }
    }

    fn sensor_path(&self, sensor: &str, file: &str) -> PathBuf {
        self.out_dir.join(sensor).join(file)
    }

    fn bones(&self, sensor: &SensorConfig) -> Result<BonePoseSequence> {
        io::read_bone_csv(&self.config.resolve(&sensor.bone_file))
    }

    fn root(&self) -> Result<&SensorConfig> {
        self.config
            .sensor(&self.config.root_sensor)
            .ok_or_else(|| Error::MissingRootSensor(self.config.root_sensor.clone()))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest {
            version: VERSION.to_string(),
            command: command.to_string(),
            config_path: self.config_path.clone(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            options: RunOptions { out: None, ..self.options.clone() },
            stages_completed: Vec::new(),
            failed_stage: None,
            seeds: self.config.sensors.iter().map(|s| (s.id.clone(), self.seeds(&s.id))).collect(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Everything the synth stage produces for one sensor.
#[derive(Debug, Clone)]
pub struct SensorSynthesis {
    pub id: String,
    pub bones: BonePoseSequence,
    pub clean: RawImuStream,
    pub noisy: RawImuStream,
    /// `R_WS` at every high-rate sample.
    pub truth: Vec<Rotation3<f64>>,
}

pub fn synth_sensor(run: &Run, sensor: &SensorConfig) -> Result<SensorSynthesis> {
    let stage = |st: &'static str| move |e: Error| e.at_stage(&sensor.id, st);
    let cfg = &run.config;
    let seeds = run.seeds(&sensor.id);
    let bones = run.bones(sensor)?;
    let mount = sensor.mounting()?;
    let sliding = if run.options.no_noise {
        SlidingNoiseParams::zero()
    } else {
        SlidingNoiseParams { seed: seeds.sliding, ..cfg.sliding }
    };
    let traj = perturbed_sensor_trajectory(&bones, &mount, &sliding).map_err(stage("trajectory"))?;
    let synthesis = synthesize(&traj, &cfg.accel, &cfg.gyro).map_err(stage("synthesis"))?;
    let clean = synthesis.stream;
    let noise = if run.options.no_noise {
        ImuNoiseParams::zero()
    } else {
        cfg.noise.params(clean.sample_rate(), seeds.noise)?
    };
    let (noisy, _) = add_noise(&clean, &noise, 0).map_err(stage("noise"))?;
    Ok(SensorSynthesis { id: sensor.id.clone(), bones, clean, noisy, truth: synthesis.orientations })
}

/// Collects written files into the manifest.
struct Outputs<'a> {
    run: &'a Run,
    manifest: RunManifest,
}

impl<'a> Outputs<'a> {
    fn new(run: &'a Run, command: &str) -> Result<Self> {
        fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
        Ok(Outputs { run, manifest: run.manifest(command) })
    }

    fn record(&mut self, stage: &str, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.run.out_dir).unwrap_or(path);
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.manifest.outputs.push(FileRecord { path: rel, sha256: sha256_file(path)?, stage: stage.to_string() });
        Ok(())
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let abs = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        let record = FileRecord { path: abs.display().to_string(), sha256: sha256_file(path)?, stage: String::new() };
        if !self.manifest.inputs.contains(&record) {
            self.manifest.inputs.push(record);
        }
        Ok(())
    }

    fn stage_done(&mut self, stage: &str) {
        self.manifest.stages_completed.push(stage.to_string());
    }

    /// Writes the manifest, marking `failed` if a stage errored.
    fn finish(mut self, failed: Option<&str>) -> Result<RunManifest> {
        self.manifest.failed_stage = failed.map(str::to_string);
        let path = self.run.out_dir.join(MANIFEST_FILE);
        let text = toml::to_string(&self.manifest).map_err(|e| Error::parse(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }

    /// Runs a stage; on failure the partial manifest is written first.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.stage_done(name);
                Ok(v)
            }
            Err(e) => {
                let partial = Outputs { run: self.run, manifest: self.manifest.clone() };
                partial.finish(Some(name))?;
                Err(e)
            }
        }
    }
}

fn write_synthesis(out: &mut Outputs, s: &SensorSynthesis) -> Result<()> {
    let run = out.run;
    let files = [
        ("imu_clean.csv", "mag_clean.csv", &s.clean),
        ("imu.csv", "mag.csv", &s.noisy),
    ];
    for (imu, mag, stream) in files {
        let (a, m) = (run.sensor_path(&s.id, imu), run.sensor_path(&s.id, mag));
        io::write_raw_stream(&a, &m, stream)?;
        out.record("synth", &a)?;
        out.record("synth", &m)?;
    }
    let truth = run.sensor_path(&s.id, "truth_orientation.csv");
    io::write_orientations(&truth, s.clean.sample_rate(), "true sensor orientation R_WS", &s.truth)?;
    out.record("synth", &truth)
}

fn synth_all(run: &Run) -> Result<Vec<SensorSynthesis>> {
    run.config.sensors.par_iter().map(|s| synth_sensor(run, s)).collect()
}

/// Synthesizes clean and noisy raw streams for every sensor.
pub fn cmd_synth(run: &Run) -> Result<RunManifest> {
    let mut out = Outputs::new(run, "synth")?;
    out.stage("synth", |out| {
        for s in &run.config.sensors {
            out.input(&run.config.resolve(&s.bone_file))?;
        }
        for s in synth_all(run)? {
            write_synthesis(out, &s)?;
        }
        Ok(())
    })?;
    out.finish(None)
}

/// Per-sensor results of a stage that continues past individual failures.
#[derive(Debug)]
pub struct FuseOutcome {
    pub manifest: RunManifest,
    pub failures: Vec<Error>,
}

fn fuse_one(run: &Run, stream: &RawImuStream, id: &str) -> Result<Vec<Rotation3<f64>>> {
    let cfg = run.config.eskf_config(stream.sample_rate())?;
    fuse_stream(stream, &cfg).map_err(|e| e.at_stage(id, "fusion"))
}

fn write_fused(out: &mut Outputs, id: &str, rate: f64, fused: &[Rotation3<f64>]) -> Result<()> {
    let path = out.run.sensor_path(id, "fused.csv");
    io::write_orientations(&path, rate, "fused sensor orientation R_IS", fused)?;
    out.record("fuse", &path)
}

/// Fuses the noisy streams written by `synth`. A sensor that fails is
/// reported and skipped.
pub fn cmd_fuse(run: &Run) -> Result<FuseOutcome> {
    let mut out = Outputs::new(run, "fuse")?;
    let results: Vec<(String, Result<(f64, Vec<Rotation3<f64>>)>)> = run
        .config
        .sensors
        .par_iter()
        .map(|s| {
            let r = io::read_raw_stream(&run.sensor_path(&s.id, "imu.csv"), &run.sensor_path(&s.id, "mag.csv"))
                .map_err(|e| e.at_stage(&s.id, "fusion"))
                .and_then(|stream| Ok((stream.sample_rate(), fuse_one(run, &stream, &s.id)?)));
            (s.id.clone(), r)
        })
        .collect();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok((rate, fused)) => write_fused(&mut out, &id, rate, &fused)?,
            Err(e) => failures.push(e),
        }
    }
    if failures.is_empty() {
        out.stage_done("fuse");
    }
    let failed = (!failures.is_empty()).then_some("fuse");
    Ok(FuseOutcome { manifest: out.finish(failed)?, failures })
}

/// T-pose calibration of every sensor from fused orientations at the
/// configured reference keyframe.
pub fn tpose_calibration(
    run: &Run,
    fused: &BTreeMap<String, Vec<Rotation3<f64>>>,
    bones: &BTreeMap<String, BonePoseSequence>,
    substeps: usize,
) -> Result<BTreeMap<String, CalibrationMatrices>> {
    let frame = run.config.calibration.reference_frame;
    let mut refs = BTreeMap::new();
    for (id, series) in fused {
        let bone = &bones[id];
        let k = frame * substeps;
        if frame >= bone.len() || k >= series.len() {
            return Err(Error::Config(format!(
                "calibration reference frame {frame} is outside the sequence of `{id}`"
            )));
        }
        refs.insert(id.clone(), TposeReference { r_is: series[k], r_wb: bone.samples()[frame].rotation });
    }
    simulate_tpose_calibration(&refs, &run.config.root_sensor, run.config.calibration.facing_heading)
}

fn write_calibration(out: &mut Outputs, calib: &BTreeMap<String, CalibrationMatrices>) -> Result<()> {
    let path = out.run.out_dir.join("calibration.toml");
    io::write_calibration(&path, calib)?;
    out.record("calibrate", &path)
}

/// Runs the simulated T-pose calibration on the files written by `fuse`.
pub fn cmd_calibrate(run: &Run) -> Result<RunManifest> {
    let mut out = Outputs::new(run, "calibrate")?;
    run.root()?;
    out.stage("calibrate", |out| {
        let mut fused = BTreeMap::new();
        let mut bones = BTreeMap::new();
        let mut substeps = run.config.accel.substeps;
        for s in &run.config.sensors {
            let path = run.sensor_path(&s.id, "fused.csv");
            fused.insert(s.id.clone(), io::read_orientations(&path)?);
            let b = run.bones(s)?;
            substeps = fused[&s.id].len() / (b.len() - 1).max(1);
            bones.insert(s.id.clone(), b);
        }
        let calib = tpose_calibration(run, &fused, &bones, substeps.max(1))?;
        write_calibration(out, &calib)
    })?;
    out.finish(None)
}

/// Per-sensor error summary of a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    /// Mean geodesic error of `R_IS` against the true `R_WS`, degrees.
    pub fusion_error_deg: f64,
    /// Mean geodesic error of the calibrated bone orientation at keyframes.
    pub bone_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mean_fusion_error_deg: f64,
    pub mean_bone_error_deg: f64,
    pub sensors: BTreeMap<String, SensorReport>,
}

/// Full chain: synthesis, fusion, calibration with modeled error, bone
/// orientations and root-relative leaf features.
pub fn cmd_pipeline(run: &Run) -> Result<(RunManifest, PipelineReport)> {
    let cfg = &run.config;
    run.root()?;
    let mut out = Outputs::new(run, "pipeline")?;

    let synths = out.stage("synth", |out| {
        for s in &cfg.sensors {
            out.input(&cfg.resolve(&s.bone_file))?;
        }
        let synths = synth_all(run)?;
        for s in &synths {
            write_synthesis(out, s)?;
        }
        Ok(synths)
    })?;
    let substeps = cfg.accel.substeps;
    let rate = synths[0].clean.sample_rate();

    let fused: BTreeMap<String, Vec<Rotation3<f64>>> = out.stage("fuse", |out| {
        let fused: Vec<_> = synths
            .par_iter()
            .map(|s| fuse_one(run, &s.noisy, &s.id).map(|f| (s.id.clone(), f)))
            .collect::<Result<_>>()?;
        for (id, f) in &fused {
            write_fused(out, id, rate, f)?;
        }
        Ok(fused.into_iter().collect())
    })?;

    let bones: BTreeMap<String, BonePoseSequence> =
        synths.iter().map(|s| (s.id.clone(), s.bones.clone())).collect();
    let calib = out.stage("calibrate", |out| {
        let nominal = match cfg.calibration.source {
            CalibrationSource::Truth => cfg
                .sensors
                .iter()
                .map(|s| Ok((s.id.clone(), CalibrationMatrices { r_iw: Rotation3::identity(), r_bs: s.mounting()?.rotation })))
                .collect::<Result<BTreeMap<_, _>>>()?,
            CalibrationSource::Tpose => tpose_calibration(run, &fused, &bones, substeps)?,
        };
        let calib = if run.options.no_calib_error {
            nominal
        } else {
            nominal
                .into_iter()
                .map(|(id, c)| {
                    let params = cfg.calibration.error_params(run.seeds(&id).calibration);
                    Ok((id, perturb_calibration(&c, &params)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()?
        };
        write_calibration(out, &calib)?;
        Ok(calib)
    })?;

    let (estimates, report) = out.stage("bones", |out| {
        let mut estimates = BTreeMap::new();
        let mut sensors = BTreeMap::new();
        for s in &synths {
            let est: Vec<Rotation3<f64>> = fused[&s.id].iter().map(|r| bone_orientation(r, &calib[&s.id])).collect();
            let path = run.sensor_path(&s.id, "bone_estimate.csv");
            io::write_orientations(&path, rate, "calibrated bone orientation R_WB", &est)?;
            out.record("bones", &path)?;
            let at_keys: Vec<_> = (0..s.bones.len() - 1).map(|i| est[i * substeps]).collect();
            let truth_keys: Vec<_> = s.bones.samples()[..s.bones.len() - 1].iter().map(|p| p.rotation).collect();
            sensors.insert(
                s.id.clone(),
                SensorReport {
                    fusion_error_deg: orientation_error_series(&fused[&s.id], &s.truth)?.mean,
                    bone_error_deg: orientation_error_series(&at_keys, &truth_keys)?.mean,
                },
            );
            estimates.insert(s.id.clone(), est);
        }
        let n = sensors.len() as f64;
        let report = PipelineReport {
            mean_fusion_error_deg: sensors.values().map(|r| r.fusion_error_deg).sum::<f64>() / n,
            mean_bone_error_deg: sensors.values().map(|r| r.bone_error_deg).sum::<f64>() / n,
            sensors,
        };
        Ok((estimates, report))
    })?;

    out.stage("features", |out| {
        let root_id = &cfg.root_sensor;
        let root = &bones[root_id];
        for (id, leaf) in bones.iter().filter(|(id, _)| *id != root_id) {
            if leaf.len() != root.len() || leaf.frame_rate() != root.frame_rate() {
                return Err(Error::InvalidInput(format!("`{id}` and the root are not sampled alike")).at_stage(id, "features"));
            }
            let quantities = root_frame_quantities(root.frame_rate(), root.samples(), leaf.samples())
                .map_err(|e| e.at_stage(id, "features"))?;
            let rows: Vec<Vec<f64>> = quantities
                .iter()
                .map(|q| {
                    let k = q.frame * substeps;
                    let r_rl = estimates[root_id][k].inverse() * estimates[id][k];
                    let quat = rotation_to_wxyz(&r_rl);
                    let a = corrected_leaf_acceleration(&q.root, &q.leaf);
                    vec![q.frame as f64, q.frame as f64 / root.frame_rate(), quat[0], quat[1], quat[2], quat[3], a.x, a.y, a.z]
                })
                .collect();
            let path = run.out_dir.join("features").join(format!("{id}.csv"));
            io::write_table(
                &path,
                &[
                    format!("leaf `{id}` in the root frame: estimated R_RL (w,x,y,z) and a_RL + a_fic m/s^2"),
                    format!("frame_rate_hz={}", root.frame_rate()),
                ],
                &["frame", "t", "qw", "qx", "qy", "qz", "ax", "ay", "az"],
                &rows,
            )?;
            out.record("features", &path)?;
        }
        let path = run.out_dir.join("report.toml");
        let text = toml::to_string(&report).map_err(|e| Error::parse(&path, e))?;
        fs::write(&path, format!("# mean geodesic errors in degrees\n{text}")).map_err(|e| Error::io(&path, e))?;
        out.record("features", &path)
    })?;

    Ok((out.finish(None)?, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub out_dir: PathBuf,
    pub matched: usize,
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-runs the command recorded in a manifest into `out_dir` and compares
/// every output hash. The config and input files must be unchanged.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.failed_stage.is_some() {
        return Err(Error::Config("cannot replay a failed run".into()));
    }
    let options = RunOptions { out: Some(out_dir.to_path_buf()), seed: Some(manifest.seed), ..manifest.options.clone() };
    let run = Run::new(&manifest.config_path, options)?;
    if run.config_sha256 != manifest.config_sha256 {
        return Err(Error::Config(format!("{} changed since the recorded run", manifest.config_path.display())));
    }
    for input in &manifest.inputs {
        if sha256_file(Path::new(&input.path))? != input.sha256 {
            return Err(Error::Config(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let replayed = match manifest.command.as_str() {
        "synth" => cmd_synth(&run)?,
        "pipeline" => cmd_pipeline(&run)?.0,
        other => return Err(Error::Config(format!("manifest command `{other}` cannot be replayed"))),
    };
    let fresh: BTreeMap<&str, &str> =
        replayed.outputs.iter().map(|r| (r.path.as_str(), r.sha256.as_str())).collect();
    let mut report = ReplayReport { out_dir: out_dir.to_path_buf(), matched: 0, mismatched: Vec::new() };
    for r in &manifest.outputs {
        if fresh.get(r.path.as_str()) == Some(&r.sha256.as_str()) {
            report.matched += 1;
        } else {
            report.mismatched.push(r.path.clone());
        }
    }
    if replayed.outputs.len() != manifest.outputs.len() {
        report.mismatched.push(format!("{} outputs recorded, {} replayed", manifest.outputs.len(), replayed.outputs.len()));
    }
    Ok(report)
}
