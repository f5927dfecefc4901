//! File formats. Every file starts with `#` comment lines stating units and
//! frame conventions; machine-read settings use `# key=value` lines.
//! Numbers are written in shortest round-trip form, so a read-back is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationMatrices;
use crate::error::{Error, Result};
use crate::so3::{rotation_from_wxyz, rotation_to_wxyz};
use crate::synth::{gravity_vector, RawImuStream};
use crate::trajectory::{BonePoseSequence, Pose};

/// Header comments plus parsed numeric rows of a CSV file.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub settings: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn require_columns(&self, path: &Path, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| self.column(n).ok_or_else(|| Error::parse(path, format!("missing column `{n}`"))))
            .collect()
    }

    fn setting<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<Option<T>> {
        self.settings
            .get(key)
            .map(|v| v.parse().map_err(|_| Error::parse(path, format!("bad value for `{key}`: {v}"))))
            .transpose()
    }

    fn vec3(row: &[f64], idx: &[usize]) -> Vector3<f64> {
        Vector3::new(row[idx[0]], row[idx[1]], row[idx[2]])
    }

    fn rotation(path: &Path, row: &[f64], idx: &[usize], line: usize) -> Result<Rotation3<f64>> {
        rotation_from_wxyz([row[idx[0]], row[idx[1]], row[idx[2]], row[idx[3]]])
            .map_err(|e| Error::parse(path, format!("row {line}: {e}")))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = Table::default();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        for token in line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = token.split_once('=') {
                table.settings.insert(k.to_string(), v.to_string());
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    table.columns = reader
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, e))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("row {}: non-finite value", i + 1)));
        }
        table.rows.push(row);
    }
    Ok(table)
}

/// Writes comment lines, a header and rows. Parent directories are created.
pub fn write_table(path: &Path, comments: &[String], columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(columns).map_err(|e| Error::parse(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::parse(path, e))?;
    }
    let body = writer.into_inner().map_err(|e| Error::parse(path, e.error()))?;
    out.push_str(&String::from_utf8_lossy(&body));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn frame_rate_of(path: &Path, table: &Table, t_col: usize) -> Result<f64> {
    if let Some(rate) = table.setting::<f64>(path, "frame_rate_hz")? {
        return Ok(rate);
    }
    let n = table.rows.len();
    if n < 2 {
        return Err(Error::parse(path, "need at least two rows to infer the frame rate"));
    }
    let span = table.rows[n - 1][t_col] - table.rows[0][t_col];
    if !(span > 0.0) {
        return Err(Error::parse(path, "timestamps must increase"));
    }
    Ok((n - 1) as f64 / span)
}

const QUAT_COLS: [&str; 4] = ["qw", "qx", "qy", "qz"];

fn quat_row(r: &Rotation3<f64>) -> [f64; 4] {
    rotation_to_wxyz(r)
}

/// Bone poses: `frame,t,px,py,pz,qw,qx,qy,qz`, world frame, z up.
pub fn read_bone_csv(path: &Path) -> Result<BonePoseSequence> {
    let table = read_table(path)?;
    let idx = table.require_columns(path, &["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
    let rate = frame_rate_of(path, &table, idx[0])?;
    let samples = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            Ok(Pose::new(Table::vec3(row, &idx[1..4]), Table::rotation(path, row, &idx[4..8], i + 1)?))
        })
        .collect::<Result<Vec<_>>>()?;
    BonePoseSequence::new(rate, samples).map_err(|e| Error::parse(path, e))
}

pub fn write_bone_csv(path: &Path, frame_rate: f64, poses: &[Pose]) -> Result<()> {
    let comments = vec![
        "bone pose in the world frame (z up); position m, orientation R_WB as unit quaternion w,x,y,z".to_string(),
        format!("frame_rate_hz={frame_rate}"),
    ];
    let rows: Vec<Vec<f64>> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let q = quat_row(&p.rotation);
            vec![i as f64, i as f64 / frame_rate, p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3]]
        })
        .collect();
    write_table(path, &comments, &["frame", "t", "px", "py", "pz", "qw", "qx", "qy", "qz"], &rows)
}

/// Accelerometer and gyroscope go to `imu_path`, the magnetometer to `mag_path`.
pub fn write_raw_stream(imu_path: &Path, mag_path: &Path, stream: &RawImuStream) -> Result<()> {
    let settings = format!("keyframe_rate_hz={} substeps={}", stream.keyframe_rate, stream.substeps);
    let dt = stream.dt();
    let rows: Vec<Vec<f64>> = stream
        .accel
        .iter()
        .zip(&stream.gyro)
        .enumerate()
        .map(|(k, (a, g))| vec![k as f64, k as f64 * dt, a.x, a.y, a.z, g.x, g.y, g.z])
        .collect();
    write_table(
        imu_path,
        &[
            "sensor frame; specific force a m/s^2 (reads +g up at rest), angular velocity g rad/s".to_string(),
            settings.clone(),
        ],
        &["idx", "t", "ax", "ay", "az", "gx", "gy", "gz"],
        &rows,
    )?;
    let kdt = 1.0 / stream.keyframe_rate;
    let rows: Vec<Vec<f64>> = stream
        .mag
        .iter()
        .enumerate()
        .map(|(i, m)| vec![i as f64, i as f64 * kdt, m.x, m.y, m.z])
        .collect();
    write_table(
        mag_path,
        &["sensor frame; unit magnetic field direction, world north is +x".to_string(), settings],
        &["idx", "t", "mx", "my", "mz"],
        &rows,
    )
}

pub fn read_raw_stream(imu_path: &Path, mag_path: &Path) -> Result<RawImuStream> {
    let imu = read_table(imu_path)?;
    let mag = read_table(mag_path)?;
    let idx = imu.require_columns(imu_path, &["ax", "ay", "az", "gx", "gy", "gz"])?;
    let midx = mag.require_columns(mag_path, &["mx", "my", "mz"])?;
    let rate = imu
        .setting::<f64>(imu_path, "keyframe_rate_hz")?
        .ok_or_else(|| Error::parse(imu_path, "missing `keyframe_rate_hz` header"))?;
    let substeps = imu
        .setting::<usize>(imu_path, "substeps")?
        .ok_or_else(|| Error::parse(imu_path, "missing `substeps` header"))?;
    let stream = RawImuStream {
        keyframe_rate: rate,
        substeps,
        accel: imu.rows.iter().map(|r| Table::vec3(r, &idx[0..3])).collect(),
        gyro: imu.rows.iter().map(|r| Table::vec3(r, &idx[3..6])).collect(),
        mag: mag.rows.iter().map(|r| Table::vec3(r, &midx)).collect(),
        gravity: gravity_vector(),
    };
    stream.validate().map_err(|e| Error::parse(imu_path, e))?;
    Ok(stream)
}

/// Orientation series `idx,t,qw,qx,qy,qz`.
pub fn write_orientations(path: &Path, rate: f64, what: &str, rotations: &[Rotation3<f64>]) -> Result<()> {
    let rows: Vec<Vec<f64>> = rotations
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let q = quat_row(r);
            vec![k as f64, k as f64 / rate, q[0], q[1], q[2], q[3]]
        })
        .collect();
    write_table(
        path,
        &[format!("{what}; unit quaternion w,x,y,z"), format!("sample_rate_hz={rate}")],
        &["idx", "t", "qw", "qx", "qy", "qz"],
        &rows,
    )
}

pub fn read_orientations(path: &Path) -> Result<Vec<Rotation3<f64>>> {
    let table = read_table(path)?;
    let idx = table.require_columns(path, &QUAT_COLS)?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| Table::rotation(path, row, &idx, i + 1))
        .collect()
}

/// Three named columns of a signal file as vectors.
pub fn read_signal(path: &Path, columns: [&str; 3]) -> Result<Vec<Vector3<f64>>> {
    let table = read_table(path)?;
    let idx = table.require_columns(path, &columns)?;
    Ok(table.rows.iter().map(|r| Table::vec3(r, &idx)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationEntry {
    r_iw: [f64; 4],
    r_bs: [f64; 4],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CalibrationFile {
    sensors: BTreeMap<String, CalibrationEntry>,
}

const CALIBRATION_HEADER: &str = "# Per-sensor alignment: R_WB = R_IW^T * R_IS * R_BS^T.\n\
# r_iw is the IMU world frame in the mocap world, r_bs the sensor in the bone frame;\n\
# quaternions are w, x, y, z.\n";

pub fn write_calibration(path: &Path, calib: &BTreeMap<String, CalibrationMatrices>) -> Result<()> {
    let file = CalibrationFile {
        sensors: calib
            .iter()
            .map(|(id, c)| {
                (id.clone(), CalibrationEntry { r_iw: rotation_to_wxyz(&c.r_iw), r_bs: rotation_to_wxyz(&c.r_bs) })
            })
            .collect(),
    };
    let body = toml::to_string(&file).map_err(|e| Error::parse(path, e))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format!("{CALIBRATION_HEADER}{body}")).map_err(|e| Error::io(path, e))
}

pub fn read_calibration(path: &Path) -> Result<BTreeMap<String, CalibrationMatrices>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
    file.sensors
        .into_iter()
        .map(|(id, e)| {
            let r_iw = rotation_from_wxyz(e.r_iw).map_err(|err| Error::parse(path, format!("{id}.r_iw: {err}")))?;
            let r_bs = rotation_from_wxyz(e.r_bs).map_err(|err| Error::parse(path, format!("{id}.r_bs: {err}")))?;
            Ok((id, CalibrationMatrices { r_iw, r_bs }))
        })
        .collect()
}
