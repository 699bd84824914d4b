//! Dataset ingestion and serialization.
//!
//! File formats (UTF-8, `.` decimal separator, exact headers):
//! - `imu.csv`: `t_ns,wx,wy,wz,ax,ay,az` (rad/s, m/s^2)
//! - `radar_doppler.csv`: `t_ns,mu_x,mu_y,mu_z,v_r,sigma`
//! - `radar_cloud.jsonl`: one JSON object per scan:
//!   `{"t_ns":..., "points":[{"x":..,"y":..,"z":..,"doppler":..}, ...]}`
//! - `lo_pose.csv`: `t_ns,px,py,pz,qw,qx,qy,qz` (unit quaternion, world<-IMU)
//! - `rig.json`: extrinsics as translation + scalar-first quaternion per
//!   sensor, plus the world-frame gravity vector
//! - `truth.csv` / `estimate.csv`:
//!   `t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,bax`-style
//!   17-column navigation-state rows
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! ingestion followed by re-serialization is lossless bit-for-bit.

use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{RigidTransform, Rotation};
use crate::types::{
    ImuMeasurement, LoPoseMeasurement, NavState, RadarDopplerMeasurement, RadarPoint,
    RadarPointCloud, SensorRig, TrajectorySample,
};

pub const IMU_HEADER: &str = "t_ns,wx,wy,wz,ax,ay,az";
pub const RADAR_DOPPLER_HEADER: &str = "t_ns,mu_x,mu_y,mu_z,v_r,sigma";
pub const LO_POSE_HEADER: &str = "t_ns,px,py,pz,qw,qx,qy,qz";
pub const TRAJECTORY_HEADER: &str =
    "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz";

/// Options applied while loading: sigma defaults that the files do not carry
/// and the doppler validity bound.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub max_doppler: f64,
    pub lo_sigma: SVector<f64, 6>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_doppler: 43.178,
            lo_sigma: SVector::<f64, 6>::from_row_slice(&[0.02, 0.02, 0.02, 0.05, 0.05, 0.05]),
        }
    }
}

/// All measurement streams of one run, each sorted by timestamp.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub imu: Vec<ImuMeasurement>,
    pub radar_doppler: Vec<RadarDopplerMeasurement>,
    pub radar_clouds: Vec<RadarPointCloud>,
    pub lo: Vec<LoPoseMeasurement>,
    pub rig: Option<SensorRig>,
}

/// A reference into one of the dataset streams, ordered for replay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Imu(usize),
    RadarDoppler(usize),
    RadarCloud(usize),
    Lo(usize),
}

impl Dataset {
    /// Replay order: globally sorted by timestamp; at equal timestamps IMU
    /// comes first (so the node exists before same-stamp attachments), then
    /// radar, then LO.
    pub fn merged_events(&self) -> Vec<(i64, Event)> {
        let mut events: Vec<(i64, u8, Event)> = Vec::with_capacity(
            self.imu.len() + self.radar_doppler.len() + self.radar_clouds.len() + self.lo.len(),
        );
        events.extend(self.imu.iter().enumerate().map(|(i, m)| (m.t_ns, 0, Event::Imu(i))));
        events.extend(
            self.radar_doppler
                .iter()
                .enumerate()
                .map(|(i, m)| (m.t_ns, 1, Event::RadarDoppler(i))),
        );
        events.extend(
            self.radar_clouds
                .iter()
                .enumerate()
                .map(|(i, m)| (m.t_ns, 2, Event::RadarCloud(i))),
        );
        events.extend(self.lo.iter().enumerate().map(|(i, m)| (m.t_ns, 3, Event::Lo(i))));
        events.sort_by_key(|&(t, pri, _)| (t, pri));
        events.into_iter().map(|(t, _, e)| (t, e)).collect()
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

fn parse_f64(file: &str, line: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        message: format!("column `{column}`: `{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_string(),
            line,
            message: format!("column `{column}`: non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

fn parse_t_ns(file: &str, line: usize, raw: &str) -> Result<i64> {
    raw.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        message: format!("column `t_ns`: `{raw}` is not an integer nanosecond stamp"),
    })
}

fn check_header(file: &str, got: Option<&str>, expected: &str) -> Result<()> {
    match got {
        Some(h) if h.trim_end() == expected => Ok(()),
        Some(h) => Err(Error::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("header `{h}` does not match required `{expected}`"),
        }),
        None => Err(Error::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("missing header `{expected}`"),
        }),
    }
}

fn check_monotone(file: &str, line: usize, prev: Option<i64>, next: i64) -> Result<()> {
    if let Some(p) = prev {
        if next <= p {
            return Err(Error::NonMonotone {
                file: file.to_string(),
                line,
                prev_ns: p,
                next_ns: next,
            });
        }
    }
    Ok(())
}

fn split_columns<'a>(
    file: &str,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != expected {
        return Err(Error::Parse {
            file: file.to_string(),
            line: line_no,
            message: format!("expected {expected} columns, found {}", cols.len()),
        });
    }
    Ok(cols)
}

pub fn load_imu_csv(path: &Path) -> Result<Vec<ImuMeasurement>> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    check_header(&file, lines.next(), IMU_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let c = split_columns(&file, line_no, line, 7)?;
        let t_ns = parse_t_ns(&file, line_no, c[0])?;
        check_monotone(&file, line_no, prev, t_ns)?;
        prev = Some(t_ns);
        out.push(ImuMeasurement {
            t_ns,
            angular_velocity: Vector3::new(
                parse_f64(&file, line_no, "wx", c[1])?,
                parse_f64(&file, line_no, "wy", c[2])?,
                parse_f64(&file, line_no, "wz", c[3])?,
            ),
            specific_force: Vector3::new(
                parse_f64(&file, line_no, "ax", c[4])?,
                parse_f64(&file, line_no, "ay", c[5])?,
                parse_f64(&file, line_no, "az", c[6])?,
            ),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyStream("imu"));
    }
    Ok(out)
}

pub fn load_radar_doppler_csv(path: &Path, max_doppler: f64) -> Result<Vec<RadarDopplerMeasurement>> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    check_header(&file, lines.next(), RADAR_DOPPLER_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let c = split_columns(&file, line_no, line, 6)?;
        let t_ns = parse_t_ns(&file, line_no, c[0])?;
        // Beam streams may emit several beams at one stamp; require
        // non-decreasing rather than strictly increasing within a stamp.
        if let Some(p) = prev {
            if t_ns < p {
                return Err(Error::NonMonotone {
                    file: file.clone(),
                    line: line_no,
                    prev_ns: p,
                    next_ns: t_ns,
                });
            }
        }
        prev = Some(t_ns);
        let bearing = Vector3::new(
            parse_f64(&file, line_no, "mu_x", c[1])?,
            parse_f64(&file, line_no, "mu_y", c[2])?,
            parse_f64(&file, line_no, "mu_z", c[3])?,
        );
        let bearing = crate::types::normalize_bearing(&bearing).map_err(|e| Error::Parse {
            file: file.clone(),
            line: line_no,
            message: format!("columns `mu_*`: {e}"),
        })?;
        let radial_speed = parse_f64(&file, line_no, "v_r", c[4])?;
        if radial_speed.abs() > max_doppler {
            return Err(Error::Parse {
                file: file.clone(),
                line: line_no,
                message: format!(
                    "column `v_r`: |{radial_speed}| exceeds max doppler {max_doppler}"
                ),
            });
        }
        let sigma = parse_f64(&file, line_no, "sigma", c[5])?;
        if sigma <= 0.0 {
            return Err(Error::Parse {
                file: file.clone(),
                line: line_no,
                message: format!("column `sigma`: must be > 0, got {sigma}"),
            });
        }
        out.push(RadarDopplerMeasurement {
            t_ns,
            bearing,
            radial_speed,
            sigma,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CloudRow {
    t_ns: i64,
    points: Vec<RadarPoint>,
}

pub fn load_radar_cloud_jsonl(path: &Path) -> Result<Vec<RadarPointCloud>> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: CloudRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: file.clone(),
            line: line_no,
            message: format!("invalid scan object: {e}"),
        })?;
        check_monotone(&file, line_no, prev, row.t_ns)?;
        prev = Some(row.t_ns);
        for (pi, p) in row.points.iter().enumerate() {
            let finite =
                p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.doppler.is_finite();
            if !finite || p.position().norm() == 0.0 {
                return Err(Error::Parse {
                    file: file.clone(),
                    line: line_no,
                    message: format!("point {pi}: non-finite or zero-norm position"),
                });
            }
        }
        out.push(RadarPointCloud {
            t_ns: row.t_ns,
            points: row.points,
        });
    }
    Ok(out)
}

pub fn load_lo_pose_csv(path: &Path, sigma: SVector<f64, 6>) -> Result<Vec<LoPoseMeasurement>> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    check_header(&file, lines.next(), LO_POSE_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let c = split_columns(&file, line_no, line, 8)?;
        let t_ns = parse_t_ns(&file, line_no, c[0])?;
        check_monotone(&file, line_no, prev, t_ns)?;
        prev = Some(t_ns);
        let translation = Vector3::new(
            parse_f64(&file, line_no, "px", c[1])?,
            parse_f64(&file, line_no, "py", c[2])?,
            parse_f64(&file, line_no, "pz", c[3])?,
        );
        let rotation = parse_quaternion(&file, line_no, &c[4..8])?;
        out.push(LoPoseMeasurement {
            t_ns,
            world_from_imu: RigidTransform::new(rotation, translation),
            sigma,
        });
    }
    Ok(out)
}

fn parse_quaternion(file: &str, line_no: usize, cols: &[&str]) -> Result<Rotation> {
    let w = parse_f64(file, line_no, "qw", cols[0])?;
    let x = parse_f64(file, line_no, "qx", cols[1])?;
    let y = parse_f64(file, line_no, "qy", cols[2])?;
    let z = parse_f64(file, line_no, "qz", cols[3])?;
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if (norm - 1.0).abs() > 1e-3 {
        return Err(Error::Parse {
            file: file.to_string(),
            line: line_no,
            message: format!("columns `q*`: quaternion norm {norm:.6} is not unit"),
        });
    }
    Rotation::from_quaternion_wxyz(w, x, y, z).map_err(|e| Error::Parse {
        file: file.to_string(),
        line: line_no,
        message: e.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    translation: [f64; 3],
    rotation_wxyz: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct RigJson {
    imu_from_radar: PoseJson,
    imu_from_lidar: PoseJson,
    gravity: [f64; 3],
}

fn pose_from_json(file: &str, p: &PoseJson, field: &str) -> Result<RigidTransform> {
    let q = &p.rotation_wxyz;
    let rotation = Rotation::from_quaternion_wxyz(q[0], q[1], q[2], q[3]).map_err(|e| {
        Error::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("{field}.rotation_wxyz: {e}"),
        }
    })?;
    Ok(RigidTransform::new(
        rotation,
        Vector3::from_row_slice(&p.translation),
    ))
}

pub fn load_rig_json(path: &Path) -> Result<SensorRig> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let rig: RigJson = serde_json::from_str(&text).map_err(|e| Error::Json {
        context: format!("parsing {file}"),
        source: e,
    })?;
    Ok(SensorRig {
        imu_from_radar: pose_from_json(&file, &rig.imu_from_radar, "imu_from_radar")?,
        imu_from_lidar: pose_from_json(&file, &rig.imu_from_lidar, "imu_from_lidar")?,
        gravity: Vector3::from_row_slice(&rig.gravity),
    })
}

pub fn load_trajectory_csv(path: &Path) -> Result<Vec<TrajectorySample>> {
    let file = file_name(path);
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    check_header(&file, lines.next(), TRAJECTORY_HEADER)?;
    let mut out = Vec::new();
    let mut prev = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let c = split_columns(&file, line_no, line, 17)?;
        let t_ns = parse_t_ns(&file, line_no, c[0])?;
        check_monotone(&file, line_no, prev, t_ns)?;
        prev = Some(t_ns);
        let mut v = [0.0f64; 16];
        for (k, col) in c[1..].iter().enumerate() {
            v[k] = parse_f64(&file, line_no, TRAJECTORY_HEADER.split(',').nth(k + 1).unwrap(), col)?;
        }
        let rotation = parse_quaternion(&file, line_no, &c[4..8])?;
        out.push(TrajectorySample {
            t_ns,
            state: NavState {
                world_from_imu: RigidTransform::new(rotation, Vector3::new(v[0], v[1], v[2])),
                velocity: Vector3::new(v[7], v[8], v[9]),
                bias_gyro: Vector3::new(v[10], v[11], v[12]),
                bias_accel: Vector3::new(v[13], v[14], v[15]),
            },
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyStream("trajectory"));
    }
    Ok(out)
}

/// Loads every stream present in `dir`. `imu.csv` and `rig.json` are
/// required; the radar and LO files are optional so one dataset layout
/// serves every estimator mode.
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let imu = load_imu_csv(&dir.join("imu.csv"))?;
    let rig = load_rig_json(&dir.join("rig.json"))?;
    let radar_doppler = {
        let p = dir.join("radar_doppler.csv");
        if p.exists() {
            load_radar_doppler_csv(&p, opts.max_doppler)?
        } else {
            Vec::new()
        }
    };
    let radar_clouds = {
        let p = dir.join("radar_cloud.jsonl");
        if p.exists() {
            load_radar_cloud_jsonl(&p)?
        } else {
            Vec::new()
        }
    };
    let lo = {
        let p = dir.join("lo_pose.csv");
        if p.exists() {
            load_lo_pose_csv(&p, opts.lo_sigma)?
        } else {
            Vec::new()
        }
    };
    Ok(Dataset {
        imu,
        radar_doppler,
        radar_clouds,
        lo,
        rig: Some(rig),
    })
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    Ok(BufWriter::new(f))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

macro_rules! wline {
    ($w:expr, $path:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*)
            .map_err(|e| Error::io(format!("writing {}", $path.display()), e))?
    };
}

pub fn write_imu_csv(path: &Path, rows: &[ImuMeasurement]) -> Result<()> {
    let mut w = create_file(path)?;
    wline!(w, path, "{IMU_HEADER}");
    for m in rows {
        wline!(
            w,
            path,
            "{},{},{},{},{},{},{}",
            m.t_ns,
            m.angular_velocity.x,
            m.angular_velocity.y,
            m.angular_velocity.z,
            m.specific_force.x,
            m.specific_force.y,
            m.specific_force.z
        );
    }
    finish(w, path)
}

pub fn write_radar_doppler_csv(path: &Path, rows: &[RadarDopplerMeasurement]) -> Result<()> {
    let mut w = create_file(path)?;
    wline!(w, path, "{RADAR_DOPPLER_HEADER}");
    for m in rows {
        wline!(
            w,
            path,
            "{},{},{},{},{},{}",
            m.t_ns,
            m.bearing.x,
            m.bearing.y,
            m.bearing.z,
            m.radial_speed,
            m.sigma
        );
    }
    finish(w, path)
}

pub fn write_radar_cloud_jsonl(path: &Path, rows: &[RadarPointCloud]) -> Result<()> {
    let mut w = create_file(path)?;
    for c in rows {
        let row = CloudRow {
            t_ns: c.t_ns,
            points: c.points.clone(),
        };
        let line = serde_json::to_string(&row).map_err(|e| Error::Json {
            context: format!("serializing scan at t={}", c.t_ns),
            source: e,
        })?;
        wline!(w, path, "{line}");
    }
    finish(w, path)
}

pub fn write_lo_pose_csv(path: &Path, rows: &[LoPoseMeasurement]) -> Result<()> {
    let mut w = create_file(path)?;
    wline!(w, path, "{LO_POSE_HEADER}");
    for m in rows {
        let p = &m.world_from_imu.translation;
        let q = m.world_from_imu.rotation.quaternion_wxyz();
        wline!(
            w,
            path,
            "{},{},{},{},{},{},{},{}",
            m.t_ns,
            p.x,
            p.y,
            p.z,
            q[0],
            q[1],
            q[2],
            q[3]
        );
    }
    finish(w, path)
}

pub fn write_rig_json(path: &Path, rig: &SensorRig) -> Result<()> {
    fn pose_json(t: &RigidTransform) -> PoseJson {
        PoseJson {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            rotation_wxyz: t.rotation.quaternion_wxyz(),
        }
    }
    let json = RigJson {
        imu_from_radar: pose_json(&rig.imu_from_radar),
        imu_from_lidar: pose_json(&rig.imu_from_lidar),
        gravity: [rig.gravity.x, rig.gravity.y, rig.gravity.z],
    };
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::Json {
        context: "serializing rig".to_string(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectorySample]) -> Result<()> {
    let mut w = create_file(path)?;
    wline!(w, path, "{TRAJECTORY_HEADER}");
    for s in rows {
        let st = &s.state;
        let p = &st.world_from_imu.translation;
        let q = st.world_from_imu.rotation.quaternion_wxyz();
        wline!(
            w,
            path,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t_ns,
            p.x,
            p.y,
            p.z,
            q[0],
            q[1],
            q[2],
            q[3],
            st.velocity.x,
            st.velocity.y,
            st.velocity.z,
            st.bias_gyro.x,
            st.bias_gyro.y,
            st.bias_gyro.z,
            st.bias_accel.x,
            st.bias_accel.y,
            st.bias_accel.z
        );
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_rot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("lri_dataset_{}_{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn random_imu(rng: &mut ChaCha8Rng, n: usize) -> Vec<ImuMeasurement> {
        let mut t = 0i64;
        (0..n)
            .map(|_| {
                t += rng.random_range(1_000_000..3_000_000i64);
                ImuMeasurement {
                    t_ns: t,
                    angular_velocity: Vector3::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    ),
                    specific_force: Vector3::new(
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                        rng.random_range(-20.0..20.0),
                    ),
                }
            })
            .collect()
    }

    #[test]
    fn imu_round_trip_is_lossless() {
        let dir = temp_dir("imu_rt");
        let path = dir.join("imu.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut rows = random_imu(&mut rng, 500);
        // Values with awkward decimal expansions must survive exactly.
        rows[0].angular_velocity.x = 0.1;
        rows[0].specific_force.z = -9.81;
        rows[1].angular_velocity.y = 1.0 / 3.0;
        write_imu_csv(&path, &rows).unwrap();
        let back = load_imu_csv(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.t_ns, b.t_ns);
            assert_eq!(a.angular_velocity, b.angular_velocity);
            assert_eq!(a.specific_force, b.specific_force);
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn empty_imu_stream_is_an_error() {
        let dir = temp_dir("imu_empty");
        let path = dir.join("imu.csv");
        fs::write(&path, format!("{IMU_HEADER}\n")).unwrap();
        match load_imu_csv(&path) {
            Err(Error::EmptyStream(which)) => assert_eq!(which, "imu"),
            other => panic!("expected EmptyStream, got {other:?}"),
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn shuffled_rows_are_rejected_with_both_stamps() {
        let dir = temp_dir("imu_shuffle");
        let path = dir.join("imu.csv");
        fs::write(
            &path,
            format!("{IMU_HEADER}\n100,0,0,0,0,0,0\n50,0,0,0,0,0,0\n"),
        )
        .unwrap();
        match load_imu_csv(&path) {
            Err(Error::NonMonotone {
                line,
                prev_ns,
                next_ns,
                ..
            }) => {
                assert_eq!(line, 3);
                assert_eq!((prev_ns, next_ns), (100, 50));
            }
            other => panic!("expected NonMonotone, got {other:?}"),
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn malformed_field_names_file_line_and_column() {
        let dir = temp_dir("imu_malformed");
        let path = dir.join("imu.csv");
        fs::write(&path, format!("{IMU_HEADER}\n100,0,zzz,0,0,0,0\n")).unwrap();
        match load_imu_csv(&path) {
            Err(Error::Parse { file, line, message }) => {
                assert!(file.contains("imu.csv"));
                assert_eq!(line, 2);
                assert!(message.contains("wy"), "message: {message}");
            }
            other => panic!("expected Parse, got {other:?}"),
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = temp_dir("imu_header");
        let path = dir.join("imu.csv");
        fs::write(&path, "t,wx,wy,wz,ax,ay,az\n100,0,0,0,0,0,0\n").unwrap();
        assert!(matches!(load_imu_csv(&path), Err(Error::Parse { line: 1, .. })));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn radar_doppler_round_trip_and_bounds() {
        let dir = temp_dir("radar_rt");
        let path = dir.join("radar_doppler.csv");
        let rows = vec![
            RadarDopplerMeasurement {
                t_ns: 10,
                bearing: Vector3::new(1.0, 0.0, 0.0),
                radial_speed: -5.25,
                sigma: 0.169,
            },
            RadarDopplerMeasurement {
                t_ns: 10,
                bearing: Vector3::new(0.6, 0.8, 0.0),
                radial_speed: 2.0,
                sigma: 0.169,
            },
        ];
        write_radar_doppler_csv(&path, &rows).unwrap();
        let back = load_radar_doppler_csv(&path, 43.178).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].radial_speed, -5.25);
        assert_eq!(back[1].bearing, Vector3::new(0.6, 0.8, 0.0));

        fs::write(
            &path,
            format!("{RADAR_DOPPLER_HEADER}\n10,1,0,0,99.0,0.169\n"),
        )
        .unwrap();
        assert!(load_radar_doppler_csv(&path, 43.178).is_err());

        fs::write(
            &path,
            format!("{RADAR_DOPPLER_HEADER}\n10,0.9,0,0,1.0,0.169\n"),
        )
        .unwrap();
        assert!(load_radar_doppler_csv(&path, 43.178).is_err());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn cloud_jsonl_round_trip() {
        let dir = temp_dir("cloud_rt");
        let path = dir.join("radar_cloud.jsonl");
        let clouds = vec![
            RadarPointCloud {
                t_ns: 1000,
                points: vec![
                    RadarPoint {
                        x: 10.0,
                        y: 0.5,
                        z: -0.25,
                        doppler: -3.125,
                    },
                    RadarPoint {
                        x: 4.0,
                        y: -2.0,
                        z: 1.0,
                        doppler: 0.169,
                    },
                ],
            },
            RadarPointCloud {
                t_ns: 2000,
                points: vec![],
            },
        ];
        write_radar_cloud_jsonl(&path, &clouds).unwrap();
        let back = load_radar_cloud_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].points.len(), 2);
        assert_eq!(back[0].points[1].doppler, 0.169);
        assert_eq!(back[1].points.len(), 0);

        fs::write(&path, r#"{"t_ns":1,"points":[{"x":0,"y":0,"z":0,"doppler":1}]}"#).unwrap();
        assert!(load_radar_cloud_jsonl(&path).is_err());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn lo_and_rig_and_trajectory_round_trip() {
        let dir = temp_dir("misc_rt");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sigma = SVector::<f64, 6>::from_row_slice(&[0.01, 0.01, 0.01, 0.05, 0.05, 0.05]);
        let lo: Vec<LoPoseMeasurement> = (0..50)
            .map(|i| LoPoseMeasurement {
                t_ns: (i as i64 + 1) * 100_000_000,
                world_from_imu: RigidTransform::new(
                    exp_rot(&Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )),
                    Vector3::new(
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-5.0..5.0),
                    ),
                ),
                sigma,
            })
            .collect();
        let lo_path = dir.join("lo_pose.csv");
        write_lo_pose_csv(&lo_path, &lo).unwrap();
        let back = load_lo_pose_csv(&lo_path, sigma).unwrap();
        for (a, b) in lo.iter().zip(&back) {
            assert_eq!(a.t_ns, b.t_ns);
            assert_eq!(a.world_from_imu.translation, b.world_from_imu.translation);
            assert_eq!(
                a.world_from_imu.rotation.quaternion_wxyz(),
                b.world_from_imu.rotation.quaternion_wxyz()
            );
        }

        let rig = SensorRig {
            imu_from_radar: RigidTransform::new(
                exp_rot(&Vector3::new(0.0, 0.0, 0.1)),
                Vector3::new(0.5, 0.0, 0.2),
            ),
            imu_from_lidar: RigidTransform::new(
                exp_rot(&Vector3::new(0.01, -0.02, 0.03)),
                Vector3::new(-0.1, 0.05, 0.3),
            ),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        };
        let rig_path = dir.join("rig.json");
        write_rig_json(&rig_path, &rig).unwrap();
        let rig_back = load_rig_json(&rig_path).unwrap();
        assert_eq!(
            rig.imu_from_radar.translation,
            rig_back.imu_from_radar.translation
        );
        assert_eq!(
            rig.imu_from_radar.rotation.quaternion_wxyz(),
            rig_back.imu_from_radar.rotation.quaternion_wxyz()
        );
        assert_eq!(rig.gravity, rig_back.gravity);

        let truth: Vec<TrajectorySample> = (0..100)
            .map(|i| TrajectorySample {
                t_ns: (i as i64) * 2_500_000,
                state: NavState {
                    world_from_imu: RigidTransform::new(
                        exp_rot(&Vector3::new(0.0, 0.0, 0.01 * i as f64)),
                        Vector3::new(i as f64 * 0.03, -(i as f64) * 0.01, 0.0),
                    ),
                    velocity: Vector3::new(12.0, 0.1, -0.2),
                    bias_gyro: Vector3::new(1e-3, -2e-3, 3e-3),
                    bias_accel: Vector3::new(0.01, 0.02, -0.03),
                },
            })
            .collect();
        let tpath = dir.join("truth.csv");
        write_trajectory_csv(&tpath, &truth).unwrap();
        let tback = load_trajectory_csv(&tpath).unwrap();
        for (a, b) in truth.iter().zip(&tback) {
            assert_eq!(a.t_ns, b.t_ns);
            assert_eq!(
                a.state.world_from_imu.translation,
                b.state.world_from_imu.translation
            );
            assert_eq!(a.state.velocity, b.state.velocity);
            assert_eq!(a.state.bias_gyro, b.state.bias_gyro);
            assert_eq!(a.state.bias_accel, b.state.bias_accel);
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn merged_events_order_imu_first_on_ties() {
        let ds = Dataset {
            imu: vec![
                ImuMeasurement {
                    t_ns: 100,
                    angular_velocity: Vector3::zeros(),
                    specific_force: Vector3::zeros(),
                },
                ImuMeasurement {
                    t_ns: 200,
                    angular_velocity: Vector3::zeros(),
                    specific_force: Vector3::zeros(),
                },
            ],
            radar_doppler: vec![RadarDopplerMeasurement {
                t_ns: 100,
                bearing: Vector3::x(),
                radial_speed: 0.0,
                sigma: 0.1,
            }],
            radar_clouds: vec![],
            lo: vec![LoPoseMeasurement {
                t_ns: 150,
                world_from_imu: RigidTransform::identity(),
                sigma: SVector::<f64, 6>::repeat(0.1),
            }],
            rig: None,
        };
        let events = ds.merged_events();
        assert_eq!(
            events,
            vec![
                (100, Event::Imu(0)),
                (100, Event::RadarDoppler(0)),
                (150, Event::Lo(0)),
                (200, Event::Imu(1)),
            ]
        );
    }
}
