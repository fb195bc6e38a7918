//! Trajectory CSV files, their metadata and design reports.
//!
//! A trajectory file has one row per time step with columns
//! `k, u_*, x_*, zeta_*, w_*, y_*, d_*, xdot_*` (absent channels omitted).
//! When a state-like channel (`x`, `zeta`, `w`) is present the file has one
//! more row than there are inputs and the per-step columns of the last row
//! are empty. Numbers are written with 17 significant digits so that reading
//! a file back reproduces the exact values.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::config::Config;
use crate::design::DesignReport;
use crate::error::{dims, Error, Result};
use crate::lti_sim::Trajectory;

pub const REPORT_SCHEMA: &str = "ddctl-report-1";

/// Serialize a matrix as a list of rows.
pub fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in crate::linalg::to_rows(m) {
        seq.serialize_element(&row)?;
    }
    seq.end()
}

pub fn serialize_opt_rows<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match m {
        Some(m) => serialize_rows(m, s),
        None => s.serialize_none(),
    }
}

/// Contents of the JSON file written next to a trajectory CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryMeta {
    pub n: Option<usize>,
    pub m: usize,
    pub p: Option<usize>,
    pub sample_period: f64,
    pub seed: Option<u64>,
    pub start: i64,
    pub steps: usize,
    pub bench: Option<String>,
    pub amplitude: Option<f64>,
    pub noise_amplitude: Option<f64>,
}

impl TrajectoryMeta {
    pub fn of(traj: &Trajectory) -> Self {
        Self {
            n: traj.n(),
            m: traj.m(),
            p: traj.p(),
            sample_period: traj.sample_period,
            seed: traj.seed,
            start: traj.start,
            steps: traj.steps(),
            ..Self::default()
        }
    }
}

/// `data.csv` → `data.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Channel<'a> {
    prefix: &'static str,
    data: &'a [DVector<f64>],
}

fn channels(traj: &Trajectory) -> Vec<Channel<'_>> {
    let mut out = vec![Channel {
        prefix: "u",
        data: &traj.inputs,
    }];
    let optional = [
        ("x", &traj.states),
        ("zeta", &traj.measured),
        ("w", &traj.noise),
        ("y", &traj.outputs),
        ("d", &traj.remainder),
        ("xdot", &traj.derivatives),
    ];
    for (prefix, chan) in optional {
        if let Some(data) = chan {
            out.push(Channel { prefix, data });
        }
    }
    out
}

/// Write the trajectory CSV and its metadata file.
pub fn write_trajectory(path: &Path, traj: &Trajectory, meta: &TrajectoryMeta) -> Result<()> {
    traj.validate()?;
    let chans = channels(traj);
    let mut header = vec!["k".to_string()];
    for c in &chans {
        let dim = c.data.first().map_or(0, |v| v.len());
        header.extend((1..=dim).map(|i| format!("{}_{i}", c.prefix)));
    }
    let rows = chans.iter().map(|c| c.data.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for r in 0..rows {
        let mut rec = vec![(traj.start + r as i64).to_string()];
        for c in &chans {
            let dim = c.data.first().map_or(0, |v| v.len());
            match c.data.get(r) {
                Some(v) => rec.extend(v.iter().map(|&x| fmt_f64(x))),
                None => rec.extend(std::iter::repeat(String::new()).take(dim)),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&meta_path(path), meta)
}

/// Read a trajectory CSV and its metadata file (the metadata is optional).
pub fn read_trajectory(path: &Path) -> Result<(Trajectory, Option<TrajectoryMeta>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("k") {
        return Err(Error::InvalidArgument(format!(
            "{}: first column must be `k`",
            path.display()
        )));
    }
    let mut prefixes: Vec<(String, Vec<usize>)> = Vec::new();
    for (col, name) in header.iter().enumerate().skip(1) {
        let (prefix, idx) = name
            .rsplit_once('_')
            .ok_or_else(|| Error::InvalidArgument(format!("unrecognized column `{name}`")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("unrecognized column `{name}`")))?;
        match prefixes.iter_mut().find(|(p, _)| p == prefix) {
            Some((_, cols)) if cols.len() + 1 == idx => cols.push(col),
            Some(_) => return Err(Error::InvalidArgument(format!("column `{name}` out of order"))),
            None if idx == 1 => prefixes.push((prefix.to_string(), vec![col])),
            None => return Err(Error::InvalidArgument(format!("column `{name}` out of order"))),
        }
    }
    let mut data: Vec<Vec<DVector<f64>>> = vec![Vec::new(); prefixes.len()];
    let mut start = None;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let k: i64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad time index `{}`", &rec[0])))?;
        let first = *start.get_or_insert(k);
        if k != first + row as i64 {
            return Err(Error::InvalidArgument(format!("time index {k} is not consecutive")));
        }
        for ((_, cols), out) in prefixes.iter().zip(data.iter_mut()) {
            let cells: Vec<&str> = cols.iter().map(|&c| rec[c].trim()).collect();
            if cells.iter().all(|c| c.is_empty()) {
                continue;
            }
            if out.len() != row {
                return Err(Error::InvalidArgument(format!("gap in channel at k = {k}")));
            }
            let v = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number `{c}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            out.push(DVector::from_vec(v));
        }
    }
    let mut traj = Trajectory {
        start: start.unwrap_or(0),
        ..Trajectory::default()
    };
    for ((prefix, _), chan) in prefixes.into_iter().zip(data) {
        match prefix.as_str() {
            "u" => traj.inputs = chan,
            "x" => traj.states = Some(chan),
            "zeta" => traj.measured = Some(chan),
            "w" => traj.noise = Some(chan),
            "y" => traj.outputs = Some(chan),
            "d" => traj.remainder = Some(chan),
            "xdot" => traj.derivatives = Some(chan),
            other => return Err(Error::InvalidArgument(format!("unknown channel `{other}`"))),
        }
    }
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        let meta: TrajectoryMeta = serde_json::from_str(&std::fs::read_to_string(&meta_file)?)?;
        traj.sample_period = meta.sample_period;
        traj.seed = meta.seed;
        if meta.start != traj.start || meta.steps != traj.steps() {
            return Err(dims(
                "trajectory metadata",
                format!("{} steps from {}", meta.steps, meta.start),
                traj.steps(),
            ));
        }
        Some(meta)
    } else {
        None
    };
    traj.validate()?;
    Ok((traj, meta))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Versioned design report as written to disk.
#[derive(Debug, Clone, Serialize)]
pub struct ReportFile<'a> {
    pub schema: &'static str,
    pub version: &'static str,
    /// Seconds since the Unix epoch; the only field that varies between identical runs.
    pub timestamp: u64,
    pub input: Option<String>,
    pub config: &'a Config,
    pub report: &'a DesignReport,
    /// Method-specific extras (oracle gaps, controller realization, ...).
    pub extra: serde_json::Value,
}

impl<'a> ReportFile<'a> {
    pub fn new(config: &'a Config, report: &'a DesignReport) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            schema: REPORT_SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            timestamp,
            input: None,
            config,
            report,
            extra: serde_json::Value::Null,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti_sim::{batch_reactor, simulate_noisy, uniform_sequence};
    use rand::SeedableRng;

    fn noisy_trajectory() -> Trajectory {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u = uniform_sequence(&mut rng, 2, 15, 1.0);
        let x0 = DVector::from_vec(vec![0.1, -0.2, 0.3, 1.0 / 3.0]);
        simulate_noisy(&batch_reactor(), &x0, &u, 0.01, 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let traj = noisy_trajectory();
        write_trajectory(&path, &traj, &TrajectoryMeta::of(&traj)).unwrap();
        let (back, meta) = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
        assert_eq!(meta.unwrap().n, Some(4));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 16);
        assert!(text.starts_with("k,u_1,u_2,x_1,x_2,x_3,x_4,zeta_1"));
    }

    #[test]
    fn negative_start_is_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("io.csv");
        let traj = Trajectory {
            start: -2,
            inputs: (0..4).map(|i| DVector::from_element(1, i as f64)).collect(),
            outputs: Some((0..4).map(|i| DVector::from_element(1, -(i as f64) / 7.0)).collect()),
            ..Trajectory::default()
        };
        write_trajectory(&path, &traj, &TrajectoryMeta::of(&traj)).unwrap();
        let (back, _) = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
        let ks: Vec<String> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect();
        assert_eq!(ks, ["-2", "-1", "0", "1"]);
    }

    #[test]
    fn malformed_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "k,u_2\n0,1\n").unwrap();
        assert!(read_trajectory(&path).is_err());
        std::fs::write(&path, "t,u_1\n0,1\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn meta_path_is_a_sibling() {
        assert_eq!(
            meta_path(Path::new("/a/b/run.csv")),
            PathBuf::from("/a/b/run.meta.json")
        );
    }
}
