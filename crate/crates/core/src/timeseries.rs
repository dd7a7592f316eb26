//! Observation trajectories and their file formats.
//!
//! A [`TrajectoryBundle`] holds uniformly sampled observation sequences, each
//! labelled by the input (initial state or parameter vector) that produced it.
//! Timestamps are never stored: observation `k` of a trajectory sits at
//! `t_k = k * dt`.
//!
//! Two on-disk formats are supported:
//!
//! * CSV, one observation per row: `traj_id,k,input_0..,obs_0..`. The sampling
//!   step and dimensions are carried by `# key=value` comment lines before the
//!   header (`dt`, `n0`, `m`, and `meta.<key>`), or by a sidecar JSON file at
//!   `<path>.meta.json`. An optional `t` column after `k` is checked for
//!   uniform spacing.
//! * JSON: `{dt, n0, m, meta, trajectories: [{input, observations}]}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on time spacing and on `dt` agreement between trajectories.
const DT_TOLERANCE: f64 = 1e-9;

/// Absolute componentwise tolerance used to decide that two inputs are the same.
pub const INPUT_MATCH_TOLERANCE: f64 = 1e-9;

/// A point of the input space (initial states or parameters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidConfig("input point must have at least one coordinate".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite input coordinate in {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Componentwise match within `tol`.
    pub fn matches(&self, other: &InputPoint, tol: f64) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// One uniformly sampled observation sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    input: InputPoint,
    dt: f64,
    observations: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(input: InputPoint, dt: f64, observations: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        if observations.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "a trajectory needs at least 2 observations, got {}",
                observations.len()
            )));
        }
        let m = observations[0].len();
        if m == 0 {
            return Err(Error::InvalidConfig("observations must have at least one component".into()));
        }
        for (k, obs) in observations.iter().enumerate() {
            if obs.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: obs.len(),
                    context: format!("observation {k}"),
                });
            }
            if obs.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite value in observation {k}")));
            }
        }
        Ok(Self {
            input,
            dt,
            observations,
        })
    }

    pub fn input(&self) -> &InputPoint {
        &self.input
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations[0].len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// A set of trajectories sharing `dt`, observation dimension `m` and input dimension `n0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    trajectories: Vec<Trajectory>,
    dt: f64,
    m: usize,
    n0: usize,
    meta: BTreeMap<String, String>,
}

impl TrajectoryBundle {
    pub fn new(trajectories: Vec<Trajectory>, meta: BTreeMap<String, String>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Empty("bundle has no trajectories".into()))?;
        let (dt, m, n0) = (first.dt, first.obs_dim(), first.input.dim());
        for (i, traj) in trajectories.iter().enumerate() {
            if !dt_matches(traj.dt, dt) {
                return Err(Error::Inconsistent {
                    trajectory: i.to_string(),
                    what: format!("dt ({} vs {})", traj.dt, dt),
                });
            }
            if traj.obs_dim() != m {
                return Err(Error::Inconsistent {
                    trajectory: i.to_string(),
                    what: format!("observation dimension m ({} vs {})", traj.obs_dim(), m),
                });
            }
            if traj.input.dim() != n0 {
                return Err(Error::Inconsistent {
                    trajectory: i.to_string(),
                    what: format!("input dimension n0 ({} vs {})", traj.input.dim(), n0),
                });
            }
        }
        Ok(Self {
            trajectories,
            dt,
            m,
            n0,
            meta,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

fn dt_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= DT_TOLERANCE * a.abs().max(b.abs())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guess the format from the file extension (`.json` or anything else as CSV).
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn load_bundle(path: &Path, format: Format) -> Result<TrajectoryBundle> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Empty(format!("{} is empty", path.display())));
    }
    match format {
        Format::Csv => parse_csv(&text, &sidecar_path(path)),
        Format::Json => parse_json(&text),
    }
}

pub fn save_bundle(bundle: &TrajectoryBundle, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Csv => render_csv(bundle)?,
        Format::Json => render_json(bundle)?,
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sidecar metadata file consulted when a CSV lacks `# dt=` comment lines.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Debug, Default, Deserialize)]
struct Sidecar {
    dt: Option<f64>,
    n0: Option<usize>,
    m: Option<usize>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

struct CsvRow {
    k: i64,
    t: Option<f64>,
    input: Vec<f64>,
    obs: Vec<f64>,
    line: u64,
}

fn parse_csv(text: &str, sidecar: &Path) -> Result<TrajectoryBundle> {
    let mut dt: Option<f64> = None;
    let mut n0: Option<usize> = None;
    let mut m: Option<usize> = None;
    let mut meta = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        let Some((key, value)) = comment.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let lineno = idx as u64 + 1;
        let bad = |what: &str| Error::Parse {
            line: lineno,
            message: format!("cannot parse {what} from {value:?}"),
        };
        match key {
            "dt" => dt = Some(value.parse().map_err(|_| bad("dt"))?),
            "n0" => n0 = Some(value.parse().map_err(|_| bad("n0"))?),
            "m" => m = Some(value.parse().map_err(|_| bad("m"))?),
            _ => {
                if let Some(k) = key.strip_prefix("meta.") {
                    meta.insert(k.to_string(), value.to_string());
                }
            }
        }
    }

    if dt.is_none() && sidecar.exists() {
        let side_text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let side: Sidecar = serde_json::from_str(&side_text)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", sidecar.display())))?;
        dt = side.dt;
        n0 = n0.or(side.n0);
        m = m.or(side.m);
        for (k, v) in side.meta {
            meta.entry(k).or_insert(v);
        }
    }
    let dt = dt.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing `# dt=` comment line and no sidecar metadata".into(),
    })?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: e.position().map_or(1, |p| p.line()),
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 2 || names[0] != "traj_id" || names[1] != "k" {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with traj_id,k; found {names:?}"),
        });
    }
    let has_t = names.get(2) == Some(&"t");
    let first_data = if has_t { 3 } else { 2 };
    let n_inputs = names[first_data..].iter().take_while(|n| n.starts_with("input_")).count();
    let n_obs = names.len() - first_data - n_inputs;
    if n_inputs == 0 || n_obs == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "header needs at least one input_ and one obs_ column".into(),
        });
    }
    for (j, name) in names[first_data..first_data + n_inputs].iter().enumerate() {
        if *name != format!("input_{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column input_{j}, found {name}"),
            });
        }
    }
    for (j, name) in names[first_data + n_inputs..].iter().enumerate() {
        if *name != format!("obs_{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column obs_{j}, found {name}"),
            });
        }
    }
    if n0.is_some_and(|v| v != n_inputs) || m.is_some_and(|v| v != n_obs) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "declared n0={n0:?}, m={m:?} disagree with header ({n_inputs} inputs, {n_obs} observations)"
            ),
        });
    }

    let mut groups: BTreeMap<i64, Vec<CsvRow>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let field = |i: usize| -> Result<f64> {
            let raw = &record[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {}: cannot parse {raw:?} as a finite number", names[i]),
                })
        };
        let int = |i: usize| -> Result<i64> {
            record[i].parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: cannot parse {:?} as an integer", names[i], &record[i]),
            })
        };
        let id = int(0)?;
        let k = int(1)?;
        let t = if has_t { Some(field(2)?) } else { None };
        let input = (first_data..first_data + n_inputs).map(field).collect::<Result<Vec<_>>>()?;
        let obs = (first_data + n_inputs..names.len()).map(field).collect::<Result<Vec<_>>>()?;
        groups.entry(id).or_default().push(CsvRow { k, t, input, obs, line });
    }
    if groups.is_empty() {
        return Err(Error::Empty("CSV has a header but no observation rows".into()));
    }

    let mut trajectories = Vec::with_capacity(groups.len());
    for (id, mut rows) in groups {
        rows.sort_by_key(|r| r.k);
        for (expected, row) in rows.iter().enumerate() {
            if row.k != expected as i64 {
                return Err(Error::Parse {
                    line: row.line,
                    message: format!(
                        "trajectory {id}: time index {} where {expected} was expected (gaps and duplicates are not supported)",
                        row.k
                    ),
                });
            }
        }
        let input = rows[0].input.clone();
        if let Some(row) = rows.iter().find(|r| {
            r.input
                .iter()
                .zip(&input)
                .any(|(a, b)| (a - b).abs() > INPUT_MATCH_TOLERANCE)
        }) {
            return Err(Error::Inconsistent {
                trajectory: id.to_string(),
                what: format!("input values (line {})", row.line),
            });
        }
        let mut traj_dt = dt;
        if has_t && rows.len() >= 2 {
            let t0 = rows[0].t.unwrap_or(0.0);
            let step = rows[1].t.unwrap_or(0.0) - t0;
            for (k, row) in rows.iter().enumerate() {
                let expected = t0 + k as f64 * step;
                if !(step > 0.0) || (row.t.unwrap_or(0.0) - expected).abs() > DT_TOLERANCE * step {
                    return Err(Error::Inconsistent {
                        trajectory: id.to_string(),
                        what: format!("time spacing (nonuniform at line {})", row.line),
                    });
                }
            }
            traj_dt = step;
        }
        if !dt_matches(traj_dt, dt) || trajectories.iter().any(|t: &Trajectory| !dt_matches(t.dt, traj_dt)) {
            return Err(Error::Inconsistent {
                trajectory: id.to_string(),
                what: format!("dt ({traj_dt} vs {dt})"),
            });
        }
        let observations: Vec<Vec<f64>> = rows.into_iter().map(|r| r.obs).collect();
        let traj = Trajectory::new(InputPoint::new(input)?, traj_dt, observations).map_err(|e| {
            Error::Inconsistent {
                trajectory: id.to_string(),
                what: e.to_string(),
            }
        })?;
        trajectories.push(traj);
    }
    TrajectoryBundle::new(trajectories, meta)
}

fn render_csv(bundle: &TrajectoryBundle) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let io = |e: std::io::Error| Error::io("<csv buffer>", e);
    writeln!(out, "# dt={}", bundle.dt).map_err(io)?;
    writeln!(out, "# n0={}", bundle.n0).map_err(io)?;
    writeln!(out, "# m={}", bundle.m).map_err(io)?;
    for (k, v) in &bundle.meta {
        writeln!(out, "# meta.{}={}", k.replace(['=', '\n'], "_"), v.replace('\n', " ")).map_err(io)?;
    }
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["traj_id".to_string(), "k".to_string()];
    header.extend((0..bundle.n0).map(|j| format!("input_{j}")));
    header.extend((0..bundle.m).map(|j| format!("obs_{j}")));
    writer.write_record(&header).map_err(csv_err)?;
    for (id, traj) in bundle.trajectories.iter().enumerate() {
        for (k, obs) in traj.observations.iter().enumerate() {
            let mut row = vec![id.to_string(), k.to_string()];
            row.extend(traj.input.coords().iter().map(|v| v.to_string()));
            row.extend(obs.iter().map(|v| v.to_string()));
            writer.write_record(&row).map_err(csv_err)?;
        }
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Corrupt(format!("csv writer: {e}"))
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    dt: f64,
    n0: usize,
    m: usize,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    trajectories: Vec<TrajectoryFile>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    input: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    observations: Vec<Vec<f64>>,
}

fn parse_json(text: &str) -> Result<TrajectoryBundle> {
    let file: BundleFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if file.trajectories.is_empty() {
        return Err(Error::Empty("JSON bundle has no trajectories".into()));
    }
    let mut trajectories = Vec::with_capacity(file.trajectories.len());
    for (i, t) in file.trajectories.into_iter().enumerate() {
        let dt = t.dt.unwrap_or(file.dt);
        if !dt_matches(dt, file.dt) {
            return Err(Error::Inconsistent {
                trajectory: i.to_string(),
                what: format!("dt ({dt} vs {})", file.dt),
            });
        }
        if t.input.len() != file.n0 {
            return Err(Error::Inconsistent {
                trajectory: i.to_string(),
                what: format!("input dimension ({} vs n0={})", t.input.len(), file.n0),
            });
        }
        if let Some(obs) = t.observations.iter().find(|o| o.len() != file.m) {
            return Err(Error::Inconsistent {
                trajectory: i.to_string(),
                what: format!("observation dimension ({} vs m={})", obs.len(), file.m),
            });
        }
        let traj = Trajectory::new(InputPoint::new(t.input)?, dt, t.observations).map_err(|e| {
            Error::Inconsistent {
                trajectory: i.to_string(),
                what: e.to_string(),
            }
        })?;
        trajectories.push(traj);
    }
    TrajectoryBundle::new(trajectories, file.meta)
}

fn render_json(bundle: &TrajectoryBundle) -> Result<Vec<u8>> {
    let file = BundleFile {
        dt: bundle.dt,
        n0: bundle.n0,
        m: bundle.m,
        meta: bundle.meta.clone(),
        trajectories: bundle
            .trajectories
            .iter()
            .map(|t| TrajectoryFile {
                input: t.input.coords().to_vec(),
                dt: None,
                observations: t.observations.clone(),
            })
            .collect(),
    };
    serde_json::to_vec(&file).map_err(|e| Error::Corrupt(e.to_string()))
}

/// SHA-256 of the bundle's JSON rendering as lowercase hex; identifies training data.
pub fn content_hash(bundle: &TrajectoryBundle) -> Result<String> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(render_json(bundle)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Collapse repeated runs that share an input into their mean trajectory.
///
/// Groups are formed by componentwise input matching within
/// [`INPUT_MATCH_TOLERANCE`] and appear in order of first occurrence.
pub fn average_runs(bundle: &TrajectoryBundle) -> Result<TrajectoryBundle> {
    let mut groups: Vec<Vec<&Trajectory>> = Vec::new();
    for traj in &bundle.trajectories {
        match groups
            .iter_mut()
            .find(|g| g[0].input.matches(&traj.input, INPUT_MATCH_TOLERANCE))
        {
            Some(group) => group.push(traj),
            None => groups.push(vec![traj]),
        }
    }

    let mut averaged = Vec::with_capacity(groups.len());
    for (gi, group) in groups.iter().enumerate() {
        let len = group[0].len();
        if group.iter().any(|t| t.len() != len) {
            return Err(Error::UnequalGroup {
                group: gi,
                lengths: group.iter().map(|t| t.len()).collect(),
            });
        }
        let count = group.len() as f64;
        let observations = (0..len)
            .map(|k| {
                let mut sum = vec![0.0; bundle.m];
                for traj in group {
                    for (s, v) in sum.iter_mut().zip(&traj.observations[k]) {
                        *s += v;
                    }
                }
                sum.into_iter().map(|s| s / count).collect()
            })
            .collect();
        averaged.push(Trajectory::new(group[0].input.clone(), bundle.dt, observations)?);
    }
    let mut meta = bundle.meta.clone();
    meta.insert("averaged_runs".into(), bundle.len().to_string());
    TrajectoryBundle::new(averaged, meta)
}
