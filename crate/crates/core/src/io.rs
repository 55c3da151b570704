//! File formats: model and problem JSON, trajectory CSV, region JSON,
//! campaign configs and reports.
//!
//! JSON documents carry `"format_version": 1`; CSV files start with a
//! `# format=1` line. Every writer goes through a temp file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::Error;
use crate::lti::{StateSpaceModel, Trajectory};
use crate::montecarlo::{summarize, CampaignConfig, CampaignReport, Table};
use crate::predictors::{PredictionProblem, PredictionResult};
use crate::uncertainty::ConfidenceRegion;

pub const FORMAT_VERSION: u32 = 1;
const CSV_MARKER: &str = "# format=1";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Numeric(#[from] Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), msg: msg.into() }
}

/// Writes `bytes` to `path` via a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn read_text(path: &Path) -> IoResult<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}

fn check_version(path: &Path, v: u32) -> IoResult<()> {
    if v != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported format_version {v}")));
    }
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(path: &Path, name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> IoResult<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(format_err(path, format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct ModelDoc {
    format_version: u32,
    n_x: usize,
    n_u: usize,
    n_y: usize,
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    C: Vec<Vec<f64>>,
    D: Vec<Vec<f64>>,
}

pub fn model_to_json(model: &StateSpaceModel) -> String {
    to_json(&ModelDoc {
        format_version: FORMAT_VERSION,
        n_x: model.n_x(),
        n_u: model.n_u(),
        n_y: model.n_y(),
        A: rows_of(model.a()),
        B: rows_of(model.b()),
        C: rows_of(model.c()),
        D: rows_of(model.d()),
    })
}

pub fn model_from_json(path: &Path, text: &str) -> IoResult<StateSpaceModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    check_version(path, doc.format_version)?;
    let a = matrix_from_rows(path, "A", &doc.A, doc.n_x, doc.n_x)?;
    let b = matrix_from_rows(path, "B", &doc.B, doc.n_x, doc.n_u)?;
    let c = matrix_from_rows(path, "C", &doc.C, doc.n_y, doc.n_x)?;
    let d = matrix_from_rows(path, "D", &doc.D, doc.n_y, doc.n_u)?;
    Ok(StateSpaceModel::new(a, b, c, d)?)
}

pub fn read_model(path: &Path) -> IoResult<StateSpaceModel> {
    model_from_json(path, &read_text(path)?)
}

pub fn write_model(path: &Path, model: &StateSpaceModel) -> IoResult<()> {
    write_atomic(path, model_to_json(model).as_bytes())
}

/// CSV with columns `t,u1..,y1..`.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::from(CSV_MARKER);
    out.push('\n');
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.n_u()).map(|i| format!("u{i}")));
    header.extend((1..=traj.n_y()).map(|i| format!("y{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, (u, y)) in traj.inputs().iter().zip(traj.outputs()).enumerate() {
        let mut fields = vec![t.to_string()];
        fields.extend(u.iter().chain(y.iter()).map(|v| format!("{v:?}")));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn strip_marker<'a>(path: &Path, text: &'a str) -> IoResult<&'a str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != CSV_MARKER {
        return Err(format_err(path, format!("missing '{CSV_MARKER}' line")));
    }
    Ok(rest)
}

pub fn trajectory_from_csv(path: &Path, text: &str) -> IoResult<Trajectory> {
    let body = strip_marker(path, text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    let n_u = header.iter().filter(|h| h.starts_with('u')).count();
    let n_y = header.iter().filter(|h| h.starts_with('y')).count();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n_u).map(|i| format!("u{i}")))
        .chain((1..=n_y).map(|i| format!("y{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) || n_u == 0 || n_y == 0 {
        return Err(format_err(path, "header must be t,u1..,y1.."));
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("row {}: {e}", k + 1)))?;
        inputs.push(DVector::from_column_slice(&vals[..n_u]));
        outputs.push(DVector::from_column_slice(&vals[n_u..]));
    }
    Ok(Trajectory::new(inputs, outputs)?)
}

/// Input-only CSV with columns `t,u1..`.
pub fn inputs_from_csv(path: &Path, text: &str) -> IoResult<Vec<DVector<f64>>> {
    let body = strip_marker(path, text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    let n_u = header.len().saturating_sub(1);
    let expected = std::iter::once("t".to_string()).chain((1..=n_u).map(|i| format!("u{i}")));
    if n_u == 0 || header.iter().ne(expected.collect::<Vec<_>>().iter().map(String::as_str)) {
        return Err(format_err(path, "header must be t,u1.."));
    }
    let mut inputs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("row {}: {e}", k + 1)))?;
        inputs.push(DVector::from_vec(vals));
    }
    Ok(inputs)
}

pub fn read_inputs(path: &Path) -> IoResult<Vec<DVector<f64>>> {
    inputs_from_csv(path, &read_text(path)?)
}

pub fn read_trajectory(path: &Path) -> IoResult<Trajectory> {
    trajectory_from_csv(path, &read_text(path)?)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> IoResult<()> {
    write_atomic(path, trajectory_to_csv(traj).as_bytes())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    format_version: u32,
    u_ini: Vec<f64>,
    y_ini: Vec<f64>,
    u: Vec<f64>,
}

pub fn problem_to_json(prob: &PredictionProblem) -> String {
    to_json(&ProblemDoc {
        format_version: FORMAT_VERSION,
        u_ini: prob.u_ini.as_slice().to_vec(),
        y_ini: prob.y_ini.as_slice().to_vec(),
        u: prob.u.as_slice().to_vec(),
    })
}

pub fn problem_from_json(path: &Path, text: &str) -> IoResult<PredictionProblem> {
    let doc: ProblemDoc = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    check_version(path, doc.format_version)?;
    Ok(PredictionProblem::new(DVector::from_vec(doc.u_ini), DVector::from_vec(doc.y_ini), DVector::from_vec(doc.u)))
}

pub fn read_problem(path: &Path) -> IoResult<PredictionProblem> {
    problem_from_json(path, &read_text(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionDoc {
    format_version: u32,
    center: Vec<f64>,
    /// Row-major.
    sigma: Vec<Vec<f64>>,
    mu_p: f64,
    p: f64,
    dof: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary: Option<Vec<[f64; 2]>>,
}

impl RegionDoc {
    fn new(region: &ConfidenceRegion, boundary: Option<Vec<[f64; 2]>>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            center: region.center().as_slice().to_vec(),
            sigma: rows_of(region.sigma()),
            mu_p: region.mu_p(),
            p: region.p(),
            dof: region.dof(),
            boundary,
        }
    }

    fn into_region(self, path: &Path) -> IoResult<ConfidenceRegion> {
        check_version(path, self.format_version)?;
        let n = self.center.len();
        let sigma = matrix_from_rows(path, "sigma", &self.sigma, n, n)?;
        Ok(ConfidenceRegion::with_radius(DVector::from_vec(self.center), sigma, self.mu_p, self.p, self.dof)?)
    }
}

pub fn region_to_json(region: &ConfidenceRegion, boundary: Option<Vec<[f64; 2]>>) -> String {
    to_json(&RegionDoc::new(region, boundary))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionDoc {
    format_version: u32,
    predictor: String,
    lambda: f64,
    y: Vec<f64>,
    delta: Vec<f64>,
    g: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<RegionDoc>,
}

/// Prediction output, optionally with its region.
pub fn prediction_to_json(
    label: &str,
    result: &PredictionResult,
    region: Option<(&ConfidenceRegion, Option<Vec<[f64; 2]>>)>,
) -> String {
    to_json(&PredictionDoc {
        format_version: FORMAT_VERSION,
        predictor: label.to_string(),
        lambda: result.lambda,
        y: result.y.as_slice().to_vec(),
        delta: result.delta.as_slice().to_vec(),
        g: result.g.as_slice().to_vec(),
        region: region.map(|(r, b)| RegionDoc::new(r, b)),
    })
}

/// Reads a region document, or the region embedded in a prediction document.
pub fn region_from_json(path: &Path, text: &str) -> IoResult<ConfidenceRegion> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    let region_value = match value.get("region") {
        Some(r) => r.clone(),
        None if value.get("predictor").is_some() => {
            return Err(format_err(path, "prediction file has no region"));
        }
        None => value,
    };
    let doc: RegionDoc = serde_json::from_value(region_value).map_err(|e| format_err(path, e.to_string()))?;
    doc.into_region(path)
}

pub fn read_region(path: &Path) -> IoResult<ConfidenceRegion> {
    region_from_json(path, &read_text(path)?)
}

pub fn boundary_to_csv(points: &[[f64; 2]]) -> String {
    let mut out = format!("{CSV_MARKER}\nx1,x2\n");
    for [a, b] in points {
        out.push_str(&format!("{a:?},{b:?}\n"));
    }
    out
}

#[derive(Serialize)]
struct ConfigDoc<'a> {
    format_version: u32,
    #[serde(flatten)]
    config: &'a CampaignConfig,
}

pub fn campaign_config_from_json(path: &Path, text: &str) -> IoResult<CampaignConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| format_err(path, e.to_string()))?;
    let version = value
        .as_object_mut()
        .and_then(|o| o.remove("format_version"))
        .ok_or_else(|| format_err(path, "missing format_version"))?;
    let version =
        version.as_u64().and_then(|v| u32::try_from(v).ok()).ok_or_else(|| format_err(path, "bad format_version"))?;
    check_version(path, version)?;
    let cfg: CampaignConfig = serde_json::from_value(value).map_err(|e| format_err(path, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_campaign_config(path: &Path) -> IoResult<CampaignConfig> {
    campaign_config_from_json(path, &read_text(path)?)
}

pub fn config_to_json(cfg: &CampaignConfig) -> String {
    to_json(&ConfigDoc { format_version: FORMAT_VERSION, config: cfg })
}

/// Hash of `bytes` as `git hash-object` computes it.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn table_to_csv(table: &Table) -> String {
    let mut out = String::from(CSV_MARKER);
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header).expect("in-memory write");
    for row in &table.rows {
        let fields = row
            .labels
            .iter()
            .cloned()
            .chain(row.values.iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))));
        w.write_record(fields).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
    out
}

fn records_to_csv(report: &CampaignReport) -> String {
    let cfg = &report.config;
    let mut header =
        vec!["system".to_string(), "n_x".to_string(), "predictor".to_string(), "squared_error".to_string()];
    for s in &cfg.gamma_sources {
        for p in &cfg.p_levels {
            header.push(format!("in_{}_p{}", s.label(), p));
        }
    }
    for s in &cfg.gamma_sources {
        header.push(format!("est_mse_{}", s.label()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for rec in &report.records {
        for pr in &rec.predictors {
            let mut f = vec![
                rec.system_index.to_string(),
                rec.n_x.to_string(),
                pr.predictor.label().to_string(),
                format!("{:?}", pr.squared_error),
            ];
            for s in 0..cfg.gamma_sources.len() {
                for j in 0..cfg.p_levels.len() {
                    f.push(pr.contains.get(s).map_or("NA".into(), |row| u8::from(row[j]).to_string()));
                }
            }
            for s in 0..cfg.gamma_sources.len() {
                f.push(pr.estimated_mse.get(s).map_or("NA".into(), |v| format!("{v:?}")));
            }
            w.write_record(&f).expect("in-memory write");
        }
    }
    format!("{CSV_MARKER}\n{}", String::from_utf8(w.into_inner().expect("flush")).expect("utf8"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    seed: u64,
    config_hash: String,
    config: &'a CampaignConfig,
    files: Vec<String>,
}

/// Writes the three table CSVs, per-run records, the config and a manifest
/// into `dir`. Returns the written paths.
pub fn write_report(dir: &Path, report: &CampaignReport) -> IoResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tables = summarize(report);
    let mut files: Vec<(String, String)> =
        tables.tables().iter().map(|t| (format!("{}.csv", t.name), table_to_csv(t))).collect();
    files.push(("records.csv".into(), records_to_csv(report)));
    let config_json = config_to_json(&report.config);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: report.config.seed,
        config_hash: git_blob_hash(config_json.as_bytes()),
        config: &report.config,
        files: files.iter().map(|(n, _)| n.clone()).chain(["config.json".to_string()]).collect(),
    };
    files.push(("config.json".into(), config_json));
    files.push(("manifest.json".into(), to_json(&manifest)));
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_hash_matches_known_blob() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
        assert_eq!(git_blob_hash(br#"{"a": 1}"#), "4a036f56bb619924ec4189bd84ed716c766971ae");
    }

    #[test]
    fn campaign_config_round_trip() {
        let cfg = CampaignConfig::desk(0.1, 9);
        let p = Path::new("c.json");
        let text = config_to_json(&cfg);
        assert!(text.contains("\"format_version\": 1"));
        assert_eq!(campaign_config_from_json(p, &text).unwrap(), cfg);
        let bare = text.replacen("\"format_version\": 1,", "", 1);
        assert!(matches!(campaign_config_from_json(p, &bare), Err(IoError::Format { .. })));
        let extra = text.replacen("\"seed\"", "\"bogus\": 1, \"seed\"", 1);
        assert!(matches!(campaign_config_from_json(p, &extra), Err(IoError::Format { .. })));
    }

    #[test]
    fn model_round_trip_is_exact() {
        let m = StateSpaceModel::example_g1();
        let p = Path::new("m.json");
        let back = model_from_json(p, &model_to_json(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_rejects_bad_shape_and_version() {
        let p = Path::new("m.json");
        let good = model_to_json(&StateSpaceModel::scalar(0.5, 1.0, 1.0, 0.0).unwrap());
        assert!(model_from_json(p, &good.replace("\"n_x\": 1", "\"n_x\": 2")).is_err());
        assert!(matches!(
            model_from_json(p, &good.replace("\"format_version\": 1", "\"format_version\": 2")),
            Err(IoError::Format { .. })
        ));
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let u = [0.1, -1.0 / 3.0, 1e-300, 2.5];
        let y = [1.0, 0.2, -7.0e12, f64::MIN_POSITIVE];
        let t = Trajectory::siso(&u, &y).unwrap();
        let text = trajectory_to_csv(&t);
        assert!(text.starts_with("# format=1\nt,u1,y1\n"));
        assert_eq!(trajectory_from_csv(Path::new("t.csv"), &text).unwrap(), t);
    }

    #[test]
    fn trajectory_requires_marker_and_header() {
        let p = Path::new("t.csv");
        assert!(trajectory_from_csv(p, "t,u1,y1\n0,1,2\n").is_err());
        assert!(trajectory_from_csv(p, "# format=1\nt,a,b\n0,1,2\n").is_err());
        assert!(trajectory_from_csv(p, "# format=1\nt,u1,y1\n0,1,x\n").is_err());
    }

    #[test]
    fn region_round_trip_and_embedded_region() {
        let r = ConfidenceRegion::new(
            DVector::from_vec(vec![0.1, 0.2]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
            0.9,
            2,
        )
        .unwrap();
        let p = Path::new("r.json");
        assert_eq!(region_from_json(p, &region_to_json(&r, None)).unwrap(), r);
        let res = PredictionResult {
            y: DVector::from_vec(vec![0.1, 0.2]),
            g: DVector::zeros(3),
            delta: DVector::zeros(1),
            lambda: 0.5,
            q: None,
        };
        let doc = prediction_to_json("SMM", &res, Some((&r, None)));
        assert_eq!(region_from_json(p, &doc).unwrap(), r);
        assert!(region_from_json(p, &prediction_to_json("SMM", &res, None)).is_err());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
