use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_lab::AlignmentReport;

use super::config::ExperimentKind;

pub const SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 23] = [
    "experiment",
    "kind",
    "d",
    "n_t",
    "n_s",
    "gamma_t",
    "gamma_s",
    "sigma_eps",
    "lambda_t",
    "lambda_s",
    "zeta",
    "tau",
    "eta_t",
    "eta_s",
    "trials",
    "loss_teacher_emp_mean",
    "loss_teacher_emp_std",
    "loss_student_emp_mean",
    "loss_student_emp_std",
    "loss_teacher_theory",
    "loss_student_theory",
    "gap_theory",
    "domain_error",
];

/// One grid point: simulation summary, per-trial losses and the theory join.
///
/// `trials` is 0 for theory-only kinds; the per-trial vectors are kept in
/// JSON output only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub d: Option<usize>,
    pub n_t: Option<usize>,
    pub n_s: Option<usize>,
    pub gamma_t: f64,
    pub gamma_s: f64,
    pub sigma_eps: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub zeta: Option<f64>,
    pub tau: Option<f64>,
    pub eta_t: Option<f64>,
    pub eta_s: Option<f64>,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_teacher_trials: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_student_trials: Vec<f64>,
    pub loss_teacher_emp_mean: Option<f64>,
    pub loss_teacher_emp_std: Option<f64>,
    pub loss_student_emp_mean: Option<f64>,
    pub loss_student_emp_std: Option<f64>,
    pub loss_teacher_theory: Option<f64>,
    pub loss_student_theory: Option<f64>,
    pub gap_theory: Option<f64>,
    pub domain_error: Option<String>,
}

impl ResultRecord {
    pub fn gap_emp_mean(&self) -> Option<f64> {
        Some(self.loss_student_emp_mean? - self.loss_teacher_emp_mean?)
    }
}

/// Alignments of one seeded feature-transfer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub experiment: String,
    pub trial: usize,
    pub seed: u64,
    pub teacher: AlignmentReport,
    pub student: AlignmentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub base_seed: u64,
    pub code_version: String,
    /// `name/vN` for presets, the config name otherwise.
    pub preset: String,
    #[serde(default)]
    pub grid_ranges_inferred: bool,
}

impl Manifest {
    pub fn new(base_seed: u64, preset: impl Into<String>, grid_ranges_inferred: bool) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            base_seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            preset: preset.into(),
            grid_ranges_inferred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub manifest: Manifest,
    #[serde(default)]
    pub records: Vec<ResultRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_records: Vec<FeatureRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultFormat {
    Csv,
    Json,
}

impl ResultFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ResultFormat::Csv),
            "json" => Some(ResultFormat::Json),
            _ => None,
        }
    }
}

/// Mean, sample standard deviation (`n−1`; 0 for a single value) and
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn moments(values: &[f64]) -> Option<Moments> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Moments {
        mean,
        std,
        stderr: std / n.sqrt(),
        count: values.len(),
    })
}

/// One row of [`aggregate`]: all trials at one coordinate pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub gamma_t: f64,
    pub gamma_s: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub zeta: Option<f64>,
    pub teacher: Option<Moments>,
    pub student: Option<Moments>,
    /// Paired per-trial `𝓛_s − 𝓛_t`.
    pub gap: Option<Moments>,
    pub gap_theory: Option<f64>,
}

type CoordKey = (String, u64, u64, u64, u64, Option<u64>);

fn coord_key(r: &ResultRecord) -> CoordKey {
    (
        r.experiment.clone(),
        r.gamma_t.to_bits(),
        r.gamma_s.to_bits(),
        r.lambda_t.to_bits(),
        r.lambda_s.to_bits(),
        r.zeta.map(f64::to_bits),
    )
}

/// Pools per-trial losses of records sharing coordinates, in order of first
/// appearance. A record without per-trial losses contributes its mean as a
/// single trial.
pub fn aggregate(records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::domain("nothing to aggregate"));
    }
    let mut order: Vec<CoordKey> = Vec::new();
    let mut groups: BTreeMap<CoordKey, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = coord_key(r);
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (i, Vec::new(), Vec::new())
        });
        if r.loss_teacher_trials.is_empty() {
            entry.1.extend(r.loss_teacher_emp_mean);
        } else {
            entry.1.extend_from_slice(&r.loss_teacher_trials);
        }
        if r.loss_student_trials.is_empty() {
            entry.2.extend(r.loss_student_emp_mean);
        } else {
            entry.2.extend_from_slice(&r.loss_student_trials);
        }
    }
    Ok(order
        .iter()
        .map(|key| {
            let (first, teacher, student) = &groups[key];
            let r = &records[*first];
            let gaps: Vec<f64> = if teacher.len() == student.len() {
                student.iter().zip(teacher).map(|(s, t)| s - t).collect()
            } else {
                Vec::new()
            };
            SummaryRow {
                experiment: r.experiment.clone(),
                gamma_t: r.gamma_t,
                gamma_s: r.gamma_s,
                lambda_t: r.lambda_t,
                lambda_s: r.lambda_s,
                zeta: r.zeta,
                teacher: moments(teacher),
                student: moments(student),
                gap: moments(&gaps),
                gap_theory: r.gap_theory,
            }
        })
        .collect())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(r: &ResultRecord) -> Vec<String> {
    vec![
        r.experiment.clone(),
        r.kind.as_str().to_string(),
        fmt_opt_usize(r.d),
        fmt_opt_usize(r.n_t),
        fmt_opt_usize(r.n_s),
        fmt_f64(r.gamma_t),
        fmt_f64(r.gamma_s),
        fmt_f64(r.sigma_eps),
        fmt_f64(r.lambda_t),
        fmt_f64(r.lambda_s),
        fmt_opt_f64(r.zeta),
        fmt_opt_f64(r.tau),
        fmt_opt_f64(r.eta_t),
        fmt_opt_f64(r.eta_s),
        r.trials.to_string(),
        fmt_opt_f64(r.loss_teacher_emp_mean),
        fmt_opt_f64(r.loss_teacher_emp_std),
        fmt_opt_f64(r.loss_student_emp_mean),
        fmt_opt_f64(r.loss_student_emp_std),
        fmt_opt_f64(r.loss_teacher_theory),
        fmt_opt_f64(r.loss_student_theory),
        fmt_opt_f64(r.gap_theory),
        r.domain_error.clone().unwrap_or_default(),
    ]
}

/// CSV bytes for `records` with the fixed column order.
pub fn records_to_csv(records: &[ResultRecord]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS)?;
    for r in records {
        writer.write_record(csv_row(r))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn cell_err(line: u64, column: &str, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!("line {line}, column {column}: {msg}"))
}

fn parse_f64(line: u64, column: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| cell_err(line, column, format!("{s:?}: {e}")))
}

fn parse_opt_f64(line: u64, column: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(line, column, s).map(Some)
    }
}

fn parse_usize(line: u64, column: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|e| cell_err(line, column, format!("{s:?}: {e}")))
}

fn parse_opt_usize(line: u64, column: &str, s: &str) -> Result<Option<usize>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_usize(line, column, s).map(Some)
    }
}

/// Parses CSV written by [`records_to_csv`]; the header must match exactly.
pub fn records_from_csv(bytes: &[u8]) -> Result<Vec<ResultRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Schema(format!(
            "CSV header does not match schema version {SCHEMA_VERSION}: expected {}, found {}",
            CSV_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != CSV_COLUMNS.len() {
            return Err(cell_err(
                line,
                "*",
                format!("expected {} fields, found {}", CSV_COLUMNS.len(), row.len()),
            ));
        }
        let c = |i: usize| &row[i];
        let col = |i: usize| CSV_COLUMNS[i];
        out.push(ResultRecord {
            experiment: c(0).to_string(),
            kind: ExperimentKind::parse(c(1)).map_err(|e| cell_err(line, col(1), e))?,
            d: parse_opt_usize(line, col(2), c(2))?,
            n_t: parse_opt_usize(line, col(3), c(3))?,
            n_s: parse_opt_usize(line, col(4), c(4))?,
            gamma_t: parse_f64(line, col(5), c(5))?,
            gamma_s: parse_f64(line, col(6), c(6))?,
            sigma_eps: parse_f64(line, col(7), c(7))?,
            lambda_t: parse_f64(line, col(8), c(8))?,
            lambda_s: parse_f64(line, col(9), c(9))?,
            zeta: parse_opt_f64(line, col(10), c(10))?,
            tau: parse_opt_f64(line, col(11), c(11))?,
            eta_t: parse_opt_f64(line, col(12), c(12))?,
            eta_s: parse_opt_f64(line, col(13), c(13))?,
            trials: parse_usize(line, col(14), c(14))?,
            loss_teacher_trials: Vec::new(),
            loss_student_trials: Vec::new(),
            loss_teacher_emp_mean: parse_opt_f64(line, col(15), c(15))?,
            loss_teacher_emp_std: parse_opt_f64(line, col(16), c(16))?,
            loss_student_emp_mean: parse_opt_f64(line, col(17), c(17))?,
            loss_student_emp_std: parse_opt_f64(line, col(18), c(18))?,
            loss_teacher_theory: parse_opt_f64(line, col(19), c(19))?,
            loss_student_theory: parse_opt_f64(line, col(20), c(20))?,
            gap_theory: parse_opt_f64(line, col(21), c(21))?,
            domain_error: Some(c(22).to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

pub fn document_to_json(doc: &ResultsDocument) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn document_from_json(bytes: &[u8]) -> Result<ResultsDocument> {
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    let version = value
        .get("manifest")
        .and_then(|m| m.get("schema_version"))
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing manifest.schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::Schema(format!(
            "schema version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
}

/// Serialized bytes of a document in `format`. CSV holds linear records
/// only.
pub fn encode(doc: &ResultsDocument, format: ResultFormat) -> Result<Vec<u8>> {
    match format {
        ResultFormat::Json => document_to_json(doc),
        ResultFormat::Csv => {
            if !doc.feature_records.is_empty() {
                return Err(Error::Config(
                    "feature-transfer results have no CSV layout; use --format json".into(),
                ));
            }
            records_to_csv(&doc.records)
        }
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(Error::from)
}

pub fn write_results(doc: &ResultsDocument, path: &Path, format: ResultFormat) -> Result<()> {
    let bytes = encode(doc, format)?;
    write_atomic(path, &bytes)
}

/// Reads a results file; the format follows the extension, falling back to
/// sniffing for a leading `{`. CSV input yields a document with an empty
/// manifest seed and preset.
pub fn read_results(path: &Path) -> Result<ResultsDocument> {
    let bytes = fs::read(path)?;
    let format = ResultFormat::from_path(path).unwrap_or_else(|| {
        if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{') {
            ResultFormat::Json
        } else {
            ResultFormat::Csv
        }
    });
    match format {
        ResultFormat::Json => document_from_json(&bytes),
        ResultFormat::Csv => Ok(ResultsDocument {
            manifest: Manifest::new(0, "", false),
            records: records_from_csv(&bytes)?,
            feature_records: Vec::new(),
        }),
    }
}
