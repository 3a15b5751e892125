//! Persistence: CSV tables, experiment reports, sample dumps, run manifests
//! and the flat `key=value` configuration format.
//!
//! Reals are written with 17 significant digits so every `f64` survives a
//! round trip. Files use `\n` line endings and `.` as the decimal mark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentReport, Table, REPORT_SCHEMA_VERSION};
use crate::greens::{GreenTable, CONVENTION_TAG};
use crate::samplers::{ChainDiagnostics, FieldSample, LawTag};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const SAMPLE_MANIFEST_SCHEMA_VERSION: u32 = 1;

/// `x` with 17 significant digits in scientific notation.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// CSV with `# key=value` comment lines before the header.
pub fn csv_records(
    comments: &[(String, String)],
    columns: &[String],
    rows: &[Vec<String>],
) -> String {
    let mut out = String::new();
    for (k, v) in comments {
        let _ = writeln!(out, "# {k}={v}");
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    out.push_str(std::str::from_utf8(&bytes).expect("utf-8 fields"));
    out
}

/// A report table as CSV.
pub fn table_csv(table: &Table) -> String {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(|&v| format_real(v)).collect())
        .collect();
    csv_records(&[], &table.columns, &rows)
}

/// `G(0, dx)` over the canonical box, columns `dx_1..dx_d,value`. The header
/// records the kernel kind, side, dimension, mass, convention and the sum
/// of the exported values.
pub fn kernel_csv(table: &GreenTable, side: usize) -> Result<String> {
    let entries = table.kernel_box(side)?;
    let n = table.lattice().map_or(side, |l| l.side());
    let d = table.dim();
    let sum = crate::numeric::compensated_sum(entries.iter().map(|e| e.1));
    let comments = vec![
        ("kind".to_string(), table.kind().label().to_string()),
        ("n".into(), n.to_string()),
        ("d".into(), d.to_string()),
        ("m2".into(), format_real(table.kind().mass2())),
        ("convention".into(), CONVENTION_TAG.into()),
        ("row_sum".into(), format_real(sum)),
    ];
    let mut columns: Vec<String> = (1..=d).map(|k| format!("dx_{k}")).collect();
    columns.push("value".into());
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|(dx, v)| {
            let mut r: Vec<String> = dx.iter().map(|c| c.to_string()).collect();
            r.push(format_real(*v));
            r
        })
        .collect();
    Ok(csv_records(&comments, &columns, &rows))
}

/// Samples as long-format CSV: `sample,site,component,value`.
pub fn samples_csv(samples: &[FieldSample]) -> String {
    let columns: Vec<String> = ["sample", "site", "component", "value"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for (k, v) in s.values.iter().enumerate() {
            rows.push(vec![
                i.to_string(),
                (k / s.components).to_string(),
                (k % s.components).to_string(),
                format_real(*v),
            ]);
        }
    }
    csv_records(&[], &columns, &rows)
}

/// Description of a sample dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub schema_version: u32,
    pub law_tag: LawTag,
    pub params: BTreeMap<String, Value>,
    pub seed: u64,
    pub sweeps: u64,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl SampleManifest {
    pub fn new(law_tag: LawTag, params: BTreeMap<String, Value>, seed: u64, sweeps: u64) -> Self {
        Self {
            schema_version: SAMPLE_MANIFEST_SCHEMA_VERSION,
            law_tag,
            params,
            seed,
            sweeps,
            diagnostics: Vec::new(),
        }
    }
}

/// Output format of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Text,
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

fn opt_real(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_default()
}

/// Gated and recorded rows as CSV.
pub fn report_rows_csv(report: &ExperimentReport) -> String {
    let columns: Vec<String> = [
        "observable",
        "estimate",
        "std_error",
        "reference",
        "source",
        "gate",
        "verdict",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.observable.clone(),
                format_real(r.estimate),
                opt_real(r.std_error),
                opt_real(r.reference),
                r.source.label().into(),
                r.gate.describe(),
                r.verdict.label().into(),
            ]
        })
        .collect();
    let comments = vec![
        ("experiment".to_string(), report.id.clone()),
        ("status".into(), report.status().label().into()),
    ];
    csv_records(&comments, &columns, &rows)
}

/// Human-readable report with aligned columns.
pub fn report_text(report: &ExperimentReport) -> String {
    let short = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
    let header = [
        "observable",
        "estimate",
        "std_error",
        "reference",
        "source",
        "gate",
        "verdict",
    ];
    let cells: Vec<[String; 7]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.observable.clone(),
                short(Some(r.estimate)),
                short(r.std_error),
                short(r.reference),
                r.source.label().into(),
                r.gate.describe(),
                r.verdict.label().into(),
            ]
        })
        .collect();
    let mut width = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in row.iter().zip(width).enumerate() {
            let pad = w - c.chars().count();
            // text left-aligned, numbers right-aligned
            if (1..=3).contains(&i) {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            } else {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
            s.push_str("  ");
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}: {}", report.id, report.title);
    let _ = writeln!(out, "status: {}", report.status().label());
    for (k, v) in &report.params {
        let _ = writeln!(out, "  {k} = {v}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", line(&header.map(String::from)));
    for row in &cells {
        let _ = writeln!(out, "{}", line(row));
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

/// Files making up a report in `format`: the main file named after the
/// experiment and one CSV per table.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Vec<(String, String)> {
    let main = match format {
        ReportFormat::Json => (format!("{}.json", report.id), report_json(report)),
        ReportFormat::Text => (format!("{}.txt", report.id), report_text(report)),
        ReportFormat::Csv => (format!("{}.csv", report.id), report_rows_csv(report)),
    };
    let mut files = vec![main];
    for t in &report.tables {
        files.push((format!("{}.{}.csv", report.id, t.name), table_csv(t)));
    }
    files
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes a report into `dir`, returning the paths written.
pub fn write_report(
    dir: &Path,
    report: &ExperimentReport,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    render_report(report, format)
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            write_file(&p, body.as_bytes())?;
            Ok(p)
        })
        .collect()
}

/// Byte offset of a 1-based `(line, column)` position in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parses schema-versioned JSON. Syntax errors name the byte offset; a
/// `schema_version` other than `supported` is rejected before decoding.
pub fn parse_versioned<T: DeserializeOwned>(text: &str, path: &Path, supported: u32) -> Result<T> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.into(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            offset: 0,
            message: "missing integer field schema_version".into(),
        })?;
    if found != u64::from(supported) {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.into(),
        offset: 0,
        message: e.to_string(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    parse_versioned(&read_text(path)?, path, REPORT_SCHEMA_VERSION)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl OutputDigest {
    pub fn of(path: &Path, contents: &[u8]) -> Self {
        Self {
            path: path.to_string_lossy().into_owned(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub command_line: Vec<String>,
    pub config: BTreeMap<String, Value>,
    pub seed: u64,
    /// Seeds of the named random streams derived from `seed`.
    pub streams: BTreeMap<String, u64>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>, seed: u64, started: String) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: "torusgff".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command_line,
            config: BTreeMap::new(),
            seed,
            streams: BTreeMap::new(),
            started: started.clone(),
            finished: started,
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifests serialize");
        s.push('\n');
        s
    }

    /// SHA-256 of the serialized manifest.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_file(path, manifest.to_json().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    parse_versioned(&read_text(path)?, path, MANIFEST_SCHEMA_VERSION)
}

pub fn read_sample_manifest(path: &Path) -> Result<SampleManifest> {
    parse_versioned(&read_text(path)?, path, SAMPLE_MANIFEST_SCHEMA_VERSION)
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys outside `allowed` and repeated keys are errors.
pub fn parse_config(text: &str, path: &Path, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim();
        let here = offset;
        offset += raw.len();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.into(),
            offset: here,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(err(format!(
                "unknown key '{key}' (known: {})",
                allowed.join(", ")
            )));
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(err(format!("key '{key}' given twice")));
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    parse_config(&read_text(path)?, path, allowed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{Gate, ReportRow, Source};
    use crate::greens::zero_average_green;
    use crate::lattice::TorusLattice;

    fn report() -> ExperimentReport {
        let mut r = ExperimentReport::new("exp_test", "a test");
        r.param("side", 8);
        r.push(ReportRow::gated(
            "x",
            0.1,
            Some(0.01),
            0.1,
            Source::Exact,
            Gate::Sigma { k: 4.0 },
        ));
        r.push(ReportRow::recorded(
            "y",
            1.0 / 3.0,
            None,
            None,
            Source::None,
        ));
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![1.0, std::f64::consts::PI]);
        r.tables.push(t);
        r
    }

    #[test]
    fn reals_round_trip() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02e23,
            f64::MIN_POSITIVE,
            0.0,
            -0.0,
        ] {
            let s = format_real(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert!(format_real(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(
            format_real(f64::NEG_INFINITY).parse::<f64>().unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn kernel_csv_layout() {
        let l = TorusLattice::new(3, 4).unwrap();
        let csv = kernel_csv(&zero_average_green(&l).unwrap(), 0).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# kind=zero-avg");
        assert!(lines.iter().any(|l| l.starts_with("# convention=")));
        let header = lines.iter().position(|l| !l.starts_with('#')).unwrap();
        assert_eq!(lines[header], "dx_1,dx_2,dx_3,value");
        assert_eq!(lines.len() - header - 1, 64);
        assert!(!csv.contains('\r'));
        let sum: f64 = lines[header + 1..]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!(sum.abs() < 1e-10);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let paths = write_report(dir.path(), &r, ReportFormat::Json).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(read_report(&paths[0]).unwrap(), r);
        let text = report_text(&r);
        assert!(text.contains("status: pass"));
        let csv = report_rows_csv(&r);
        assert!(csv
            .lines()
            .any(|l| l.starts_with("x,1.0000000000000001e-1")));
    }

    #[test]
    fn corrupted_json_names_the_offset() {
        let text = report_json(&report());
        let broken = text.replacen("\"id\":", "\"id\" ", 1);
        let at = broken.find("\"id\" ").unwrap();
        match parse_versioned::<ExperimentReport>(
            &broken,
            Path::new("r.json"),
            REPORT_SCHEMA_VERSION,
        ) {
            Err(Error::Parse { offset, .. }) => {
                assert!(offset >= at && offset <= at + 8, "{offset} vs {at}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_bump_is_unsupported() {
        let mut m = RunManifest::new(vec!["torusgff".into()], 7, "2026-01-01T00:00:00Z".into());
        m.schema_version = MANIFEST_SCHEMA_VERSION + 1;
        let err = parse_versioned::<RunManifest>(
            &m.to_json(),
            Path::new("m.json"),
            MANIFEST_SCHEMA_VERSION,
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("unsupported schema version 2"),
            "{err}"
        );
    }

    #[test]
    fn manifest_digest_survives_reserialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(
            vec!["torusgff".into(), "mass".into()],
            7,
            "2026-01-01T00:00:00Z".into(),
        );
        m.config.insert("beta".into(), Value::from(0.5));
        m.streams.insert("chain-0".into(), 99);
        m.outputs.push(OutputDigest::of(Path::new("a.csv"), b"x\n"));
        let p = dir.path().join("manifest.json");
        write_manifest(&p, &m).unwrap();
        let back = read_manifest(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let allowed = ["dim", "beta"];
        let ok = parse_config("# c\ndim = 3\n\nbeta=0.5\n", Path::new("c"), &allowed).unwrap();
        assert_eq!(ok["dim"], "3");
        assert_eq!(ok["beta"], "0.5");
        match parse_config("dim=3\nbeat=0.5\n", Path::new("c"), &allowed) {
            Err(Error::Parse {
                offset, message, ..
            }) => {
                assert_eq!(offset, 6);
                assert!(message.contains("beat"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config("dim=3\ndim=4\n", Path::new("c"), &allowed).is_err());
        assert!(parse_config("dim\n", Path::new("c"), &allowed).is_err());
    }

    #[test]
    fn missing_files_carry_the_path() {
        let err = read_manifest(Path::new("/nonexistent/m.json")).unwrap_err();
        assert!(err.to_string().starts_with("/nonexistent/m.json"));
    }
}
