use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde_json::{json, Value};
use torusgff_core::experiments::{
    experiment_ids, run_experiment, ExperimentConfig, ExperimentReport, Verdict,
};
use torusgff_core::greens::{
    dirichlet_green, massive_green, zd_green_table, zero_average_green, CONVENTION_TAG,
};
use torusgff_core::io::{
    csv_records, format_real, kernel_csv, render_report, samples_csv, write_file, write_manifest,
    OutputDigest, ReportFormat, RunManifest, SampleManifest,
};
use torusgff_core::mass::{low_t_diagnostic, solve_torus_mass, ModelParams, Regime};
use torusgff_core::samplers::{
    ChainDiagnostics, FieldSample, GffSampler, SphericalRun, SpinRun, SpinRunOptions,
};
use torusgff_core::spectral::SpectrumTable;
use torusgff_core::{Error, Result, TorusLattice};

use crate::settings::{Extra, Format, Global, Kind, Model};
use crate::Outcome;

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => format_real(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn real(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

/// A table in the requested format, with `meta` as CSV comments, a JSON
/// object or a text preamble.
fn render(
    format: Format,
    meta: &[(String, String)],
    columns: &[String],
    rows: &[Vec<Value>],
) -> String {
    match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> =
                rows.iter().map(|r| r.iter().map(cell).collect()).collect();
            csv_records(meta, columns, &rows)
        }
        Format::Json => {
            let records: Vec<Value> = rows
                .iter()
                .map(|r| Value::Object(columns.iter().cloned().zip(r.iter().cloned()).collect()))
                .collect();
            let meta: serde_json::Map<String, Value> = meta
                .iter()
                .map(|(k, v)| (k.clone(), Value::from(v.clone())))
                .collect();
            let mut s = serde_json::to_string_pretty(&json!({ "meta": meta, "rows": records }))
                .expect("serializes");
            s.push('\n');
            s
        }
        Format::Text => {
            let cells: Vec<Vec<String>> =
                rows.iter().map(|r| r.iter().map(cell).collect()).collect();
            let mut width: Vec<usize> = columns.iter().map(|c| c.len()).collect();
            for r in &cells {
                for (w, c) in width.iter_mut().zip(r) {
                    *w = (*w).max(c.len());
                }
            }
            let mut out = String::new();
            for (k, v) in meta {
                let _ = writeln!(out, "{k}: {v}");
            }
            let line = |r: &[String]| {
                r.iter()
                    .zip(&width)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(columns));
            for r in &cells {
                let _ = writeln!(out, "{}", line(r));
            }
            out
        }
    }
}

/// Writes to `--out` or standard output.
fn emit(g: &Global, body: &str) -> Result<()> {
    match &g.out {
        Some(p) => write_file(p, body.as_bytes()),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn lattice(g: &Global) -> Result<TorusLattice> {
    TorusLattice::new(g.dim(), g.side())
}

pub fn spectrum(g: &Global) -> Result<Outcome> {
    let l = lattice(g)?;
    let spec = SpectrumTable::build(&l)?;
    let d = l.dim();
    let mut columns = vec!["k".to_string(), "mode".to_string()];
    columns.extend((1..=d).map(|a| format!("w_{a}")));
    columns.push("eta".into());
    let rows: Vec<Vec<Value>> = spec
        .sorted_view()
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let mut r = vec![Value::from(k + 1), Value::from(w)];
            let coords = l.coords(l.site_from_flat(w)?)?;
            r.extend(coords.into_iter().map(Value::from));
            r.push(real(spec.eigenvalues()[w]));
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let meta = vec![
        ("n".to_string(), l.side().to_string()),
        ("d".into(), d.to_string()),
    ];
    emit(
        g,
        &render(g.format.unwrap_or(Format::Csv), &meta, &columns, &rows),
    )?;
    Ok(Outcome::Success)
}

pub fn green(g: &Global, extra: &Extra) -> Result<Outcome> {
    let kind = extra.kind.unwrap_or(Kind::ZeroAvg);
    let d = g.dim();
    let table = match kind {
        Kind::Massive => {
            let m2 = g
                .mass
                .ok_or_else(|| Error::Config("--kind massive needs --mass".into()))?;
            massive_green(&lattice(g)?, m2)?
        }
        Kind::ZeroAvg => zero_average_green(&lattice(g)?)?,
        Kind::Dirichlet => {
            let l = lattice(g)?;
            dirichlet_green(&l, &[l.origin()], g.mass.unwrap_or(0.0))?
        }
        Kind::Zd => zd_green_table(d, g.mass.unwrap_or(0.0))?,
    };
    if !table.in_model_scope() {
        eprintln!(
            "warning: {} kernel in d = {d} is outside the model's scope",
            table.kind().label()
        );
    }
    let format = g.format.unwrap_or(Format::Csv);
    let body = if format == Format::Csv {
        kernel_csv(&table, g.side())?
    } else {
        let entries = table.kernel_box(g.side())?;
        let mut columns: Vec<String> = (1..=d).map(|k| format!("dx_{k}")).collect();
        columns.push("value".into());
        let rows: Vec<Vec<Value>> = entries
            .iter()
            .map(|(dx, v)| {
                let mut r: Vec<Value> = dx.iter().map(|&c| Value::from(c)).collect();
                r.push(real(*v));
                r
            })
            .collect();
        let meta = vec![
            ("kind".to_string(), table.kind().label().to_string()),
            (
                "n".into(),
                table.lattice().map_or(g.side(), |l| l.side()).to_string(),
            ),
            ("d".into(), d.to_string()),
            ("m2".into(), format_real(table.kind().mass2())),
            ("convention".into(), CONVENTION_TAG.into()),
        ];
        render(format, &meta, &columns, &rows)
    };
    emit(g, &body)?;
    Ok(Outcome::Success)
}

fn beta(g: &Global) -> Result<f64> {
    g.beta
        .ok_or_else(|| Error::Config("this command needs --beta".into()))
}

pub fn mass(g: &Global) -> Result<Outcome> {
    let l = lattice(g)?;
    let p = ModelParams::new(&l, beta(g)?)?;
    let s = solve_torus_mass(&p)?;
    let mut fields = vec![
        ("m2", real(s.m_squared)),
        ("residual", real(s.residual)),
        ("iterations", Value::from(s.iterations)),
        ("beta", real(p.beta)),
        ("beta_c", real(p.beta_c)),
        ("regime", Value::from(p.regime.to_string())),
    ];
    if p.regime == Regime::LowT {
        fields.push(("low_t_scaling", real(low_t_diagnostic(&p, s.m_squared))));
    }
    let body = match g.format.unwrap_or(Format::Text) {
        Format::Text => fields
            .iter()
            .map(|(k, v)| format!("{k}={}\n", cell(v)))
            .collect(),
        f => {
            let columns: Vec<String> = fields.iter().map(|f| f.0.to_string()).collect();
            let row: Vec<Value> = fields.into_iter().map(|f| f.1).collect();
            if f == Format::Json {
                let obj: serde_json::Map<String, Value> = columns.into_iter().zip(row).collect();
                format!(
                    "{}\n",
                    serde_json::to_string_pretty(&obj).expect("serializes")
                )
            } else {
                render(f, &[], &columns, &[row])
            }
        }
    };
    emit(g, &body)?;
    Ok(Outcome::Success)
}

fn write_tracked(
    dir: &Path,
    name: &str,
    body: &[u8],
    digests: &mut Vec<OutputDigest>,
) -> Result<PathBuf> {
    let p = dir.join(name);
    write_file(&p, body)?;
    digests.push(OutputDigest::of(Path::new(name), body));
    Ok(p)
}

pub fn sample(g: &Global, extra: &Extra, argv: Vec<String>) -> Result<Outcome> {
    let started = now();
    let model = extra.model.unwrap_or(Model::ZeroAvg);
    let l = lattice(g)?;
    let seed = g.seed();
    let count = g.chains.unwrap_or(1).max(1);
    let components = g.components.unwrap_or(1);
    let sweeps = g.sweeps.unwrap_or(1000);
    let burn = g.burnin.unwrap_or(sweeps / 10);
    let mut params: BTreeMap<String, Value> = BTreeMap::new();
    params.insert("dim".into(), Value::from(l.dim()));
    params.insert("side".into(), Value::from(l.side()));
    params.insert("count".into(), Value::from(count));
    let (samples, diagnostics, used_sweeps): (Vec<FieldSample>, Vec<ChainDiagnostics>, u64) =
        match model {
            Model::Massive | Model::ZeroAvg => {
                let sampler = if model == Model::Massive {
                    let m2 = g
                        .mass
                        .ok_or_else(|| Error::Config("--model massive needs --mass".into()))?;
                    params.insert("mass2".into(), real(m2));
                    GffSampler::massive(&l, m2)?
                } else {
                    GffSampler::zero_average(&l)?
                };
                params.insert("components".into(), Value::from(components));
                let s = (0..count as u64)
                    .into_par_iter()
                    .map(|i| sampler.sample(components, seed, i))
                    .collect::<Result<Vec<_>>>()?;
                (s, Vec::new(), 0)
            }
            Model::Spherical => {
                let p = ModelParams::new(&l, beta(g)?)?;
                params.insert("beta".into(), real(p.beta));
                params.insert("burn_in".into(), Value::from(burn));
                let runs = (0..count as u64)
                    .into_par_iter()
                    .map(|i| SphericalRun::run(&p, sweeps, Some(burn), seed, i, &[]))
                    .collect::<Result<Vec<_>>>()?;
                let (s, d) = runs.into_iter().map(|r| (r.sample, r.diagnostics)).unzip();
                (s, d, sweeps)
            }
            Model::Spin => {
                let p = ModelParams::new(&l, beta(g)?)?;
                let n = g
                    .spin_n
                    .as_ref()
                    .and_then(|v| v.first().copied())
                    .unwrap_or(3);
                params.insert("beta".into(), real(p.beta));
                params.insert("spin_n".into(), Value::from(n));
                params.insert("components".into(), Value::from(components));
                params.insert("burn_in".into(), Value::from(burn));
                let runs = (0..count as u64)
                    .into_par_iter()
                    .map(|i| {
                        let opts = SpinRunOptions {
                            project_to: components,
                            ..SpinRunOptions::new(sweeps, Some(burn), seed, i)
                        };
                        SpinRun::run(&p, n, &opts)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (s, d) = runs.into_iter().map(|r| (r.sample, r.diagnostics)).unzip();
                (s, d, sweeps)
            }
        };
    let law = samples[0].law;
    let format = g.format.unwrap_or(Format::Csv);
    let dump = match format {
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&samples).expect("serializes")
        ),
        _ => samples_csv(&samples),
    };
    let Some(dir) = &g.out else {
        print!("{dump}");
        return Ok(Outcome::Success);
    };
    let mut sample_manifest = SampleManifest::new(law, params, seed, used_sweeps);
    sample_manifest.diagnostics = diagnostics;
    let mut digests = Vec::new();
    let ext = if format == Format::Json {
        "json"
    } else {
        "csv"
    };
    write_tracked(
        dir,
        &format!("samples.{ext}"),
        dump.as_bytes(),
        &mut digests,
    )?;
    let body = format!(
        "{}\n",
        serde_json::to_string_pretty(&sample_manifest).expect("serializes")
    );
    write_tracked(dir, "samples.manifest.json", body.as_bytes(), &mut digests)?;
    let mut run = RunManifest::new(argv, seed, started);
    run.config = g.to_map(extra);
    for s in &samples {
        let p = &s.provenance;
        run.streams
            .insert(format!("{}/{}", p.stream, p.index), p.seed);
    }
    run.outputs = digests;
    run.finished = now();
    write_manifest(&dir.join("manifest.json"), &run)?;
    Ok(Outcome::Success)
}

fn experiment_config(g: &Global) -> ExperimentConfig {
    ExperimentConfig {
        seed: g.seed(),
        dim: g.dim,
        sides: g.side.clone(),
        beta: g.beta,
        spin_n: g.spin_n.clone(),
        components: g.components,
        chains: g.chains,
        sweeps: g.sweeps,
        burn_in: g.burnin,
        samples: g.samples,
    }
}

fn summary(r: &ExperimentReport) -> String {
    let failed = r.failures().count();
    let inconclusive = r
        .rows
        .iter()
        .filter(|x| x.verdict == Verdict::Inconclusive)
        .count();
    let gated = r
        .rows
        .iter()
        .filter(|x| x.verdict != Verdict::Recorded)
        .count();
    format!(
        "{}: {} ({gated} gates, {failed} failed, {inconclusive} inconclusive)",
        r.id,
        r.status().label()
    )
}

pub fn verify(g: &Global, extra: &Extra, experiment: &str, argv: Vec<String>) -> Result<Outcome> {
    let started = now();
    let ids: Vec<String> = if experiment == "all" {
        experiment_ids().into_iter().map(String::from).collect()
    } else {
        vec![experiment.to_string()]
    };
    let cfg = experiment_config(g);
    let formats: Vec<ReportFormat> = match g.format {
        Some(f) => vec![f.into()],
        None if g.out.is_some() => vec![ReportFormat::Json, ReportFormat::Text, ReportFormat::Csv],
        None => vec![ReportFormat::Text],
    };
    let mut digests = Vec::new();
    let mut failed = false;
    let mut lines = Vec::new();
    for id in &ids {
        let clock = std::time::Instant::now();
        let report = run_experiment(id, &cfg)?;
        failed |= report.status() == Verdict::Fail;
        let line = summary(&report);
        eprintln!("{line} [{:.1} s]", clock.elapsed().as_secs_f64());
        lines.push(line);
        match &g.out {
            Some(dir) => {
                let mut files: BTreeMap<String, String> = BTreeMap::new();
                for &f in &formats {
                    files.extend(render_report(&report, f));
                }
                for (name, body) in &files {
                    write_tracked(dir, name, body.as_bytes(), &mut digests)?;
                }
            }
            // the main report file comes first; tables need --out
            None => {
                for &f in &formats {
                    print!("{}", render_report(&report, f).swap_remove(0).1);
                }
            }
        }
    }
    if let Some(dir) = &g.out {
        let mut summary_text = lines.join("\n");
        summary_text.push('\n');
        write_tracked(dir, "summary.txt", summary_text.as_bytes(), &mut digests)?;
        let mut run = RunManifest::new(argv, cfg.seed, started);
        run.config = g.to_map(extra);
        for id in &ids {
            run.streams.insert(id.clone(), cfg.seed);
        }
        run.outputs = digests;
        run.finished = now();
        write_manifest(&dir.join("manifest.json"), &run)?;
    }
    Ok(if failed {
        Outcome::GateFailure
    } else {
        Outcome::Success
    })
}
