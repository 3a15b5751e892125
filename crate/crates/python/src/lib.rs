//! Python bindings. Heavy calls release the GIL; results come back as plain
//! lists, dicts and JSON strings.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use torusgff_core::experiments::{experiment_ids, run_experiment, ExperimentConfig};
use torusgff_core::greens::{
    dirichlet_green, massive_green, zd_green_table, zero_average_green, GreenTable,
};
use torusgff_core::io::report_json;
use torusgff_core::mass::{beta_critical_cached, solve_torus_mass, ModelParams};
use torusgff_core::samplers::{FieldSample, GffSampler, SphericalRun, SpinRun, SpinRunOptions};
use torusgff_core::spectral::SpectrumTable;
use torusgff_core::{Error, TorusLattice};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Laplacian eigenvalues in nondecreasing order.
#[pyfunction]
fn spectrum(py: Python<'_>, dim: usize, side: usize) -> PyResult<Vec<f64>> {
    py.detach(|| {
        let l = TorusLattice::new(dim, side)?;
        Ok(SpectrumTable::build(&l)?.sorted_eigenvalues())
    })
    .map_err(py_err)
}

/// Critical inverse temperature; infinite for `dim <= 2`.
#[pyfunction]
fn beta_critical(py: Python<'_>, dim: usize) -> PyResult<f64> {
    py.detach(|| beta_critical_cached(dim)).map_err(py_err)
}

/// `(offset, G(0, offset))` pairs over the canonical box of the given side.
#[pyfunction]
#[pyo3(signature = (dim, side, kind = "zero-avg", mass = None))]
fn green(
    py: Python<'_>,
    dim: usize,
    side: usize,
    kind: &str,
    mass: Option<f64>,
) -> PyResult<Vec<(Vec<i64>, f64)>> {
    let kind = kind.to_string();
    py.detach(move || -> Result<_, Error> {
        let table: GreenTable = match kind.as_str() {
            "massive" => {
                let m2 = mass.ok_or_else(|| Error::Config("kind 'massive' needs mass".into()))?;
                massive_green(&TorusLattice::new(dim, side)?, m2)?
            }
            "zero-avg" => zero_average_green(&TorusLattice::new(dim, side)?)?,
            "dirichlet" => {
                let l = TorusLattice::new(dim, side)?;
                dirichlet_green(&l, &[l.origin()], mass.unwrap_or(0.0))?
            }
            "zd" => zd_green_table(dim, mass.unwrap_or(0.0))?,
            other => return Err(Error::Config(format!("unknown kind '{other}'"))),
        };
        table.kernel_box(side)
    })
    .map_err(py_err)
}

/// Solves the torus mass equation; returns `m2`, `residual`, `iterations`,
/// `beta_c` and `regime`.
#[pyfunction]
fn solve_mass<'py>(
    py: Python<'py>,
    dim: usize,
    side: usize,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let (p, s) = py
        .detach(|| -> Result<_, Error> {
            let p = ModelParams::new(&TorusLattice::new(dim, side)?, beta)?;
            let s = solve_torus_mass(&p)?;
            Ok((p, s))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("m2", s.m_squared)?;
    out.set_item("residual", s.residual)?;
    out.set_item("iterations", s.iterations)?;
    out.set_item("beta_c", p.beta_c)?;
    out.set_item("regime", format!("{:?}", p.regime))?;
    Ok(out)
}

/// Draws `count` independent samples; each is a flat list with components
/// fastest. MCMC models report the state after `sweeps` sweeps.
#[pyfunction]
#[pyo3(signature = (model, dim, side, beta = None, mass = None, spin_n = 3, components = 1, count = 1, sweeps = 1000, burn_in = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn sample(
    py: Python<'_>,
    model: &str,
    dim: usize,
    side: usize,
    beta: Option<f64>,
    mass: Option<f64>,
    spin_n: usize,
    components: usize,
    count: usize,
    sweeps: u64,
    burn_in: Option<u64>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let model = model.to_string();
    py.detach(move || -> Result<_, Error> {
        let l = TorusLattice::new(dim, side)?;
        let need_beta = || beta.ok_or_else(|| Error::Config(format!("model '{model}' needs beta")));
        let draws: Vec<FieldSample> = match model.as_str() {
            "massive" | "zero-avg" => {
                let sampler = if model == "massive" {
                    let m2 =
                        mass.ok_or_else(|| Error::Config("model 'massive' needs mass".into()))?;
                    GffSampler::massive(&l, m2)?
                } else {
                    GffSampler::zero_average(&l)?
                };
                (0..count as u64)
                    .map(|i| sampler.sample(components, seed, i))
                    .collect::<Result<_, _>>()?
            }
            "spherical" => {
                let p = ModelParams::new(&l, need_beta()?)?;
                (0..count as u64)
                    .map(|i| SphericalRun::run(&p, sweeps, burn_in, seed, i, &[]).map(|r| r.sample))
                    .collect::<Result<_, _>>()?
            }
            "spin" => {
                let p = ModelParams::new(&l, need_beta()?)?;
                (0..count as u64)
                    .map(|i| {
                        let opts = SpinRunOptions {
                            project_to: components,
                            ..SpinRunOptions::new(sweeps, burn_in, seed, i)
                        };
                        SpinRun::run(&p, spin_n, &opts).map(|r| r.sample)
                    })
                    .collect::<Result<_, _>>()?
            }
            other => return Err(Error::Config(format!("unknown model '{other}'"))),
        };
        Ok(draws.into_iter().map(|s| s.values).collect())
    })
    .map_err(py_err)
}

/// Runs one verification experiment and returns its JSON report.
#[pyfunction]
#[pyo3(signature = (experiment, seed = 0))]
fn verify(py: Python<'_>, experiment: &str, seed: u64) -> PyResult<String> {
    let id = experiment.to_string();
    py.detach(move || {
        run_experiment(&id, &ExperimentConfig::with_seed(seed)).map(|r| report_json(&r))
    })
    .map_err(py_err)
}

/// Registered experiment ids.
#[pyfunction]
fn experiments() -> Vec<&'static str> {
    experiment_ids()
}

#[pymodule]
fn torusgff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(beta_critical, m)?)?;
    m.add_function(wrap_pyfunction!(green, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mass, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(experiments, m)?)?;
    Ok(())
}
