use super::{
    combined, par_indexed, ExperimentConfig, ExperimentReport, Gate, ReportRow, Source, Table,
};
use crate::analysis::moments::even_moment_bound;
use crate::analysis::stats::{chain_mean, iid_mean, MomentEstimate};
use crate::error::Result;
use crate::greens::{massive_green, zero_average_green, GreenTable};
use crate::lattice::{SiteIndex, TorusLattice};
use crate::mass::ModelParams;
use crate::rng::{derive_seed, stream};
use crate::samplers::spherical::{spherical_exact_tiny, spherical_rejection};
use crate::samplers::{GffSampler, SphericalRun};

const GFF_MASS2: f64 = 0.5;
const TINY_BETA: f64 = 0.6;

/// Offsets probed in covariance checks: origin, one and two steps along
/// the first axis, a diagonal step and the far corner.
fn probe_sites(l: &TorusLattice) -> Result<Vec<(String, SiteIndex)>> {
    let d = l.dim();
    let h = (l.side() / 2) as i64;
    let mut out = Vec::new();
    let mut push = |name: &str, c: Vec<i64>| -> Result<()> {
        out.push((name.to_string(), l.site_wrapping(&c)?));
        Ok(())
    };
    let axis = |k: i64| {
        let mut c = vec![0; d];
        c[0] = k;
        c
    };
    push("0", vec![0; d])?;
    push("e1", axis(1))?;
    push("2e1", axis(2))?;
    if d >= 2 {
        let mut c = axis(1);
        c[1] = 1;
        push("e1+e2", c)?;
    }
    push("corner", vec![h; d])?;
    Ok(out)
}

fn gff_rows(
    rep: &mut ExperimentReport,
    label: &str,
    sampler: &GffSampler,
    table: &GreenTable,
    l: &TorusLattice,
    samples: usize,
    seed: u64,
) -> Result<()> {
    let probes = probe_sites(l)?;
    let tag = format!("exactness-{label}");
    let draws = par_indexed(samples, |i| {
        let f = sampler.draw(&mut stream(seed, &tag, i));
        Ok(probes
            .iter()
            .map(|(_, y)| f[0] * f[y.flat()])
            .collect::<Vec<f64>>())
    })?;
    for (k, (name, y)) in probes.iter().enumerate() {
        let products: Vec<f64> = draws.iter().map(|d| d[k]).collect();
        let est = iid_mean(name, &products);
        let reference = table.value(l.origin(), *y)?;
        rep.push(ReportRow::gated(
            format!("{label} cov(phi_0,phi_{name})"),
            est.value,
            Some(est.std_error),
            reference,
            Source::Derived,
            Gate::Sigma { k: 4.0 },
        ));
    }
    Ok(())
}

struct SphericalMoments {
    label: String,
    first: MomentEstimate,
    second: MomentEstimate,
    neighbor: MomentEstimate,
    fourth: MomentEstimate,
}

fn gibbs_moments(
    d: usize,
    n: usize,
    beta: f64,
    chains: usize,
    sweeps: u64,
    burn: u64,
    seed: u64,
) -> Result<SphericalMoments> {
    let l = TorusLattice::new(d, n)?;
    let p = ModelParams::new(&l, beta)?;
    let e = l.unit(d - 1).flat();
    let runs = par_indexed(chains, |i| {
        SphericalRun::run(&p, sweeps, Some(burn), seed, i, &[0, e])
    })?;
    let series = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Vec<f64>> {
        runs.iter()
            .map(|r| {
                r.sites[0]
                    .iter()
                    .zip(&r.sites[1])
                    .map(|(&a, &b)| f(a, b))
                    .collect()
            })
            .collect()
    };
    Ok(SphericalMoments {
        label: format!("gibbs d={d} n={n} beta={beta}"),
        first: chain_mean("theta_0", &series(&|a, _| a)),
        second: chain_mean("theta_0^2", &series(&|a, _| a * a)),
        neighbor: chain_mean("theta_0*theta_e", &series(&|a, b| a * b)),
        fourth: chain_mean("theta_0^4", &series(&|a, _| a.powi(4))),
    })
}

fn rejection_moments(
    d: usize,
    n: usize,
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<SphericalMoments> {
    let l = TorusLattice::new(d, n)?;
    let p = ModelParams::new(&l, beta)?;
    let e = l.unit(d - 1).flat();
    let (fields, _) = spherical_rejection(&p, samples, seed)?;
    let col = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> { fields.iter().map(|x| f(x)).collect() };
    Ok(SphericalMoments {
        label: format!("rejection d={d} n={n} beta={beta}"),
        first: iid_mean("theta_0", &col(&|x| x[0])),
        second: iid_mean("theta_0^2", &col(&|x| x[0] * x[0])),
        neighbor: iid_mean("theta_0*theta_e", &col(&|x| x[0] * x[e])),
        fourth: iid_mean("theta_0^4", &col(&|x| x[0].powi(4))),
    })
}

fn compare(
    rep: &mut ExperimentReport,
    a: &SphericalMoments,
    oracle: &[MomentEstimate],
    oracle_label: &str,
) {
    let pairs = [&a.first, &a.second, &a.neighbor, &a.fourth];
    for (est, o) in pairs.iter().zip(oracle) {
        rep.push(ReportRow::gated(
            format!("{} - {oracle_label}: {}", a.label, est.observable),
            est.value - o.value,
            Some(combined(est.std_error, o.std_error)),
            0.0,
            Source::Derived,
            Gate::Sigma { k: 4.0 },
        ));
    }
}

fn constraint_rows(rep: &mut ExperimentReport, m: &SphericalMoments) {
    rep.push(ReportRow::gated(
        format!("{} E[theta_0^2]", m.label),
        m.second.value,
        Some(m.second.std_error),
        1.0,
        Source::Exact,
        Gate::Sigma { k: 4.0 },
    ));
    rep.push(ReportRow::gated(
        format!("{} E[theta_0^4] bound", m.label),
        m.fourth.value,
        Some(m.fourth.std_error),
        even_moment_bound(2),
        Source::Exact,
        Gate::AtMost { k: 4.0 },
    ));
}

/// Exact samplers against kernel tables, and the spherical Gibbs chain
/// against an importance-sampling oracle and a rejection sampler.
pub fn exp_sampler_exactness(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new(
        "exp_sampler_exactness",
        "exact GFF samplers and spherical Gibbs chains against independent references",
    );
    let d = cfg.dim.unwrap_or(3);
    let n = cfg.sides(&[8])[0];
    let samples = cfg.samples(10_000);
    let chains = cfg.chains(8);
    let sweeps = cfg.sweeps(20_000);
    let burn = cfg.burn_in(sweeps);
    rep.param("dim", d);
    rep.param("side", n);
    rep.param("gff_mass2", GFF_MASS2);
    rep.param("samples", samples);
    rep.param("chains", chains);
    rep.param("sweeps", sweeps);
    rep.param("burn_in", burn);
    rep.param("seed", cfg.seed);

    let l = TorusLattice::new(d, n)?;
    let massive = GffSampler::massive(&l, GFF_MASS2)?;
    let zero = GffSampler::zero_average(&l)?;
    gff_rows(
        &mut rep,
        "massive",
        &massive,
        &massive_green(&l, GFF_MASS2)?,
        &l,
        samples,
        derive_seed(cfg.seed, "exactness/massive"),
    )?;
    gff_rows(
        &mut rep,
        "zero-avg",
        &zero,
        &zero_average_green(&l)?,
        &l,
        samples,
        derive_seed(cfg.seed, "exactness/zero-avg"),
    )?;

    // four-site torus: Gibbs, rejection and importance sampling
    let tiny_l = TorusLattice::new(2, 2)?;
    let tiny_p = ModelParams::new(&tiny_l, TINY_BETA)?;
    let oracle = spherical_exact_tiny(&tiny_p, 400_000, derive_seed(cfg.seed, "exactness/oracle"))?;
    let mut oracle_table = Table::new("importance_oracle", &["moment", "value", "std_error"]);
    for (k, m) in oracle.moments.iter().enumerate() {
        oracle_table.push(vec![k as f64, m.value, m.std_error]);
    }
    rep.tables.push(oracle_table);
    rep.push(ReportRow::recorded(
        "importance oracle effective draws",
        oracle.ess,
        None,
        None,
        Source::None,
    ));
    let tiny_gibbs = gibbs_moments(
        2,
        2,
        TINY_BETA,
        chains,
        sweeps,
        burn,
        derive_seed(cfg.seed, "exactness/tiny-gibbs"),
    )?;
    let tiny_rej = rejection_moments(
        2,
        2,
        TINY_BETA,
        100_000,
        derive_seed(cfg.seed, "exactness/tiny-rejection"),
    )?;
    compare(&mut rep, &tiny_gibbs, &oracle.moments, "importance");
    compare(&mut rep, &tiny_rej, &oracle.moments, "importance");

    let mut runs = vec![tiny_gibbs, tiny_rej];
    for (k, (dd, nn, beta)) in [(3, 4, 0.2), (3, 4, 0.4), (d, n, 0.5)]
        .into_iter()
        .enumerate()
    {
        runs.push(gibbs_moments(
            dd,
            nn,
            beta,
            chains,
            sweeps,
            burn,
            derive_seed(cfg.seed, &format!("exactness/gibbs-{k}")),
        )?);
    }
    for m in &runs {
        constraint_rows(&mut rep, m);
    }
    Ok(rep)
}
