use std::f64::consts::PI;

use torusgff_core::analysis::stats::{chain_mean, chi_square_test, iid_mean};
use torusgff_core::greens::dirichlet::harmonic_extension;
use torusgff_core::greens::{massive_green, zero_average_green};
use torusgff_core::mass::ModelParams;
use torusgff_core::rng::stream;
use torusgff_core::samplers::vmf::{sample_vmf_cosine, sample_von_mises};
use torusgff_core::samplers::{
    sample_massive_gff, sample_zero_avg_gff, GffSampler, SphericalRun, SpinRun, SpinRunOptions,
};
use torusgff_core::{SiteIndex, TorusLattice};

fn within(a: f64, b: f64, se: f64) -> bool {
    (a - b).abs() < 4.0 * se
}

#[test]
fn massive_gff_covariances_match_green_table() {
    let l = TorusLattice::new(3, 8).unwrap();
    let g = massive_green(&l, 1.0).unwrap();
    let e = l.unit(0);
    let s = GffSampler::massive(&l, 1.0).unwrap();
    let mut r = stream(11, "test-gff", 0);
    let (mut v0, mut c0e) = (Vec::new(), Vec::new());
    for _ in 0..10_000 {
        let f = s.draw(&mut r);
        v0.push(f[0] * f[0]);
        c0e.push(f[0] * f[e.flat()]);
    }
    let var = iid_mean("phi0^2", &v0);
    let cov = iid_mean("phi0*phie", &c0e);
    assert!(within(
        var.value,
        g.value(l.origin(), l.origin()).unwrap(),
        var.std_error
    ));
    assert!(within(
        cov.value,
        g.value(l.origin(), e).unwrap(),
        cov.std_error
    ));
}

#[test]
fn vector_components_are_uncorrelated() {
    let l = TorusLattice::new(2, 4).unwrap();
    let cross: Vec<f64> = (0..5000)
        .map(|i| {
            let s = sample_massive_gff(&l, 0.5, 3, 12, i).unwrap();
            s.value(0, 0) * s.value(0, 2)
        })
        .collect();
    let est = iid_mean("cross", &cross);
    assert!(within(est.value, 0.0, est.std_error));
}

#[test]
fn zero_average_gff_variance_and_norm_concentration() {
    let l = TorusLattice::new(3, 8).unwrap();
    let g = zero_average_green(&l).unwrap();
    let g00 = g.value(l.origin(), l.origin()).unwrap();
    let mut sq = Vec::new();
    let mut norms8 = Vec::new();
    for i in 0..4000 {
        let s = sample_zero_avg_gff(&l, None, 13, i).unwrap();
        let total: f64 = s.values.iter().sum();
        assert!(total.abs() < 1e-9 * (l.volume() as f64).sqrt());
        sq.push(s.values[0] * s.values[0]);
        norms8.push(s.values.iter().map(|v| v * v).sum::<f64>() / l.volume() as f64);
    }
    let est = iid_mean("gamma0^2", &sq);
    assert!(within(est.value, g00, est.std_error));
    let l16 = TorusLattice::new(3, 16).unwrap();
    let norms16: Vec<f64> = (0..1000)
        .map(|i| {
            let s = sample_zero_avg_gff(&l16, None, 14, i).unwrap();
            s.values.iter().map(|v| v * v).sum::<f64>() / l16.volume() as f64
        })
        .collect();
    let sd = |v: &[f64]| torusgff_core::numeric::mean_var(v).1.sqrt();
    assert!(sd(&norms16) < sd(&norms8));
}

#[test]
fn constant_shift_is_tagged() {
    let l = TorusLattice::new(3, 4).unwrap();
    let s = sample_zero_avg_gff(&l, Some(0.25), 1, 0).unwrap();
    let mean = s.values.iter().sum::<f64>() / l.volume() as f64;
    assert!((mean - 0.25).abs() < 1e-12);
    assert!(matches!(
        s.law,
        torusgff_core::samplers::LawTag::ZeroAvgPlusConstant { .. }
    ));
}

#[test]
fn domain_markov_property() {
    let l = TorusLattice::new(2, 6).unwrap();
    let k: Vec<SiteIndex> = [[0, 0], [0, 1], [1, 0], [3, 3]]
        .iter()
        .map(|c| l.site(c).unwrap())
        .collect();
    let off = l.site(&[2, 4]).unwrap().flat();
    let s = GffSampler::massive(&l, 1.0).unwrap();
    let mut r = stream(15, "test-markov", 0);
    let mut prods = vec![Vec::new(); k.len()];
    for _ in 0..20_000 {
        let f = s.draw(&mut r);
        let vals: Vec<f64> = k.iter().map(|x| f[x.flat()]).collect();
        let h = harmonic_extension(&l, &[], 1.0, &k, &vals).unwrap();
        let resid = f[off] - h[off];
        for (p, v) in prods.iter_mut().zip(&vals) {
            p.push(resid * v);
        }
    }
    for p in &prods {
        let est = iid_mean("cov", p);
        assert!(within(est.value, 0.0, est.std_error), "{est:?}");
    }
}

#[test]
fn von_mises_goodness_of_fit() {
    let kappa = 2.5;
    let bins = 50;
    let draws = 100_000;
    let mut r = stream(16, "test-vm", 0);
    let mut counts = vec![0u64; bins];
    for _ in 0..draws {
        let t = sample_von_mises(&mut r, 0.0, kappa).rem_euclid(2.0 * PI);
        counts[((t / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    // bin masses by Simpson's rule on the unnormalized density
    let dens = |t: f64| (kappa * t.cos()).exp();
    let width = 2.0 * PI / bins as f64;
    let mass: Vec<f64> = (0..bins)
        .map(|b| {
            let a = b as f64 * width;
            let steps = 64;
            let h = width / steps as f64;
            (0..=steps)
                .map(|i| {
                    let w = if i == 0 || i == steps {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * dens(a + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        })
        .collect();
    let total: f64 = mass.iter().sum();
    let expected: Vec<f64> = mass.iter().map(|m| m / total * draws as f64).collect();
    let (_, p) = chi_square_test(&counts, &expected);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn vmf_three_dimensional_cosine_matches_inverse_cdf() {
    // on S², w = x·μ has distribution function (e^{κw} - e^{-κ}) / (e^{κ} - e^{-κ})
    let kappa = 3.0;
    let bins = 40;
    let draws = 100_000;
    let mut r = stream(17, "test-vmf3", 0);
    let cdf = |w: f64| ((kappa * w).exp() - (-kappa).exp()) / (kappa.exp() - (-kappa).exp());
    // bins of equal probability from the inverse distribution function
    let inv = |p: f64| ((-kappa).exp() + p * (kappa.exp() - (-kappa).exp())).ln() / kappa;
    let edges: Vec<f64> = (0..=bins).map(|i| inv(i as f64 / bins as f64)).collect();
    assert!((cdf(edges[bins / 2]) - 0.5).abs() < 1e-12);
    let mut counts = vec![0u64; bins];
    for _ in 0..draws {
        let w = sample_vmf_cosine(&mut r, 3, kappa);
        let b = edges.partition_point(|&e| e <= w).clamp(1, bins) - 1;
        counts[b] += 1;
    }
    let expected = vec![draws as f64 / bins as f64; bins];
    let (_, p) = chi_square_test(&counts, &expected);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn spherical_second_moment_is_one() {
    for (d, n, beta) in [(2, 4, 0.5), (3, 4, 0.2), (3, 4, 0.4)] {
        let l = TorusLattice::new(d, n).unwrap();
        let p = ModelParams::new(&l, beta).unwrap();
        let runs: Vec<Vec<f64>> = (0..4)
            .map(|i| SphericalRun::run(&p, 4000, Some(400), 21, i, &[0]).unwrap())
            .map(|r| r.sites[0].iter().map(|t| t * t).collect())
            .collect();
        let est = chain_mean("theta0^2", &runs);
        assert!(
            within(est.value, 1.0, est.std_error),
            "{d} {n} {beta} {est:?}"
        );
    }
}

#[test]
fn spherical_sites_are_exchangeable() {
    let l = TorusLattice::new(2, 4).unwrap();
    let p = ModelParams::new(&l, 0.5).unwrap();
    let sites = [0, 3, 6, 9, 13];
    let runs: Vec<_> = (0..4)
        .map(|i| SphericalRun::run(&p, 6000, Some(500), 22, i, &sites).unwrap())
        .collect();
    let ests: Vec<_> = (0..sites.len())
        .map(|k| {
            let chains: Vec<Vec<f64>> = runs
                .iter()
                .map(|r| r.sites[k].iter().map(|t| t.powi(4)).collect())
                .collect();
            chain_mean("theta^4", &chains)
        })
        .collect();
    for a in &ests {
        for b in &ests {
            let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            assert!(within(a.value, b.value, se), "{a:?} {b:?}");
        }
    }
}

#[test]
fn spin_coordinate_variance_approaches_one_with_mass_prediction() {
    let l = TorusLattice::new(3, 4).unwrap();
    let p = ModelParams::new(&l, 0.2).unwrap();
    let est = |n: usize| {
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                let opts = SpinRunOptions {
                    record_sites: vec![0],
                    ..SpinRunOptions::new(1500, Some(150), 23, i)
                };
                SpinRun::run(&p, n, &opts).unwrap()
            })
            .map(|r| r.sites[0].iter().map(|s| s * s).collect())
            .collect();
        chain_mean("S0^2", &chains)
    };
    for n in [16, 64] {
        let e = est(n);
        assert!(within(e.value, 1.0, e.std_error), "N={n} {e:?}");
    }
}
