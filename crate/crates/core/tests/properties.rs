use proptest::prelude::*;

use torusgff_core::greens::{massive_green, zero_average_green};
use torusgff_core::io::{format_real, parse_config};
use torusgff_core::mass::{solve_torus_mass, ModelParams};
use torusgff_core::spectral::HartleyTransform;
use torusgff_core::TorusLattice;

fn lattice() -> impl Strategy<Value = TorusLattice> {
    (1usize..=3, 2usize..=7).prop_map(|(d, n)| TorusLattice::new(d, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_index_round_trips(l in lattice(), seed in any::<u64>()) {
        let flat = (seed as usize) % l.volume();
        let x = l.site_from_flat(flat).unwrap();
        let coords = l.coords(x).unwrap();
        prop_assert_eq!(l.site(&coords).unwrap(), x);
        let lifted = l.canonical_lift(x).unwrap();
        prop_assert_eq!(l.site_wrapping(&lifted).unwrap(), x);
        let n = l.side() as i64;
        prop_assert!(lifted.iter().all(|&c| -n / 2 <= c && c <= n / 2));
    }

    #[test]
    fn transform_is_an_involution(l in lattice(), values in prop::collection::vec(-5.0f64..5.0, 343)) {
        let t = HartleyTransform::new(&l);
        let field = values[..l.volume()].to_vec();
        let back = t.from_modes(&t.to_modes(&field).unwrap()).unwrap();
        for (a, b) in field.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn massive_green_inverts_the_operator(l in lattice(), m2 in 0.01f64..4.0) {
        let g = massive_green(&l, m2).unwrap();
        let d = l.dim() as f64;
        for x in l.sites().take(5) {
            let nb: f64 = l.neighbors(x).unwrap().into_iter().map(|y| g.value(y, l.origin()).unwrap()).sum();
            let delta = if x == l.origin() { 1.0 } else { 0.0 };
            let lhs = (2.0 * d + m2) * g.value(x, l.origin()).unwrap() - nb;
            prop_assert!((lhs - delta).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_average_green_is_symmetric_and_centred(l in lattice()) {
        let g = zero_average_green(&l).unwrap();
        let sum: f64 = l.sites().map(|y| g.value(l.origin(), y).unwrap()).sum();
        prop_assert!(sum.abs() < 1e-10);
        for y in l.sites() {
            let a = g.value(l.origin(), y).unwrap();
            let b = g.value(y, l.origin()).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mass_solution_is_monotone_in_beta(l in lattice(), beta in 0.02f64..2.0) {
        let p1 = ModelParams::new(&l, beta).unwrap();
        let p2 = ModelParams::new(&l, beta * 1.1).unwrap();
        let a = solve_torus_mass(&p1).unwrap();
        let b = solve_torus_mass(&p2).unwrap();
        prop_assert!(a.m_squared > b.m_squared);
        prop_assert!(a.residual <= 1e-12 * beta.max(1.0));
    }

    #[test]
    fn reals_survive_text(x in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(format_real(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn config_values_are_trimmed(key in "[a-z]{1,8}", value in "[a-z0-9.]{1,12}") {
        let text = format!("# comment\n  {key} =  {value}  \n");
        let cfg = parse_config(&text, std::path::Path::new("p.cfg"), &[key.as_str()]).unwrap();
        prop_assert_eq!(cfg.get(&key).map(String::as_str), Some(value.as_str()));
    }
}
