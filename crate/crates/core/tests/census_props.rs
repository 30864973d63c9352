//! Census-centred estimating functions on instances where the census is the
//! cohort's own at-risk table, so both centrings must agree.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recurrent_core::census::{estimating_function_population, s_moments_census, solve_local_population, CensusTable, CellKey};
use recurrent_core::data::{CovariateScheme, Decade, Region, Sex};
use recurrent_core::design::{Design, Unit};
use recurrent_core::local::{s_moments, solve_local, Degree, Equation, KernelSpec, SolverConfig, Weighting};

const CAP: u32 = 18;
const SCHEME: CovariateScheme = CovariateScheme::SexRegion;

struct Aligned {
    units: Vec<Unit<f64>>,
    census: CensusTable,
}

/// Units at risk on integer intervals with one event stream each; the
/// census counts every unit at risk on `(k, k+1]` at age `k`.
fn aligned(seed: u64, n: usize) -> Aligned {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<(CellKey, u32, u32)> = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    for _ in 0..n {
        let d = Decade::ALL[rng.random_range(0..2)];
        let g = Sex::ALL[rng.random_range(0..2)];
        let r = Region::ALL[rng.random_range(0..3)];
        let lo = rng.random_range(0..10u32);
        let hi = rng.random_range(lo + 3..=CAP);
        let v = SCHEME.encode_cell(d, g, r).stacked();
        let rate = 0.3 * (0.4 * v[0] + 0.3 * v[1] - 0.2 * v[2]).exp();
        let mut ages = Vec::new();
        let mut t = lo as f64;
        loop {
            t += -rng.random::<f64>().ln() / rate;
            if t >= hi as f64 {
                break;
            }
            if t.fract() != 0.0 {
                ages.push(t);
            }
        }
        units.push(Unit::simple(lo as f64, hi as f64, v, &ages));
        cells.push(((d, g, r, 0), lo, hi));
    }
    let census = CensusTable::from_fn(CAP, |(d, g, r, a)| {
        cells.iter().filter(|((cd, cg, cr, _), lo, hi)| (*cd, *cg, *cr) == (d, g, r) && *lo <= a && a < *hi).count() as f64
    })
    .unwrap();
    Aligned { units, census }
}

fn phi(seed: u64, q: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    (0..q).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * (1.0 + y.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn census_score_equals_cohort_score(seed in any::<u64>(), a in 2.0f64..15.0, linear in any::<bool>()) {
        let inst = aligned(seed, 150);
        let design = Design::build(&inst.units).unwrap();
        let degree = if linear { Degree::Linear } else { Degree::Constant };
        let kernel = KernelSpec::epanechnikov(2.0).unwrap();
        let phi = phi(seed, degree.dim(design.p()));
        let Ok(u) = Equation::new(&design, Weighting::Local { a, kernel, degree }).score(&phi) else { return Ok(()) };
        let ut = estimating_function_population(&phi, a, &design, &inst.census, SCHEME, &kernel, degree).unwrap();
        for (x, y) in ut.iter().zip(&u) {
            prop_assert!(close(*x, *y, 1e-12), "{} vs {}", x, y);
        }

        // uniform inflation of the census cancels in S1/S0 and S2/S0
        let big = inst.census.scaled(37.5).unwrap();
        let ub = estimating_function_population(&phi, a, &design, &big, SCHEME, &kernel, degree).unwrap();
        for (x, y) in ub.iter().zip(&ut) {
            prop_assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn census_moments_equal_cohort_moments(seed in any::<u64>(), u in 0.05f64..17.95, a in 2.0f64..15.0) {
        prop_assume!(u.fract() != 0.0);
        let inst = aligned(seed, 80);
        let phi = phi(seed, 14);
        let risk: Vec<(&[f64], f64)> = inst.units.iter().flat_map(|un| un.risk_at(u)).collect();
        prop_assume!(!risk.is_empty());
        let m = s_moments(&phi, u, a, Degree::Linear, risk.iter().copied()).unwrap();
        let mt = s_moments_census(&phi, u, a, Degree::Linear, &inst.census, SCHEME).unwrap();
        prop_assert!(close(mt.s0, m.s0, 1e-12));
        for j in 0..phi.len() {
            prop_assert!(close(mt.s1[j], m.s1[j], 1e-12));
            for l in 0..phi.len() {
                prop_assert!(close(mt.s2[(j, l)], m.s2[(j, l)], 1e-12));
            }
        }
    }

    /// `Π̃ = −∂Ũ/∂φ` by central differences.
    #[test]
    fn census_jacobian_matches_finite_differences(seed in any::<u64>(), a in 3.0f64..14.0) {
        let inst = aligned(seed, 100);
        let design = Design::build(&inst.units).unwrap();
        let pop = inst.census.scaled(3.0).unwrap().population_design(&design, SCHEME, None).unwrap();
        let eq = Equation::new(&pop, Weighting::Local { a, kernel: KernelSpec::epanechnikov(2.5).unwrap(), degree: Degree::Linear });
        let phi = phi(seed, eq.dim());
        let Ok(ev) = eq.evaluate(&phi, false) else { return Ok(()) };
        let eps = 1e-6;
        let q = phi.len();
        let scale = (0..q).map(|j| ev.info[(j, j)].abs()).fold(0.0, f64::max);
        prop_assume!(scale > 1e-8);
        for l in 0..q {
            let (mut up, mut dn) = (phi.clone(), phi.clone());
            up[l] += eps;
            dn[l] -= eps;
            let (su, sd) = (eq.score(&up).unwrap(), eq.score(&dn).unwrap());
            for j in 0..q {
                let fd = -(su[j] - sd[j]) / (2.0 * eps);
                prop_assert!((fd - ev.info[(j, l)]).abs() < 1e-5 * scale, "({}, {}): {} vs {}", j, l, fd, ev.info[(j, l)]);
            }
        }
    }
}

#[test]
fn census_fit_equals_cohort_fit() {
    let kernel = KernelSpec::epanechnikov(2.0).unwrap();
    let cfg = SolverConfig::default();
    let mut compared = 0;
    for seed in 0..6u64 {
        let inst = aligned(seed, 2_000);
        let design = Design::build(&inst.units).unwrap();
        for a in [4.0, 8.5, 13.0] {
            let cohort = solve_local(a, &design, &kernel, Degree::Linear, &cfg, None).unwrap();
            let pop = solve_local_population(a, &design, &inst.census, SCHEME, &kernel, Degree::Linear, &cfg).unwrap();
            assert!(cohort.converged && pop.converged);
            for (x, y) in pop.theta.iter().zip(&cohort.theta) {
                assert!((x - y).abs() < 1e-10, "seed {seed} a {a}: {x} vs {y}");
            }
            compared += 1;
        }
    }
    assert_eq!(compared, 18);
}

#[test]
fn unaligned_census_differs() {
    // a census that ignores late entry no longer reproduces the cohort score
    let inst = aligned(3, 300);
    let design = Design::build(&inst.units).unwrap();
    let flat = CensusTable::from_fn(CAP, |(d, g, r, _)| inst.census.get((d, g, r, 10))).unwrap();
    let kernel = KernelSpec::epanechnikov(2.0).unwrap();
    let phi = phi(3, 14);
    let u = Equation::new(&design, Weighting::Local { a: 3.0, kernel, degree: Degree::Linear }).score(&phi).unwrap();
    let ut = estimating_function_population(&phi, 3.0, &design, &flat, SCHEME, &kernel, Degree::Linear).unwrap();
    assert!(u.iter().zip(&ut).any(|(x, y)| (x - y).abs() > 1e-6));
}
