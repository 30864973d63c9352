//! Generator truth, truncation bias, the stratified/combined identity and
//! reproducibility of replicate studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recurrent_core::design::{Design, Unit};
use recurrent_core::model::{fit_design, FitConfig, ModelSpec, Shape, Target};
use recurrent_core::sim::{generate_population, parse_analyses, replicate_study, Setting, SimConfig};

#[test]
fn generated_rates_follow_the_change_point() {
    let cfg = SimConfig { n: 20_000, ..SimConfig::new(Setting::S1Case2) };
    let pop = generate_population(&cfg, 11).unwrap();
    let t = cfg.truth;
    let per_year = t.lambda0 * 6.0;
    // [x][z] events and person-years
    let mut events = [[0.0f64; 2]; 2];
    let mut years = [[0.0f64; 2]; 2];
    for p in &pop.people {
        let z = usize::from(p.z);
        let c = p.change_age.clamp(0.0, 18.0);
        years[0][z] += c;
        years[1][z] += 18.0 - c;
        for &a in &p.events {
            events[usize::from(a > c)][z] += 1.0;
        }
    }
    for x in 0..2 {
        for z in 0..2 {
            let (xf, zf) = (x as f64, z as f64);
            let want = per_year * (t.alpha * xf + t.beta * zf + t.gamma * xf * zf).exp();
            let got = events[x][z] / years[x][z];
            let band = 4.0 * want / events[x][z].sqrt();
            assert!((got - want).abs() < band, "cell ({x}, {z}): {got} vs {want} ± {band}");
        }
    }
}

#[test]
fn zero_truncation_inflates_the_baseline() {
    let cfg = SimConfig { n: 5_000, reps: 4, seed: 3, ..SimConfig::new(Setting::S1Case1) };
    let ids = parse_analyses("A.1.3,B.1.5").unwrap();
    let t = replicate_study(&cfg, &ids).unwrap();
    assert_eq!(t.n_failed(), 0, "{:?}", t.failures);
    let truncated = t.row("A.1.3", "lambda0").unwrap().smean;
    let full = t.row("B.1.5", "lambda0").unwrap().smean;
    assert!((full - cfg.truth.lambda0).abs() < 0.15 * cfg.truth.lambda0, "full-information λ0 {full}");
    assert!(truncated > 1.5 * full, "truncated λ0 {truncated} vs {full}");
}

/// Everyone at risk on the same interval with saturated cell effects: the
/// combined fit reproduces the per-decade fits.
#[test]
fn combined_fit_matches_stratified_fits_on_fixed_risk_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let truth = [[0.5, 0.5 * 0.7f64.exp()], [0.5 * 0.3f64.exp(), 0.5 * 1.15f64.exp()]];
    let mut all = Vec::new();
    let mut strata: [Vec<Unit<f64>>; 2] = [Vec::new(), Vec::new()];
    for i in 0..4_000 {
        let (x, z) = (i % 2, rng.random_range(0..2usize));
        let rate = truth[x][z];
        let mut ages = Vec::new();
        let mut a = 2.0;
        loop {
            a += -rng.random::<f64>().ln() / rate;
            if a > 16.0 {
                break;
            }
            ages.push(a);
        }
        let (xf, zf) = (x as f64, z as f64);
        all.push(Unit::simple(2.0, 16.0, vec![xf, zf, xf * zf], &ages));
        strata[x].push(Unit::simple(2.0, 16.0, vec![xf, zf, xf * zf], &ages));
    }
    let cfg = FitConfig::<f64>::default();
    let spec = ModelSpec::new(Shape::Constant, Shape::Constant, Shape::Constant, Target::Cohort);
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let combined = fit_design(&Design::build(&all).unwrap(), names(&["alpha", "beta", "gamma"]), &[false; 3], spec, &cfg).unwrap();
    let theta = combined.constant.as_ref().unwrap().theta.clone();
    let stratum = |x: usize| {
        let d = Design::build(&strata[x]).unwrap().restricted(&[1], |_, _| 0.0);
        fit_design(&d, names(&["beta"]), &[false], spec, &cfg).unwrap().constant.unwrap().theta[0]
    };
    let (beta_e, beta_l) = (stratum(0), stratum(1));
    assert!((theta[1] - beta_e).abs() < 1e-6, "{} vs {beta_e}", theta[1]);
    assert!((theta[1] + theta[2] - beta_l).abs() < 1e-6, "{} vs {beta_l}", theta[1] + theta[2]);
}

#[test]
fn replicate_studies_are_reproducible_across_thread_counts() {
    let cfg = SimConfig { n: 2_000, reps: 4, seed: 99, ..SimConfig::new(Setting::S2) };
    let ids = parse_analyses("B.2.1..B.2.6").unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| replicate_study(&cfg, &ids).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.rows.len(), many.rows.len());
    for (a, b) in one.rows.iter().zip(&many.rows) {
        for (x, y) in [(a.smean, b.smean), (a.sse, b.sse), (a.ese_a, b.ese_a), (a.ese_b, b.ese_b)] {
            assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()), "{} {}", a.analysis, a.parameter);
        }
    }
    assert_eq!(one.failures, many.failures);
}

#[test]
fn stripping_early_birthdates() {
    let base = SimConfig { n: 3_000, ..SimConfig::new(Setting::S1Case2) };
    let pop = generate_population(&base, 4).unwrap();
    for degrade in [true, false] {
        let cfg = SimConfig { degrade_early: degrade, ..base.clone() };
        let data = recurrent_core::sim::pulled_cohort(&pop, &cfg).unwrap();
        for s in data.subjects() {
            let early = s.decade == recurrent_core::data::Decade::Early;
            assert_eq!(s.birthdate.is_none(), degrade && early);
        }
    }
}
