//! Birthdate support, sampling and the smoothed at-risk indicator.

use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recurrent_core::augment::{birthdate_support, cohort_units, sample_birthdates_seeded, smoothed_at_risk, AugmentConfig};
use recurrent_core::data::{
    at_risk, censoring_interval, completed_years, CohortDataset, CovariateScheme, Decade, ExtractionWindow, Region, Sex, SubjectRecord, Visit,
    Windows,
};

const CAP: u32 = 18;

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn window() -> ExtractionWindow {
    ExtractionWindow::new(Decade::Early, date("2002-04-01"), date("2010-03-31")).unwrap()
}

/// A subject born on a random day who visits at least once inside the
/// window before turning `CAP`.
fn subject(seed: u64, with_birthdate: bool) -> Option<SubjectRecord> {
    let w = window();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (w.right - w.left).num_days();
    let birth = w.left - Days::new(rng.random_range(0..(CAP as u64 * 365))) + Days::new(rng.random_range(0..span as u64));
    let iv = censoring_interval(&w, birth, CAP).ok()?;
    let n = rng.random_range(1..=4);
    let mut events: Vec<Visit> = (0..n)
        .filter_map(|_| {
            let age = rng.random_range(iv.left..iv.right);
            let d = birth + Days::new((age * 365.25) as u64);
            (w.contains(d) && d > birth).then(|| Visit { date: d, age_years: completed_years(birth, d) as u32 })
        })
        .filter(|v| v.age_years < CAP)
        .collect();
    events.sort_by_key(|v| v.date);
    if events.is_empty() {
        return None;
    }
    Some(SubjectRecord {
        id: format!("s{seed}"),
        sex: Sex::ALL[rng.random_range(0..2)],
        region: Region::ALL[rng.random_range(0..3)],
        decade: Decade::Early,
        birthdate: with_birthdate.then_some(birth),
        events,
    })
}

fn true_birthdate(seed: u64) -> Option<NaiveDate> {
    subject(seed, true).and_then(|s| s.birthdate)
}

/// `E Ỹ(u)` by enumerating every admissible day.
fn exact_mean(s: &SubjectRecord, u: f64) -> f64 {
    let w = window();
    let supp = birthdate_support(s, &w, CAP).unwrap();
    let mut hits = 0usize;
    let mut total = 0usize;
    for &(lo, hi) in &supp.intervals {
        let mut d = lo + Days::new(1);
        while d <= hi {
            total += 1;
            if censoring_interval(&w, d, CAP).is_ok_and(|iv| iv.contains(u)) {
                hits += 1;
            }
            d = d + Days::new(1);
        }
    }
    hits as f64 / total as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn support_contains_the_true_birthdate(seed in any::<u64>()) {
        let Some(s) = subject(seed, false) else { return Ok(()) };
        let b = true_birthdate(seed).unwrap();
        let supp = birthdate_support(&s, &window(), CAP).unwrap();
        prop_assert!(supp.contains(b), "{} not in {:?}", b, supp.intervals);
        let draws = sample_birthdates_seeded(&supp, 50, seed).unwrap();
        prop_assert!(draws.iter().all(|d| supp.contains(*d)));
    }

    #[test]
    fn smoothed_indicator_is_a_probability(seed in any::<u64>(), u in 0.01f64..17.99) {
        let Some(s) = subject(seed, false) else { return Ok(()) };
        let supp = birthdate_support(&s, &window(), CAP).unwrap();
        let draws = sample_birthdates_seeded(&supp, 100, seed).unwrap();
        let y = smoothed_at_risk(&window(), &draws, u, CAP).unwrap();
        prop_assert!((0.0..=1.0).contains(&y));
    }

    #[test]
    fn known_birthdate_gives_the_indicator(seed in any::<u64>(), u in 0.01f64..17.99) {
        let Some(b) = true_birthdate(seed) else { return Ok(()) };
        let iv = censoring_interval(&window(), b, CAP).unwrap();
        let y = smoothed_at_risk(&window(), &[b], u, CAP).unwrap();
        prop_assert_eq!(y, f64::from(u8::from(at_risk(&iv, u, CAP).unwrap())));
    }

    /// `{u : Y(u) = 1}` is one interval.
    #[test]
    fn at_risk_set_is_an_interval(seed in any::<u64>()) {
        let Some(b) = true_birthdate(seed) else { return Ok(()) };
        let iv = censoring_interval(&window(), b, CAP).unwrap();
        let flags: Vec<bool> = (1..1800).map(|i| at_risk(&iv, i as f64 / 100.0, CAP).unwrap()).collect();
        let switches = flags.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(switches <= 2);
        prop_assert!(flags.iter().any(|&f| f));
    }
}

#[test]
fn smoothed_indicator_converges() {
    let k = 2_000;
    let bound = 3.0 / (k as f64).sqrt();
    let mut checked = 0;
    for seed in 0..12u64 {
        let Some(s) = subject(seed, false) else { continue };
        let supp = birthdate_support(&s, &window(), CAP).unwrap();
        let draws = sample_birthdates_seeded(&supp, k, seed).unwrap();
        let sup = (1..=20)
            .map(|i| {
                let u = 0.05 + 17.9 * i as f64 / 21.0;
                (smoothed_at_risk(&window(), &draws, u, CAP).unwrap() - exact_mean(&s, u)).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup < bound, "seed {seed}: sup error {sup} ≥ {bound}");
        checked += 1;
    }
    assert!(checked >= 8);
}

#[test]
fn pseudo_copies_carry_weight_one_over_k() {
    let subjects: Vec<SubjectRecord> = (0..40).filter_map(|s| subject(s, s % 2 == 0)).collect();
    let known = subjects.iter().filter(|s| s.birthdate.is_some()).count();
    let data = CohortDataset::with_age_cap(subjects, Windows::new([window()]).unwrap(), CAP).unwrap();
    let cfg = AugmentConfig { k: 25, seed: 9 };
    let units = cohort_units::<f64>(&data, CovariateScheme::SexRegion, &cfg).unwrap();
    assert_eq!(units.len(), data.subjects().len());
    for (unit, s) in units.iter().zip(data.subjects()) {
        let total: f64 = unit.segments.iter().map(|g| g.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        if s.birthdate.is_some() {
            assert_eq!(unit.segments.len(), 1);
            assert_eq!(unit.events.len(), s.events.len());
        } else {
            assert_eq!(unit.segments.len(), 25);
            assert!(unit.segments.iter().all(|g| g.weight == 1.0 / 25.0));
            assert_eq!(unit.events.len(), 25 * s.events.len());
        }
    }
    assert!(known > 0);

    // same seed, same units
    let again = cohort_units::<f64>(&data, CovariateScheme::SexRegion, &cfg).unwrap();
    assert_eq!(units, again);
}
