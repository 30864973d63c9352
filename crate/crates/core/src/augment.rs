//! Missing-birthdate handling: the birthdate support implied by recorded
//! visit ages, uniform Monte Carlo draws over it, and the smoothed at-risk
//! process. [`cohort_units`] turns a cohort into estimation units, using
//! the known birthdate when present (Approach A) and `K` weighted
//! pseudo-copies otherwise (Approach B).

use chrono::{Days, NaiveDate};
use rand::Rng;
use rayon::prelude::*;

use crate::data::{censoring_interval, encode, shift_years, years_between, CohortDataset, CovariateScheme, ExtractionWindow, SubjectRecord};
use crate::design::{Mark, Segment, Unit};
use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::Scalar;

/// Union of left-open date intervals `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BirthdateSupport {
    pub intervals: Vec<(NaiveDate, NaiveDate)>,
}

impl BirthdateSupport {
    /// Number of admissible days.
    pub fn days(&self) -> i64 {
        self.intervals.iter().map(|(lo, hi)| (*hi - *lo).num_days()).sum()
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo < d && d <= hi)
    }
}

/// `(W_L − cap, W_R] ∩ ⋂_j (T_j − (A_j + 1)y, T_j − A_j y]`.
pub fn birthdate_support(s: &SubjectRecord, w: &ExtractionWindow, age_cap: u32) -> Result<BirthdateSupport> {
    if s.events.is_empty() {
        return Err(Error::Precondition(format!("subject {} has no visits", s.id)));
    }
    let mut lo = shift_years(w.left, -(age_cap as i32));
    let mut hi = w.right;
    for v in &s.events {
        let a = v.age_years as i32;
        lo = lo.max(shift_years(v.date, -(a + 1)));
        hi = hi.min(shift_years(v.date, -a));
    }
    if lo >= hi {
        return Err(Error::InconsistentRecord { subject: s.id.clone() });
    }
    Ok(BirthdateSupport { intervals: vec![(lo, hi)] })
}

/// `k` i.i.d. uniform days from the support.
pub fn sample_birthdates<R: Rng + ?Sized>(supp: &BirthdateSupport, k: usize, rng: &mut R) -> Result<Vec<NaiveDate>> {
    let total = supp.days();
    if k == 0 || total <= 0 {
        return Err(Error::Precondition("need k ≥ 1 and a non-empty support".into()));
    }
    Ok((0..k)
        .map(|_| {
            let mut off = rng.random_range(0..total);
            for &(lo, hi) in &supp.intervals {
                let len = (hi - lo).num_days();
                if off < len {
                    return lo + Days::new(off as u64 + 1);
                }
                off -= len;
            }
            unreachable!("offset below total support length")
        })
        .collect())
}

/// [`sample_birthdates`] with a generator seeded from `seed`.
pub fn sample_birthdates_seeded(supp: &BirthdateSupport, k: usize, seed: u64) -> Result<Vec<NaiveDate>> {
    sample_birthdates(supp, k, &mut stream_rng(seed, 0))
}

/// `Ỹ(u) = Σ_k Y(u | b_k) / K`.
pub fn smoothed_at_risk(w: &ExtractionWindow, samples: &[NaiveDate], u: f64, age_cap: u32) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Precondition("no sampled birthdates".into()));
    }
    let hits = samples
        .iter()
        .filter(|&&b| censoring_interval(w, b, age_cap).is_ok_and(|iv| iv.contains(u)))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentConfig {
    /// Pseudo-copies per subject without a birthdate.
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { k: 100, seed: 0 }
    }
}

fn unit_for<T: Scalar>(w: &ExtractionWindow, b: NaiveDate, v: &[T], visits: &[NaiveDate], weight: T, age_cap: u32, unit: &mut Unit<T>) -> Result<()> {
    let iv = censoring_interval(w, b, age_cap)?;
    let (lo, hi) = (T::of(iv.left), T::of(iv.right));
    unit.segments.push(Segment { lo, hi, v: v.to_vec(), weight });
    for &d in visits {
        let age = T::of(years_between(b, d));
        if lo < age && age <= hi {
            unit.events.push(Mark { age, v: v.to_vec(), weight });
        }
    }
    Ok(())
}

/// One estimation unit per subject, with the stacked `(x, z, xz)` covariates.
/// Subject `i` without a birthdate draws from stream `i` of `cfg.seed`.
pub fn cohort_units<T: Scalar>(data: &CohortDataset, scheme: CovariateScheme, cfg: &AugmentConfig) -> Result<Vec<Unit<T>>> {
    if cfg.k == 0 {
        return Err(Error::Config("augmentation needs k ≥ 1".into()));
    }
    let cap = data.age_cap();
    data.subjects()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let w = data.window_of(s);
            let v: Vec<T> = encode(s, scheme).stacked().into_iter().map(T::of).collect();
            let visits: Vec<NaiveDate> = s.events.iter().map(|e| e.date).collect();
            let mut unit = Unit::default();
            match s.birthdate {
                Some(b) => unit_for(w, b, &v, &visits, T::one(), cap, &mut unit)?,
                None => {
                    let supp = birthdate_support(s, w, cap)?;
                    let draws = sample_birthdates(&supp, cfg.k, &mut stream_rng(cfg.seed, i as u64))?;
                    let weight = T::one() / T::of_usize(cfg.k);
                    for b in draws {
                        unit_for(w, b, &v, &visits, weight, cap, &mut unit)?;
                    }
                }
            }
            Ok(unit)
        })
        .collect()
}
